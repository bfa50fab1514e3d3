from typing import Dict, Type

from app.core.errors import ProblemError

from .base import ProblemInstance, ProblemSuite, ReferenceValue, gap, instance_score, quality_to_gap
from .bpp import BppSuite
from .cvrp import CvrpSuite
from .mis import MisSuite
from .tsp import TspSuite

PROBLEMS: Dict[str, Type[ProblemSuite]] = {
    "tsp": TspSuite,
    "bpp": BppSuite,
    "mis": MisSuite,
    "cvrp": CvrpSuite,
}


def get_problem(kind: str) -> ProblemSuite:
    if kind not in PROBLEMS:
        raise ProblemError(f"Неизвестная задача {kind}", code="unknown_problem")
    return PROBLEMS[kind]()


__all__ = [
    "PROBLEMS",
    "ProblemInstance",
    "ProblemSuite",
    "ReferenceValue",
    "gap",
    "get_problem",
    "instance_score",
    "quality_to_gap",
]
