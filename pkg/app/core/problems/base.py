import json
import logging
import math
import os
from abc import ABC, abstractmethod
from typing import Any, Dict, List, Optional, Tuple

from pydantic import BaseModel, Field

from app.core.errors import ProblemError

logger = logging.getLogger(__name__)

DATA_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.dirname(__file__))), "data", "problems")

# Допуск сравнения вещественных нагрузок и длин
EPS = 1e-9


class ProblemInstance(BaseModel):
    """Экземпляр задачи: вид, идентификатор и JSON-полезная нагрузка"""
    kind: str
    instance_id: str
    size: int
    seed: int
    payload: Dict[str, Any] = Field(default_factory=dict)


class ReferenceValue(BaseModel):
    value: float
    method: str  # brute_force | file | baseline | lower_bound


def gap(objective: float, reference: float, sense: str) -> float:
    """
    Разрыв в процентах относительно эталона.

    Отрицательный разрыв означает, что решение лучше эталона (в обоих смыслах).
    """
    if reference == 0:
        raise ProblemError("Эталонное значение равно нулю", code="zero_reference")
    if sense == "min":
        return (objective - reference) / reference * 100.0
    if sense == "max":
        return (reference - objective) / reference * 100.0
    raise ProblemError(f"Неизвестное направление {sense}", code="schema_mismatch")


def instance_score(objective: float, reference: float, sense: str) -> float:
    """Вклад экземпляра в качество: -разрыв (доля) для min, obj/ref для max"""
    if reference == 0:
        raise ProblemError("Эталонное значение равно нулю", code="zero_reference")
    if sense == "min":
        return -(objective - reference) / reference
    return objective / reference


def quality_to_gap(quality: float, sense: str) -> float:
    """Обратное преобразование среднего качества в средний разрыв, %"""
    if sense == "min":
        return -quality * 100.0
    return (1.0 - quality) * 100.0


def load_sidecar(path: Optional[str]) -> Dict[str, float]:
    if not path or not os.path.exists(path):
        raise ProblemError(f"Файл эталонов не найден: {path}", code="missing_reference_file")
    with open(path, "r", encoding="utf-8") as f:
        data = json.load(f)
    return {str(k): float(v) for k, v in data.items()}


class ProblemSuite(ABC):
    """Базовый класс задачи: генератор, валидатор, целевая функция и эталоны"""

    kind: str = ""
    display_name: str = ""
    alg_type: str = "heuristic"
    sense: str = "min"
    tags: List[str] = []
    entry_point: str = "solve"
    # Максимальный размер для точного перебора
    oracle_limit: int = 0
    min_size: int = 1

    def instance_id(self, size: int, seed: int) -> str:
        return f"{self.kind}-{size}-{seed}"

    def generate(self, size: int, seed: int) -> ProblemInstance:
        if size < self.min_size:
            raise ProblemError(f"{self.kind}: размер {size} меньше {self.min_size}", code="unsupported_size")
        return ProblemInstance(
            kind=self.kind,
            instance_id=self.instance_id(size, seed),
            size=size,
            seed=seed,
            payload=self._generate(size, seed),
        )

    @abstractmethod
    def _generate(self, size: int, seed: int) -> Dict[str, Any]:
        pass

    @abstractmethod
    def validate(self, instance: ProblemInstance, solution: Any) -> Optional[str]:
        """None если решение допустимо, иначе текст нарушения"""
        pass

    @abstractmethod
    def _objective(self, instance: ProblemInstance, solution: Dict[str, Any]) -> float:
        pass

    @abstractmethod
    def brute_force_solution(self, instance: ProblemInstance) -> Tuple[Dict[str, Any], float]:
        pass

    @abstractmethod
    def baseline_solution(self, instance: ProblemInstance) -> Dict[str, Any]:
        pass

    def objective(self, instance: ProblemInstance, solution: Any) -> float:
        violation = self.validate(instance, solution)
        if violation is not None:
            raise ProblemError(violation, code="invalid_solution")
        return self._objective(instance, solution)

    def lower_bound(self, instance: ProblemInstance) -> Optional[float]:
        return None

    def oracle_size(self, instance: ProblemInstance) -> int:
        return instance.size

    def reference(
        self,
        instance: ProblemInstance,
        method: str = "auto",
        sidecar: Optional[str] = None,
    ) -> ReferenceValue:
        """Эталонное значение: brute_force, file, baseline, lower_bound или auto"""
        if method == "brute_force":
            if self.oracle_size(instance) > self.oracle_limit:
                raise ProblemError(
                    f"{instance.instance_id}: размер больше {self.oracle_limit} для перебора",
                    code="size_exceeds_oracle",
                )
            _, value = self.brute_force_solution(instance)
            return ReferenceValue(value=value, method="brute_force")

        if method == "file":
            values = load_sidecar(sidecar)
            if instance.instance_id not in values:
                raise ProblemError(
                    f"В файле эталонов нет {instance.instance_id}", code="missing_reference_file"
                )
            return ReferenceValue(value=values[instance.instance_id], method="file")

        if method == "lower_bound":
            bound = self.lower_bound(instance)
            if bound is None:
                raise ProblemError(f"{self.kind}: нижняя оценка не определена", code="schema_mismatch")
            return ReferenceValue(value=bound, method="lower_bound")

        if method == "baseline":
            solution = self.baseline_solution(instance)
            return ReferenceValue(value=self._objective(instance, solution), method="baseline")

        if method == "auto":
            if self.oracle_size(instance) <= self.oracle_limit:
                return self.reference(instance, "brute_force")
            if sidecar and os.path.exists(sidecar):
                values = load_sidecar(sidecar)
                if instance.instance_id in values:
                    return ReferenceValue(value=values[instance.instance_id], method="file")
            if self.lower_bound(instance) is not None:
                return self.reference(instance, "lower_bound")
            return self.reference(instance, "baseline")

        raise ProblemError(f"Неизвестный метод эталона {method}", code="schema_mismatch")

    def _read_text(self, filename: str) -> str:
        path = os.path.join(DATA_DIR, self.kind, filename)
        if not os.path.exists(path):
            return ""
        with open(path, "r", encoding="utf-8") as f:
            return f.read().strip()

    def description(self) -> str:
        return self._read_text("description.txt")

    def function_signature(self) -> str:
        return self._read_text("function_signature.txt")

    @staticmethod
    def _int_list(values: Any, field: str) -> Tuple[Optional[List[int]], Optional[str]]:
        if not isinstance(values, list):
            return None, f"schema_mismatch: поле {field} должно быть списком"
        result = []
        for value in values:
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                return None, f"schema_mismatch: в {field} не целое значение {value!r}"
            if isinstance(value, float) and (not math.isfinite(value) or not value.is_integer()):
                return None, f"schema_mismatch: в {field} не целое значение {value!r}"
            result.append(int(value))
        return result, None

    @staticmethod
    def _field(solution: Any, name: str) -> Tuple[Any, Optional[str]]:
        if not isinstance(solution, dict) or name not in solution:
            return None, f"schema_mismatch: решение должно быть объектом с полем {name}"
        return solution[name], None
