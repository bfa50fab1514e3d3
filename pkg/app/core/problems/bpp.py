import math
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from .base import EPS, ProblemInstance, ProblemSuite

WEIBULL_SHAPE = 3.0
WEIBULL_SCALE = 45.0
CAPACITY_SCALE = 100.0
MIN_ITEM = 1e-3


class BppSuite(ProblemSuite):
    """Одномерная упаковка в контейнеры вместимости 1"""

    kind = "bpp"
    display_name = "One-dimensional Bin Packing Problem (BPP)"
    alg_type = "heuristic"
    sense = "min"
    tags = ["bpp", "packing", "assignment"]
    oracle_limit = 12
    min_size = 1

    def _generate(self, size: int, seed: int) -> Dict[str, Any]:
        rng = np.random.default_rng(seed)
        items = rng.weibull(WEIBULL_SHAPE, size) * WEIBULL_SCALE / CAPACITY_SCALE
        return {"items": np.clip(items, MIN_ITEM, 1.0).tolist()}

    def validate(self, instance: ProblemInstance, solution: Any) -> Optional[str]:
        raw, error = self._field(solution, "bins")
        if error:
            return error
        if not isinstance(raw, list):
            return "schema_mismatch: поле bins должно быть списком списков"

        items = instance.payload["items"]
        seen: Dict[int, int] = {}
        for b, content in enumerate(raw):
            indices, error = self._int_list(content, f"bins[{b}]")
            if error:
                return error
            load = 0.0
            for index in indices:
                if index < 0 or index >= len(items):
                    return f"Контейнер {b}: предмет {index} вне диапазона"
                if index in seen:
                    return f"Предмет {index} лежит в контейнерах {seen[index]} и {b}"
                seen[index] = b
                load += items[index]
            if load > 1.0 + EPS:
                return f"Контейнер {b} переполнен: нагрузка {load:.6f} > 1"

        missing = [i for i in range(len(items)) if i not in seen]
        if missing:
            return f"Предметы не упакованы: {missing[:10]}"
        return None

    def _objective(self, instance: ProblemInstance, solution: Dict[str, Any]) -> float:
        return float(sum(1 for content in solution["bins"] if content))

    def lower_bound(self, instance: ProblemInstance) -> Optional[float]:
        return float(math.ceil(sum(instance.payload["items"]) - EPS))

    def brute_force_solution(self, instance: ProblemInstance) -> Tuple[Dict[str, Any], float]:
        items = instance.payload["items"]
        order = sorted(range(len(items)), key=lambda i: (-items[i], i))
        best: List[List[int]] = [[i] for i in order]
        loads: List[float] = []
        bins: List[List[int]] = []
        bound = self.lower_bound(instance)

        def place(k: int):
            nonlocal best
            if len(bins) >= len(best):
                return
            if k == len(order):
                best = [list(b) for b in bins]
                return
            item = order[k]
            tried = set()
            for b in range(len(bins)):
                # Одинаковые нагрузки дают симметричные ветви
                key = round(loads[b], 12)
                if key in tried or loads[b] + items[item] > 1.0 + EPS:
                    continue
                tried.add(key)
                loads[b] += items[item]
                bins[b].append(item)
                place(k + 1)
                bins[b].pop()
                loads[b] -= items[item]
                if len(best) <= bound:
                    return
            bins.append([item])
            loads.append(items[item])
            place(k + 1)
            bins.pop()
            loads.pop()

        if items:
            place(0)
        solution = {"bins": [sorted(b) for b in best]}
        return solution, self._objective(instance, solution)

    def baseline_solution(self, instance: ProblemInstance) -> Dict[str, Any]:
        """First Fit Decreasing"""
        items = instance.payload["items"]
        bins: List[List[int]] = []
        loads: List[float] = []
        for index in sorted(range(len(items)), key=lambda i: (-items[i], i)):
            for b, load in enumerate(loads):
                if load + items[index] <= 1.0 + EPS:
                    bins[b].append(index)
                    loads[b] += items[index]
                    break
            else:
                bins.append([index])
                loads.append(items[index])
        return {"bins": bins}
