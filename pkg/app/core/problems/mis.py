import math
from itertools import product
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from app.core.errors import ProblemError

from .base import ProblemInstance, ProblemSuite

# Диапазоны RB-модели: (узлов min, max) -> (число переменных n, размер домена k)
RB_BANDS = {
    (200, 300): ((20, 25), (5, 12)),
    (800, 1200): ((40, 55), (20, 25)),
}
RB_TIGHTNESS = (0.3, 1.0)
MAX_BAND_ATTEMPTS = 1000


class MisSuite(ProblemSuite):
    """Максимальное независимое множество на графах RB-модели"""

    kind = "mis"
    display_name = "Maximum Independent Set (MIS)"
    alg_type = "heuristic"
    sense = "max"
    tags = ["mis", "graph", "subset"]
    oracle_limit = 20
    min_size = 4

    def _band(self, size: int):
        for (low, high), params in RB_BANDS.items():
            if low <= size <= high:
                return (low, high), params
        return None, None

    def _generate(self, size: int, seed: int) -> Dict[str, Any]:
        rng = np.random.default_rng(seed)
        band, params = self._band(size)

        if band is not None:
            (n_low, n_high), (k_low, k_high) = params
            for _ in range(MAX_BAND_ATTEMPTS):
                n = int(rng.integers(n_low, n_high + 1))
                k = int(rng.integers(k_low, k_high + 1))
                if band[0] <= n * k <= band[1]:
                    break
            else:
                raise ProblemError(f"Не удалось подобрать RB-граф в диапазоне {band}", code="unsupported_size")
            parts = [list(range(i * k, (i + 1) * k)) for i in range(n)]
            num_nodes = n * k
        else:
            k = max(2, math.isqrt(size))
            n = max(2, math.ceil(size / k))
            parts = [chunk.tolist() for chunk in np.array_split(np.arange(size), n)]
            num_nodes = size

        edges = set()
        for part in parts:
            for i in range(len(part)):
                for j in range(i + 1, len(part)):
                    edges.add((part[i], part[j]))

        p = float(rng.uniform(*RB_TIGHTNESS))
        a = math.log(k) / math.log(n)
        r = -a / math.log(1.0 - p) if p < 1.0 else 1.0
        s = int(p * n ** (2 * a))
        iterations = int(r * n * math.log(n))
        for _ in range(iterations):
            i, j = rng.choice(len(parts), 2, replace=False)
            pairs = list(product(parts[int(i)], parts[int(j)]))
            if not pairs:
                continue
            picks = rng.choice(len(pairs), min(s, len(pairs)), replace=False)
            for pick in picks:
                u, v = pairs[int(pick)]
                edges.add((min(u, v), max(u, v)))

        return {"num_nodes": num_nodes, "edges": [list(e) for e in sorted(edges)]}

    def oracle_size(self, instance: ProblemInstance) -> int:
        return instance.payload["num_nodes"]

    def validate(self, instance: ProblemInstance, solution: Any) -> Optional[str]:
        raw, error = self._field(solution, "select")
        if error:
            return error
        select, error = self._int_list(raw, "select")
        if error:
            return error
        n = instance.payload["num_nodes"]
        if len(select) != n:
            return f"Длина select {len(select)}, нужно {n}"
        if any(v not in (0, 1) for v in select):
            return "schema_mismatch: select должен быть бинарным вектором"
        for u, v in instance.payload["edges"]:
            if select[u] and select[v]:
                return f"Выбраны смежные вершины: ребро ({u}, {v})"
        return None

    def _objective(self, instance: ProblemInstance, solution: Dict[str, Any]) -> float:
        return float(sum(int(v) for v in solution["select"]))

    def _adjacency(self, instance: ProblemInstance) -> List[int]:
        adj = [0] * instance.payload["num_nodes"]
        for u, v in instance.payload["edges"]:
            adj[u] |= 1 << v
            adj[v] |= 1 << u
        return adj

    def brute_force_solution(self, instance: ProblemInstance) -> Tuple[Dict[str, Any], float]:
        n = instance.payload["num_nodes"]
        adj = self._adjacency(instance)
        best_mask = 0
        best_size = 0

        def branch(candidates: int, chosen: int, size: int):
            nonlocal best_mask, best_size
            if size + bin(candidates).count("1") <= best_size:
                return
            if candidates == 0:
                best_mask, best_size = chosen, size
                return
            v = (candidates & -candidates).bit_length() - 1
            rest = candidates & ~(1 << v)
            branch(rest & ~adj[v], chosen | (1 << v), size + 1)
            branch(rest, chosen, size)

        branch((1 << n) - 1, 0, 0)
        solution = {"select": [(best_mask >> v) & 1 for v in range(n)]}
        return solution, self._objective(instance, solution)

    def baseline_solution(self, instance: ProblemInstance) -> Dict[str, Any]:
        """Жадный выбор вершины минимальной степени"""
        n = instance.payload["num_nodes"]
        adj = self._adjacency(instance)
        alive = (1 << n) - 1
        chosen = [0] * n
        while alive:
            v = min(
                (u for u in range(n) if alive >> u & 1),
                key=lambda u: (bin(adj[u] & alive).count("1"), u),
            )
            chosen[v] = 1
            alive &= ~(adj[v] | (1 << v))
        return {"select": chosen}
