import math
from itertools import permutations
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from .base import ProblemInstance, ProblemSuite


def tour_length(coords: List[List[float]], tour: List[int]) -> float:
    total = 0.0
    for i in range(len(tour)):
        a = coords[tour[i]]
        b = coords[tour[(i + 1) % len(tour)]]
        total += math.hypot(a[0] - b[0], a[1] - b[1])
    return total


class TspSuite(ProblemSuite):
    """Задача коммивояжера на точках единичного квадрата"""

    kind = "tsp"
    display_name = "Traveling Salesman Problem (TSP)"
    alg_type = "heuristic"
    sense = "min"
    tags = ["tsp", "routing", "permutation"]
    oracle_limit = 10
    min_size = 3

    def _generate(self, size: int, seed: int) -> Dict[str, Any]:
        rng = np.random.default_rng(seed)
        return {"coords": rng.random((size, 2)).tolist()}

    def validate(self, instance: ProblemInstance, solution: Any) -> Optional[str]:
        raw, error = self._field(solution, "tour")
        if error:
            return error
        tour, error = self._int_list(raw, "tour")
        if error:
            return error
        n = len(instance.payload["coords"])
        if len(tour) != n:
            return f"Маршрут содержит {len(tour)} вершин, нужно {n}"
        out_of_range = [v for v in tour if v < 0 or v >= n]
        if out_of_range:
            return f"Вершины вне диапазона 0..{n - 1}: {out_of_range[:5]}"
        if len(set(tour)) != n:
            seen, repeated = set(), []
            for v in tour:
                if v in seen:
                    repeated.append(v)
                seen.add(v)
            return f"Вершины посещены повторно: {repeated[:5]}"
        return None

    def _objective(self, instance: ProblemInstance, solution: Dict[str, Any]) -> float:
        return tour_length(instance.payload["coords"], [int(v) for v in solution["tour"]])

    def brute_force_solution(self, instance: ProblemInstance) -> Tuple[Dict[str, Any], float]:
        coords = instance.payload["coords"]
        n = len(coords)
        points = np.asarray(coords)
        dist = np.sqrt(((points[:, None, :] - points[None, :, :]) ** 2).sum(-1)).tolist()

        best_tour, best_len = None, math.inf
        for perm in permutations(range(1, n)):
            # Обход и его зеркальная копия равны по длине
            if perm[0] > perm[-1]:
                continue
            length = dist[0][perm[0]] + dist[perm[-1]][0]
            for i in range(len(perm) - 1):
                length += dist[perm[i]][perm[i + 1]]
            if length < best_len:
                best_len, best_tour = length, [0, *perm]

        solution = {"tour": best_tour}
        return solution, self._objective(instance, solution)

    def baseline_solution(self, instance: ProblemInstance) -> Dict[str, Any]:
        """Ближайший сосед от вершины 0"""
        coords = instance.payload["coords"]
        unvisited = set(range(1, len(coords)))
        tour = [0]
        while unvisited:
            last = coords[tour[-1]]
            nxt = min(unvisited, key=lambda v: (math.hypot(coords[v][0] - last[0], coords[v][1] - last[1]), v))
            tour.append(nxt)
            unvisited.remove(nxt)
        return {"tour": tour}
