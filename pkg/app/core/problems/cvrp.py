import math
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from app.core.errors import ProblemError

from .base import EPS, ProblemInstance, ProblemSuite

# Вместимость машины по числу клиентов
CAPACITY_LADDER = [(10, 20), (20, 30), (50, 40), (100, 50)]
DEMAND_RANGE = (1, 9)


def capacity_for(size: int) -> int:
    for limit, capacity in CAPACITY_LADDER:
        if size <= limit:
            return capacity
    return CAPACITY_LADDER[-1][1]


class CvrpSuite(ProblemSuite):
    """Маршрутизация транспорта с ограничением вместимости"""

    kind = "cvrp"
    display_name = "Capacitated Vehicle Routing Problem (CVRP)"
    alg_type = "heuristic"
    sense = "min"
    tags = ["cvrp", "routing", "vrp"]
    oracle_limit = 8
    min_size = 1

    def _generate(self, size: int, seed: int) -> Dict[str, Any]:
        rng = np.random.default_rng(seed)
        depot = rng.random(2).tolist()
        coords = rng.random((size, 2)).tolist()
        demands = rng.integers(DEMAND_RANGE[0], DEMAND_RANGE[1] + 1, size).tolist()
        return {
            "depot": depot,
            "coords": coords,
            "demands": [int(d) for d in demands],
            "capacity": capacity_for(size),
            "nb_vehicles": size,
        }

    def validate(self, instance: ProblemInstance, solution: Any) -> Optional[str]:
        raw, error = self._field(solution, "routes")
        if error:
            return error
        if not isinstance(raw, list):
            return "schema_mismatch: поле routes должно быть списком списков"

        payload = instance.payload
        n = len(payload["coords"])
        visited: Dict[int, int] = {}
        used = 0
        for r, route in enumerate(raw):
            clients, error = self._int_list(route, f"routes[{r}]")
            if error:
                return error
            if not clients:
                continue
            used += 1
            load = 0.0
            for client in clients:
                if client < 0 or client >= n:
                    return f"Маршрут {r}: клиент {client} вне диапазона 0..{n - 1}"
                if client in visited:
                    return f"Клиент {client} посещен маршрутами {visited[client]} и {r}"
                visited[client] = r
                load += payload["demands"][client]
            if load > payload["capacity"] + EPS:
                return f"Маршрут {r} перегружен: {load} > {payload['capacity']}"

        if used > payload["nb_vehicles"]:
            return f"Маршрутов {used}, машин {payload['nb_vehicles']}"
        missing = [c for c in range(n) if c not in visited]
        if missing:
            return f"Клиенты не посещены: {missing[:10]}"
        return None

    @staticmethod
    def route_length(depot: List[float], coords: List[List[float]], route: List[int]) -> float:
        if not route:
            return 0.0
        points = [depot, *[coords[c] for c in route], depot]
        return sum(
            math.hypot(points[i + 1][0] - points[i][0], points[i + 1][1] - points[i][1])
            for i in range(len(points) - 1)
        )

    def _objective(self, instance: ProblemInstance, solution: Dict[str, Any]) -> float:
        payload = instance.payload
        return sum(
            self.route_length(payload["depot"], payload["coords"], [int(c) for c in route])
            for route in solution["routes"]
        )

    def brute_force_solution(self, instance: ProblemInstance) -> Tuple[Dict[str, Any], float]:
        payload = instance.payload
        n = len(payload["coords"])
        points = np.asarray([payload["depot"], *payload["coords"]])
        dist = np.sqrt(((points[:, None, :] - points[None, :, :]) ** 2).sum(-1)).tolist()
        demands = payload["demands"]
        full = (1 << n) - 1

        # Held-Karp: tour[mask][last] - кратчайший путь из депо через mask с концом в last
        tour = [[math.inf] * n for _ in range(1 << n)]
        parent = [[-1] * n for _ in range(1 << n)]
        for c in range(n):
            tour[1 << c][c] = dist[0][c + 1]
        for mask in range(1, 1 << n):
            for last in range(n):
                cost = tour[mask][last]
                if cost == math.inf:
                    continue
                for nxt in range(n):
                    if mask >> nxt & 1:
                        continue
                    new_mask = mask | (1 << nxt)
                    value = cost + dist[last + 1][nxt + 1]
                    if value < tour[new_mask][nxt]:
                        tour[new_mask][nxt] = value
                        parent[new_mask][nxt] = last

        route_cost = [math.inf] * (1 << n)
        route_end = [-1] * (1 << n)
        for mask in range(1, 1 << n):
            load = sum(demands[c] for c in range(n) if mask >> c & 1)
            if load > payload["capacity"] + EPS:
                continue
            for last in range(n):
                value = tour[mask][last] + dist[last + 1][0]
                if value < route_cost[mask]:
                    route_cost[mask], route_end[mask] = value, last

        # Разбиение клиентов не более чем на nb_vehicles маршрутов:
        # best[k][mask] - стоимость обслуживания mask не более чем k маршрутами
        vehicles = max(0, min(int(payload["nb_vehicles"]), n))
        best = [[math.inf] * (1 << n) for _ in range(vehicles + 1)]
        choice = [[0] * (1 << n) for _ in range(vehicles + 1)]
        for k in range(vehicles + 1):
            best[k][0] = 0.0
        for k in range(1, vehicles + 1):
            for mask in range(1, 1 << n):
                best[k][mask] = best[k - 1][mask]
                low = mask & -mask
                sub = mask
                while sub:
                    if sub & low and route_cost[sub] < math.inf:
                        value = route_cost[sub] + best[k - 1][mask ^ sub]
                        if value < best[k][mask]:
                            best[k][mask], choice[k][mask] = value, sub
                    sub = (sub - 1) & mask

        if n and best[vehicles][full] == math.inf:
            raise ProblemError(
                f"{instance.instance_id}: клиентов нельзя развезти {vehicles} машинами",
                code="infeasible_instance",
            )

        routes: List[List[int]] = []
        mask, k = full, vehicles
        while mask:
            sub = choice[k][mask]
            k -= 1
            if not sub:
                continue
            path, last, cur = [], route_end[sub], sub
            while last != -1:
                path.append(last)
                prev = parent[cur][last]
                cur &= ~(1 << last)
                last = prev
            routes.append(path[::-1])
            mask ^= sub

        solution = {"routes": routes}
        return solution, self._objective(instance, solution)

    def baseline_solution(self, instance: ProblemInstance) -> Dict[str, Any]:
        """Ближайший сосед с разрезанием по вместимости"""
        payload = instance.payload
        coords, depot = payload["coords"], payload["depot"]
        unvisited = set(range(len(coords)))
        routes: List[List[int]] = []
        route: List[int] = []
        load = 0
        position = depot
        while unvisited:
            feasible = [c for c in unvisited if load + payload["demands"][c] <= payload["capacity"]]
            if not feasible:
                routes.append(route)
                route, load, position = [], 0, depot
                continue
            nxt = min(feasible, key=lambda c: (math.hypot(coords[c][0] - position[0], coords[c][1] - position[1]), c))
            route.append(nxt)
            load += payload["demands"][nxt]
            position = coords[nxt]
            unvisited.remove(nxt)
        if route:
            routes.append(route)
        return {"routes": routes}
