import ast
import logging
import math
import re
import time
from typing import Awaitable, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, model_validator

from app.core.errors import CalibrationError
from app.core.models import HeuristicIndividual, StructureCode
from app.core.structure import set_hyper_values
from app.utils.code_parse import CodeParser

logger = logging.getLogger(__name__)

Number = Union[int, float]
_PMS_RE = re.compile(r"\bpms_dict\s*(?::[^=\n]+)?=\s*")
# Штраф за выход за границы (точка оценивается после проекции в коробку)
BOUND_PENALTY = 1.0


class RangeSpec(BaseModel):
    name: str
    low: float
    high: float
    is_integer: bool = False

    @model_validator(mode="after")
    def _check(self):
        if not self.low < self.high:
            raise ValueError(f"{self.name}: нижняя граница должна быть меньше верхней")
        if self.name == "MAX_TIME":
            raise ValueError("MAX_TIME не калибруется")
        return self

    def decode(self, u: float) -> Number:
        """Точка единичного отрезка -> значение гиперпараметра"""
        value = self.low + min(max(u, 0.0), 1.0) * (self.high - self.low)
        if not self.is_integer:
            return float(value)
        low, high = math.ceil(self.low), math.floor(self.high)
        if low > high:
            return int(round(self.low))
        return int(min(max(round(value), low), high))

    def encode(self, value: Number) -> float:
        return min(max((float(value) - self.low) / (self.high - self.low), 0.0), 1.0)


class CmaEs:
    """
    CMA-ES в форме ask/tell.

    Правила обновления - каноническая схема: взвешенная рекомбинация mu лучших,
    пути эволюции ps/pc, rank-one и rank-mu обновление ковариации, CSA для sigma.
    """

    def __init__(self, x0: Sequence[float], sigma0: float, seed: int = 0, popsize: Optional[int] = None):
        x0 = np.asarray(x0, dtype=float)
        if x0.ndim != 1 or x0.size < 1:
            raise CalibrationError("Размерность должна быть не меньше 1", code="dimension_mismatch")
        if sigma0 <= 0:
            raise CalibrationError("sigma0 должна быть положительной", code="invalid_sigma")

        n = x0.size
        self.dim = n
        self.lam = popsize or 4 + int(3 * math.log(n))
        self.mu = self.lam // 2
        weights = math.log(self.mu + 0.5) - np.log(np.arange(1, self.mu + 1))
        self.weights = weights / weights.sum()
        self.mueff = 1.0 / float((self.weights ** 2).sum())

        self.cc = (4 + self.mueff / n) / (n + 4 + 2 * self.mueff / n)
        self.cs = (self.mueff + 2) / (n + self.mueff + 5)
        self.c1 = 2 / ((n + 1.3) ** 2 + self.mueff)
        self.cmu = min(1 - self.c1, 2 * (self.mueff - 2 + 1 / self.mueff) / ((n + 2) ** 2 + self.mueff))
        self.damps = 1 + 2 * max(0.0, math.sqrt((self.mueff - 1) / (n + 1)) - 1) + self.cs
        self.chi_n = math.sqrt(n) * (1 - 1 / (4 * n) + 1 / (21 * n ** 2))

        self.mean = x0.copy()
        self.sigma = float(sigma0)
        self.C = np.eye(n)
        self.B = np.eye(n)
        self.D = np.ones(n)
        self.inv_sqrt_C = np.eye(n)
        self.pc = np.zeros(n)
        self.ps = np.zeros(n)
        self.generation = 0
        self.counteval = 0
        self.rng = np.random.default_rng(seed)

        self.best_x: Optional[np.ndarray] = None
        self.best_f = math.inf

    def ask(self) -> List[np.ndarray]:
        z = self.rng.standard_normal((self.lam, self.dim))
        y = (z * self.D) @ self.B.T
        return [self.mean + self.sigma * row for row in y]

    def tell(self, xs: Sequence[np.ndarray], values: Sequence[float]):
        if len(xs) != self.lam or len(values) != self.lam:
            raise CalibrationError(f"Нужно ровно {self.lam} точек", code="dimension_mismatch")
        X = np.asarray(xs, dtype=float)
        f = np.asarray(values, dtype=float)
        f = np.where(np.isfinite(f), f, np.inf)
        self.counteval += self.lam

        order = np.argsort(f, kind="stable")
        if f[order[0]] < self.best_f:
            self.best_f = float(f[order[0]])
            self.best_x = X[order[0]].copy()

        n = self.dim
        old_mean = self.mean
        selected = X[order[:self.mu]]
        self.mean = self.weights @ selected

        y = (self.mean - old_mean) / self.sigma
        self.ps = (1 - self.cs) * self.ps + math.sqrt(self.cs * (2 - self.cs) * self.mueff) * (self.inv_sqrt_C @ y)
        ps_norm = float(np.linalg.norm(self.ps))
        hsig = (
            ps_norm ** 2 / n / (1 - (1 - self.cs) ** (2 * self.counteval / self.lam)) < 2 + 4 / (n + 1)
        )
        self.pc = (1 - self.cc) * self.pc + hsig * math.sqrt(self.cc * (2 - self.cc) * self.mueff) * y

        steps = (selected - old_mean) / self.sigma
        c1a = self.c1 * (1 - (1 - hsig) * self.cc * (2 - self.cc))
        self.C = (
            (1 - c1a - self.cmu) * self.C
            + self.c1 * np.outer(self.pc, self.pc)
            + self.cmu * (steps.T * self.weights) @ steps
        )
        self.sigma *= math.exp(min(1.0, (self.cs / self.damps) * (ps_norm / self.chi_n - 1)))
        self._decompose()
        self.generation += 1

    def _decompose(self):
        self.C = np.triu(self.C) + np.triu(self.C, 1).T
        eigenvalues, self.B = np.linalg.eigh(self.C)
        eigenvalues = np.clip(eigenvalues, 1e-20, None)
        self.D = np.sqrt(eigenvalues)
        self.inv_sqrt_C = self.B @ np.diag(1 / self.D) @ self.B.T


def _clamp(x: np.ndarray, bounds: Optional[Tuple[Sequence[float], Sequence[float]]]) -> np.ndarray:
    if bounds is None:
        return x
    return np.clip(x, np.asarray(bounds[0], dtype=float), np.asarray(bounds[1], dtype=float))


def cmaes_minimize(
    f: Callable[[np.ndarray], float],
    x0: Sequence[float],
    sigma0: float,
    bounds: Optional[Tuple[Sequence[float], Sequence[float]]] = None,
    max_evals: int = 1000,
    seed: int = 0,
) -> Tuple[List[float], float]:
    """Минимизация f с ограничениями-коробкой (проекция перед оценкой)"""
    es = CmaEs(x0, sigma0, seed=seed)
    if bounds is not None and (len(bounds[0]) != es.dim or len(bounds[1]) != es.dim):
        raise CalibrationError("Размерность границ не совпадает с x0", code="dimension_mismatch")
    if max_evals < es.lam:
        raise CalibrationError(f"max_evals меньше размера популяции {es.lam}", code="budget_too_small")

    best_x = _clamp(np.asarray(x0, dtype=float), bounds)
    best_f = math.inf
    evals = 0
    while evals + es.lam <= max_evals:
        xs = es.ask()
        told = []
        for x in xs:
            xc = _clamp(x, bounds)
            value = float(f(xc))
            evals += 1
            if not math.isfinite(value):
                told.append(math.inf)
                continue
            if value < best_f:
                best_f, best_x = value, xc.copy()
            told.append(value + BOUND_PENALTY * float(((x - xc) ** 2).sum()))
        es.tell(xs, told)
    return [float(v) for v in best_x], best_f


def parse_ranges(completion: str, structure: StructureCode) -> List[RangeSpec]:
    """Извлекает pms_dict из ответа LLM и превращает в диапазоны"""
    code = CodeParser.extract_code_block(completion).code
    match = _PMS_RE.search(code)
    start = code.find("{", match.end()) if match else -1
    if start < 0:
        raise CalibrationError("В ответе нет pms_dict", code="no_dict_found")

    depth = 0
    end = -1
    for i in range(start, len(code)):
        if code[i] == "{":
            depth += 1
        elif code[i] == "}":
            depth -= 1
            if depth == 0:
                end = i + 1
                break
    try:
        raw = ast.literal_eval(code[start:end]) if end > 0 else None
    except (ValueError, SyntaxError):
        raw = None
    if not isinstance(raw, dict):
        raise CalibrationError("pms_dict не является словарем-литералом", code="no_dict_found")

    known = {p.name: p for p in structure.hyper_block}
    ranges: List[RangeSpec] = []
    for name, interval in raw.items():
        if name == "MAX_TIME":
            logger.info("MAX_TIME исключен из калибровки")
            continue
        if name not in known:
            logger.warning(f"pms_dict: гиперпараметр {name} не найден в структуре, пропускаем")
            continue
        if (
            not isinstance(interval, (tuple, list)) or len(interval) != 2
            or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in interval)
        ):
            logger.warning(f"pms_dict: для {name} ожидается пара чисел, получено {interval!r}")
            continue
        low, high = sorted(float(v) for v in interval)
        if low == high:
            logger.warning(f"pms_dict: пустой интервал для {name}")
            continue
        ranges.append(RangeSpec(name=name, low=low, high=high, is_integer=known[name].is_integer))

    if not ranges:
        raise CalibrationError("После фильтрации диапазонов не осталось", code="empty_after_filtering")
    return ranges


class CalibrationResult(BaseModel):
    individual: HeuristicIndividual
    accepted: bool
    evals_used: int
    best_params: Dict[str, Number]
    pre_quality: Optional[float]
    post_quality: Optional[float]


SearchFn = Callable[[Dict[str, Number]], Awaitable[Optional[float]]]
ConfirmFn = Callable[[HeuristicIndividual], Awaitable[Optional[HeuristicIndividual]]]


async def calibrate(
    individual: HeuristicIndividual,
    ranges: List[RangeSpec],
    search_fn: SearchFn,
    max_evals: int,
    seed: int = 0,
    sigma0: float = 0.3,
    confirm_fn: Optional[ConfirmFn] = None,
    deadline: Optional[float] = None,
) -> CalibrationResult:
    """
    CMA-ES по гиперпараметрам в единичном кубе.

    search_fn возвращает качество (больше - лучше) или None при провале.
    Новые значения принимаются только при строгом улучшении качества;
    если задан confirm_fn, улучшение проверяется его оценкой.
    """
    unchanged = CalibrationResult(
        individual=individual, accepted=False, evals_used=0, best_params={},
        pre_quality=individual.quality, post_quality=individual.quality,
    )
    if not ranges or max_evals <= 0:
        return unchanged

    es = CmaEs([r.encode(individual.structure.hyper_value(r.name)) for r in ranges], sigma0, seed=seed)
    if max_evals < es.lam:
        logger.info(f"Калибровка пропущена: max_evals={max_evals} < lambda={es.lam}")
        return unchanged

    cache: Dict[Tuple[Number, ...], Optional[float]] = {}
    best_params: Optional[Dict[str, Number]] = None
    best_quality = -math.inf
    evals = 0
    while evals + es.lam <= max_evals:
        if deadline is not None and time.monotonic() >= deadline:
            logger.info("Калибровка остановлена по времени")
            break
        xs = es.ask()
        told = []
        for x in xs:
            xc = np.clip(x, 0.0, 1.0)
            params = {r.name: r.decode(float(u)) for r, u in zip(ranges, xc)}
            key = tuple(params[r.name] for r in ranges)
            if key not in cache:
                cache[key] = await search_fn(params)
            quality = cache[key]
            evals += 1
            if quality is None or not math.isfinite(quality):
                told.append(math.inf)
                continue
            if quality > best_quality:
                best_quality, best_params = quality, params
            told.append(-quality + BOUND_PENALTY * float(((x - xc) ** 2).sum()))
        es.tell(xs, told)

    if best_params is None:
        return unchanged.model_copy(update={"evals_used": evals})

    candidate = individual.model_copy(update={
        "structure": set_hyper_values(individual.structure, best_params),
        "quality": None,
        "instance_scores": [],
    })
    if confirm_fn is not None:
        confirmed = await confirm_fn(candidate)
        post = confirmed.quality if confirmed is not None else None
    else:
        confirmed = candidate.model_copy(update={"quality": best_quality})
        post = best_quality

    accepted = post is not None and (individual.quality is None or post > individual.quality)
    logger.info(f"Калибровка {individual.id}: {individual.quality} -> {post}, принято={accepted}")
    return CalibrationResult(
        individual=confirmed if accepted else individual,
        accepted=accepted,
        evals_used=evals,
        best_params=best_params,
        pre_quality=individual.quality,
        post_quality=post,
    )
