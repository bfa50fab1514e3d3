import keyword
import logging
import re
from collections import Counter
from typing import Awaitable, Callable, Dict, List, Optional, Sequence, Tuple

from pydantic import BaseModel, Field

from app.core.errors import EngineError, PopulationError
from app.core.knowledge import KnowledgeFunction, render_block
from app.core.models import HeuristicIndividual, sort_by_quality
from app.core.run_config import AMConfig
from app.utils.code_parse import CodeParser

logger = logging.getLogger(__name__)

SHINGLE = 3
_SLOT_CALL_RE = re.compile(r"\bfunc_(\d+)\b")
_IDENT_RE = re.compile(r"^[A-Za-z_]\w*$")

Namer = Callable[[str], Awaitable[Optional[Tuple[str, str]]]]


class MemoryEntry(BaseModel):
    """Функция в Adaptive Memory со статистикой для оценки полезности"""
    name: str
    purpose: str
    signature: str = "()"
    source: str
    fitness: float
    usage_count: int = Field(default=0, ge=0)
    inserted_gen: int = 0
    last_used_gen: int = 0
    # Обновлений памяти подряд без использования записи
    idle_updates: int = Field(default=0, ge=0)
    ema_improvement: float = 0.0
    last_score: float = 0.0
    requires: List[str] = Field(default_factory=list)
    naming_fallback: bool = False


class Candidate(BaseModel):
    """Реализация слота элитной особи, претендующая на место в памяти"""
    source: str
    purpose: str
    signature: str
    fitness: float
    usage: int = 1
    requires: List[str] = Field(default_factory=list)


class RawFeatures(BaseModel):
    fit: float
    nov: float
    use: float
    age: float


class MemoryEvent(BaseModel):
    action: str  # insert | replace | discard | evict | prune | name
    name: str = ""
    candidate: int = -1
    replaced: str = ""
    similarity: Optional[float] = None
    s_f: Optional[float] = None
    s_g: Optional[float] = None
    u_star: Optional[float] = None
    fallback: bool = False


def _own_name(source: str) -> Optional[str]:
    blocks = CodeParser.find_functions(source)
    return blocks[0].name if blocks else None


def _shingles(source: str) -> Counter:
    name = _own_name(source)
    tokens = CodeParser.normalized_tokens(source)
    if name:
        own = name.casefold()
        tokens = ["<fn>" if t == own else t for t in tokens]
    if len(tokens) < SHINGLE:
        return Counter([tuple(tokens)]) if tokens else Counter()
    return Counter(tuple(tokens[i:i + SHINGLE]) for i in range(len(tokens) - SHINGLE + 1))


def similarity(f: str, g: str) -> float:
    """Мультимножественный Жаккар по 3-токенным шинглам нормализованного потока"""
    a, b = _shingles(f), _shingles(g)
    if not a and not b:
        return 1.0 if f.strip() == g.strip() else 0.0
    union = sum((a | b).values())
    if union == 0:
        return 0.0
    return sum((a & b).values()) / union


def normalize_columns(rows: Sequence[RawFeatures]) -> List[RawFeatures]:
    """Min-max по каждому признаку; постоянный столбец -> 0.5"""
    result = [dict() for _ in rows]
    for column in ("fit", "nov", "use", "age"):
        values = [getattr(r, column) for r in rows]
        low, high = min(values), max(values)
        for i, value in enumerate(values):
            result[i][column] = 0.5 if high == low else (value - low) / (high - low)
    return [RawFeatures(**r) for r in result]


class AdaptiveMemory:
    """Пул переиспользуемых функций с оценкой, заменой, вытеснением и очисткой"""

    def __init__(self, cfg: AMConfig = None, generation: int = 0):
        self.cfg = cfg or AMConfig()
        self.entries: List[MemoryEntry] = []
        self.generation = generation

    # Признаки и оценки

    def score_of(self, raw: RawFeatures, pool: Sequence[RawFeatures]) -> float:
        """S = a1*fit + a2*nov + a3*use - a4*age по нормализованным признакам"""
        normalized = normalize_columns(list(pool))
        index = list(pool).index(raw)
        n = normalized[index]
        c = self.cfg
        return c.alpha1 * n.fit + c.alpha2 * n.nov + c.alpha3 * n.use - c.alpha4 * n.age

    def candidate_features(self, candidate: Candidate, reference: Sequence[MemoryEntry]) -> RawFeatures:
        sims = [similarity(candidate.source, g.source) for g in reference]
        return RawFeatures(
            fit=candidate.fitness,
            nov=1.0 - max(sims) if sims else 1.0,
            use=float(candidate.usage),
            age=0.0,
        )

    def entry_features(self, entry: MemoryEntry, gen: int, others: Sequence[MemoryEntry]) -> RawFeatures:
        sims = [similarity(entry.source, g.source) for g in others if g.name != entry.name]
        return RawFeatures(
            fit=entry.fitness,
            nov=1.0 - max(sims) if sims else 1.0,
            use=float(entry.usage_count),
            age=float(gen - entry.inserted_gen),
        )

    def score(self, candidate: Candidate, batch: Sequence[Candidate], gen: int,
              compared: Optional[MemoryEntry] = None) -> float:
        """Оценка кандидата в пуле batch (плюс сравниваемая запись памяти)"""
        if not batch:
            raise PopulationError("Пустой набор кандидатов", code="empty_batch")
        pool = [self.candidate_features(c, self.entries) for c in batch]
        index = list(batch).index(candidate)
        if compared is not None:
            pool.append(self.entry_features(compared, gen, self.entries))
        return self.score_of(pool[index], pool)

    def utility(self, entry: MemoryEntry) -> float:
        """U* = lambda * S_last + (1 - lambda) * EMA улучшений"""
        return self.cfg.lam * entry.last_score + (1 - self.cfg.lam) * entry.ema_improvement

    # Кандидаты

    @staticmethod
    def collect_candidates(elites: Sequence[HeuristicIndividual]) -> List[Candidate]:
        """Реализации слотов элит без повторов; fitness - лучшее качество, usage - число элит"""
        by_source: Dict[str, Candidate] = {}
        for individual in elites:
            requires = CodeParser.top_level_imports(individual.structure.source)
            for slot_id, impl in sorted(individual.impls.items()):
                source = impl.source.strip("\n")
                others = {int(m) for m in _SLOT_CALL_RE.findall(source)} - {slot_id}
                if others:
                    logger.debug(f"func_{slot_id} из {individual.id} вызывает другие слоты, пропускаем")
                    continue
                slot = individual.structure.slot(slot_id)
                if source in by_source:
                    existing = by_source[source]
                    by_source[source] = existing.model_copy(update={
                        "fitness": max(existing.fitness, individual.quality),
                        "usage": existing.usage + 1,
                    })
                    continue
                by_source[source] = Candidate(
                    source=source,
                    purpose=slot.purpose if slot else "",
                    signature=slot.signature if slot and slot.signature else "()",
                    fitness=individual.quality,
                    requires=requires,
                )
        return list(by_source.values())

    # Обновление

    async def update(
        self,
        population: Sequence[HeuristicIndividual],
        gen: int,
        namer: Optional[Namer] = None,
        reserved_names: Sequence[str] = (),
    ) -> List[MemoryEvent]:
        evaluated = [m for m in population if m.is_evaluated]
        elites = sort_by_quality(evaluated)[:self.cfg.elite_count]
        batch = self.collect_candidates(elites)
        events = self.apply_batch(batch, gen)

        new_names = [e.name for e in events if e.action in ("insert", "replace")]
        for entry in [e for e in self.entries if e.name in new_names]:
            event = await self._name_entry(entry, gen, namer, reserved_names)
            events.append(event)
        self.generation = gen
        return events

    def apply_batch(self, batch: Sequence[Candidate], gen: int) -> List[MemoryEvent]:
        """Вставка/замена/отбрасывание, затем вытеснение по U* и очистка простаивающих"""
        events: List[MemoryEvent] = []
        snapshot = list(self.entries)
        batch_raw = [self.candidate_features(c, snapshot) for c in batch]

        for i, candidate in enumerate(batch):
            live = self.entries
            sims = [similarity(candidate.source, g.source) for g in live]
            best = max(range(len(sims)), key=lambda k: (sims[k], -k)) if sims else None

            if best is not None and sims[best] > self.cfg.tau:
                stored = live[best]
                stored_raw = self.entry_features(stored, gen, live)
                pool = batch_raw + [stored_raw]
                s_f = self.score_of(batch_raw[i], pool)
                s_g = self.score_of(stored_raw, pool)
                stored.last_score = s_g
                if s_f > s_g + self.cfg.delta_th:
                    self.entries.remove(stored)
                    entry = self._new_entry(candidate, gen, s_f, i)
                    self.entries.append(entry)
                    events.append(MemoryEvent(
                        action="replace", name=entry.name, candidate=i, replaced=stored.name,
                        similarity=sims[best], s_f=s_f, s_g=s_g,
                    ))
                else:
                    events.append(MemoryEvent(
                        action="discard", candidate=i, replaced=stored.name,
                        similarity=sims[best], s_f=s_f, s_g=s_g,
                    ))
                continue

            s_f = self.score_of(batch_raw[i], batch_raw)
            entry = self._new_entry(candidate, gen, s_f, i)
            self.entries.append(entry)
            events.append(MemoryEvent(
                action="insert", name=entry.name, candidate=i,
                similarity=sims[best] if best is not None else None, s_f=s_f,
            ))

        events.extend(self._evict())
        events.extend(self._prune())
        return events

    def _new_entry(self, candidate: Candidate, gen: int, s_f: float, index: int) -> MemoryEntry:
        return MemoryEntry(
            name=self._unique_name(f"am_func_{gen}_{index}"),
            purpose=candidate.purpose,
            signature=candidate.signature,
            source=candidate.source,
            fitness=candidate.fitness,
            usage_count=candidate.usage,
            inserted_gen=gen,
            last_used_gen=gen,
            last_score=s_f,
            requires=list(candidate.requires),
            naming_fallback=True,
        )

    def _evict(self) -> List[MemoryEvent]:
        overflow = len(self.entries) - self.cfg.c_max
        if overflow <= 0:
            return []
        ranked = sorted(self.entries, key=lambda e: (self.utility(e), e.inserted_gen, e.name))
        evicted = ranked[:overflow]
        self.entries = [e for e in self.entries if e not in evicted]
        return [MemoryEvent(action="evict", name=e.name, u_star=self.utility(e)) for e in evicted]

    def _prune(self) -> List[MemoryEvent]:
        """Удаление записей, не использованных t_idle обновлений памяти подряд, с U* < epsilon.

        Счетчик простоя растет на единицу после каждого обновления и обнуляется в record_usage.
        """
        events = []
        kept = []
        for entry in self.entries:
            u_star = self.utility(entry)
            if entry.idle_updates >= self.cfg.t_idle and u_star < self.cfg.epsilon:
                events.append(MemoryEvent(action="prune", name=entry.name, u_star=u_star))
            else:
                kept.append(entry)
        for entry in kept:
            entry.idle_updates += 1
        self.entries = kept
        return events

    def _unique_name(self, base: str, exclude: Optional[MemoryEntry] = None,
                     reserved: Sequence[str] = ()) -> str:
        taken = {e.name for e in self.entries if e is not exclude} | set(reserved)
        name, k = base, 2
        while name in taken:
            name = f"{base}_{k}"
            k += 1
        return name

    async def _name_entry(self, entry: MemoryEntry, gen: int, namer: Optional[Namer],
                          reserved: Sequence[str]) -> MemoryEvent:
        proposed = None
        if namer is not None:
            try:
                proposed = await namer(entry.source)
            except EngineError as e:
                logger.warning(f"Не удалось получить имя для {entry.name}: {e}")

        old_name = _own_name(entry.source) or ""
        if proposed and self._valid_name(proposed[0]):
            name = self._unique_name(proposed[0], exclude=entry, reserved=reserved)
            purpose = proposed[1].strip() or entry.purpose
            fallback = False
        else:
            if namer is not None:
                logger.warning(f"Имя для записи памяти не получено, оставляем {entry.name}")
            name = self._unique_name(entry.name, exclude=entry, reserved=reserved)
            purpose = entry.purpose
            fallback = True

        if old_name:
            entry.source = re.sub(rf"\b{re.escape(old_name)}\b", name, entry.source)
        entry.name = name
        entry.purpose = purpose or name
        entry.naming_fallback = fallback
        return MemoryEvent(action="name", name=name, fallback=fallback)

    @staticmethod
    def _valid_name(name: str) -> bool:
        return (
            bool(_IDENT_RE.match(name))
            and not keyword.iskeyword(name)
            and not _SLOT_CALL_RE.fullmatch(name)
        )

    # Статистика использования

    def record_usage(self, individual: HeuristicIndividual, gen: int):
        names = set(individual.knowledge_refs())
        for entry in self.entries:
            if entry.name in names:
                entry.usage_count += 1
                entry.last_used_gen = max(entry.last_used_gen, gen)
                entry.idle_updates = 0

    def credit_improvement(self, best: HeuristicIndividual, improvement: float):
        """Улучшение лучшего качества делится поровну между функциями памяти в лучшей особи"""
        names = set(best.knowledge_refs())
        credited = [e for e in self.entries if e.name in names]
        if not credited or improvement <= 0:
            return
        share = improvement / len(credited)
        beta = self.cfg.ema_beta
        for entry in credited:
            entry.ema_improvement = beta * share + (1 - beta) * entry.ema_improvement

    # Представления

    def names(self) -> List[str]:
        return [e.name for e in self.entries]

    def render_listing(self) -> List[str]:
        """Блоки сигнатура+докстрока в порядке вставки; тела не выводятся"""
        return [render_block(e.name, e.signature, e.purpose) for e in self.entries]

    def view(self) -> List[KnowledgeFunction]:
        return [
            KnowledgeFunction(name=e.name, body=e.source, requires=e.requires, kind="adaptive_memory")
            for e in self.entries
        ]

    def to_dict(self) -> dict:
        return {
            "generation": self.generation,
            "config": self.cfg.model_dump(by_alias=True),
            "entries": [e.model_dump() for e in self.entries],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "AdaptiveMemory":
        memory = cls(AMConfig.model_validate(data.get("config", {})), int(data.get("generation", 0)))
        memory.entries = [MemoryEntry.model_validate(e) for e in data.get("entries", [])]
        return memory
