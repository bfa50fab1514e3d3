from enum import Enum
from functools import cmp_to_key
from typing import Any, Dict, List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, model_validator

from .errors import QualityError


class ImplOrigin(str, Enum):
    """Происхождение реализации функции"""
    LLM_GENERATED = "llm_generated"
    HEUBASE = "heubase"
    ADAPTIVE_MEMORY = "adaptive_memory"


class FunctionSlot(BaseModel):
    """Заглушка func_{id} в структуре алгоритма"""
    model_config = ConfigDict(frozen=True)

    id: int = Field(ge=1)
    purpose: str = Field(min_length=1)
    signature: str = ""


class HyperParam(BaseModel):
    """Одна строка между маркерами #Hyperparameter#"""
    model_config = ConfigDict(frozen=True)

    name: str
    value: Union[int, float]
    is_integer: bool = False


class StructureCode(BaseModel):
    """Структура алгоритма: код с заглушками func_i и блок гиперпараметров"""
    model_config = ConfigDict(frozen=True)

    source: str
    hyper_block: List[HyperParam]
    slots: List[FunctionSlot]
    max_time_s: float
    renumbered: bool = False

    @model_validator(mode="after")
    def _check_invariants(self):
        if not any(p.name == "MAX_TIME" for p in self.hyper_block):
            raise ValueError("В блоке гиперпараметров нет MAX_TIME")
        ids = [slot.id for slot in self.slots]
        if len(ids) != len(set(ids)):
            raise ValueError("Идентификаторы слотов повторяются")
        return self

    def hyper_value(self, name: str) -> Optional[Union[int, float]]:
        for param in self.hyper_block:
            if param.name == name:
                return param.value
        return None

    def slot_ids(self) -> List[int]:
        return sorted(slot.id for slot in self.slots)

    def slot(self, slot_id: int) -> Optional[FunctionSlot]:
        for slot in self.slots:
            if slot.id == slot_id:
                return slot
        return None


class FunctionImpl(BaseModel):
    """Реализация одного слота"""
    model_config = ConfigDict(frozen=True)

    slot_id: int = Field(ge=1)
    source: str
    origin: ImplOrigin = ImplOrigin.LLM_GENERATED
    knowledge_refs: List[str] = Field(default_factory=list)


class Lineage(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: Literal["init", "crossover", "mutation"] = "init"
    parents: List[str] = Field(default_factory=list)

    @model_validator(mode="after")
    def _check_parent_count(self):
        expected = {"init": 0, "crossover": 2, "mutation": 1}[self.kind]
        if len(self.parents) != expected:
            raise ValueError(f"У {self.kind} должно быть родителей: {expected}, получено {len(self.parents)}")
        return self


class HeuristicIndividual(BaseModel):
    """Особь ГА: структура, реализации слотов и измеренное качество"""
    model_config = ConfigDict(frozen=True)

    id: str
    structure: StructureCode
    impls: Dict[int, FunctionImpl] = Field(default_factory=dict)
    quality: Optional[float] = None
    lineage: Lineage = Field(default_factory=Lineage)
    generation_born: int = 0
    token_cost: int = Field(default=0, ge=0)
    instance_scores: List[float] = Field(default_factory=list)

    @model_validator(mode="after")
    def _quality_requires_all_impls(self):
        if self.quality is not None and not self.is_complete():
            raise ValueError(f"Особь {self.id} оценена, но не все слоты реализованы")
        return self

    def is_complete(self) -> bool:
        return all(slot.id in self.impls for slot in self.structure.slots)

    @property
    def is_evaluated(self) -> bool:
        return self.quality is not None

    def add_tokens(self, tokens: int) -> "HeuristicIndividual":
        """Возвращает копию с увеличенной стоимостью (стоимость только растет)"""
        if tokens < 0:
            raise ValueError("Стоимость в токенах не может уменьшаться")
        return self.model_copy(update={"token_cost": self.token_cost + tokens})

    def knowledge_refs(self) -> List[str]:
        names: List[str] = []
        for slot_id in sorted(self.impls):
            for name in self.impls[slot_id].knowledge_refs:
                if name not in names:
                    names.append(name)
        return names

    def to_record(self) -> Dict[str, Any]:
        """JSON-документ особи для журналов и возобновления"""
        return {
            "id": self.id,
            "structure_source": self.structure.source,
            "impls": [
                {
                    "slot_id": impl.slot_id,
                    "origin": impl.origin.value,
                    "source": impl.source,
                    "knowledge_refs": list(impl.knowledge_refs),
                }
                for _, impl in sorted(self.impls.items())
            ],
            "quality": self.quality,
            "lineage": {"kind": self.lineage.kind, "parents": list(self.lineage.parents)},
            "generation_born": self.generation_born,
            "token_cost": self.token_cost,
            "instance_scores": list(self.instance_scores),
        }


class Population(BaseModel):
    model_config = ConfigDict(frozen=True)

    generation: int = Field(default=0, ge=0)
    members: List[HeuristicIndividual] = Field(default_factory=list)

    def best(self) -> Optional[HeuristicIndividual]:
        evaluated = [m for m in self.members if m.is_evaluated]
        if not evaluated:
            return None
        return sort_by_quality(evaluated)[0]

    def ids(self) -> List[str]:
        return [m.id for m in self.members]


def compare_quality(a: HeuristicIndividual, b: HeuristicIndividual) -> int:
    """
    Порядок особей: отрицательное значение - a лучше b.

    Больше качество - лучше; при равенстве меньше token_cost,
    затем раньше generation_born, затем id.
    """
    if not a.is_evaluated or not b.is_evaluated:
        raise QualityError("Сравнивать можно только оцененные особи")
    if a.quality != b.quality:
        return -1 if a.quality > b.quality else 1
    if a.token_cost != b.token_cost:
        return -1 if a.token_cost < b.token_cost else 1
    if a.generation_born != b.generation_born:
        return -1 if a.generation_born < b.generation_born else 1
    if a.id != b.id:
        return -1 if a.id < b.id else 1
    return 0


def sort_by_quality(members: List[HeuristicIndividual]) -> List[HeuristicIndividual]:
    return sorted(members, key=cmp_to_key(compare_quality))
