#!/usr/bin/env python3
"""
Тесты внешнего уровня: инициализация, скрещивание и мутация, отбор, Adaptive Memory
"""

import asyncio
import json
import os
import sys
import tempfile

# Добавляем путь к приложению
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from app.core.errors import EducationError, PopulationError
from app.core.exterior import ExteriorGA, select
from app.core.gateway import LLMGateway, RunBudget
from app.core.memory import AdaptiveMemory
from app.core.models import FunctionImpl, HeuristicIndividual, Population
from app.core.prompts import PromptContext, PromptKit
from app.core.providers import MockLLMProvider
from app.core.run_config import GAConfig, LLMConfig
from app.core.run_log import JsonlWriter, RunLog, load_events
from app.core.structure import parse_structure

NAMING = '```python\ndef pass_through(x):\n    """Returns the input unchanged"""\n```'


def structure(quality) -> str:
    return f'''#Hyperparameter#
MAX_TIME = 5  # int
#Hyperparameter#


def solve(instance):
    return func_1(instance)


def func_1(instance):
    # Purpose: quality {quality}
    pass'''


def fenced(code: str) -> str:
    return f"```python\n{code}\n```"


class StubEducator:
    """Обучение без LLM: качество записано в назначении заглушки"""

    def __init__(self):
        self.educated = []

    async def educate(self, individual: HeuristicIndividual) -> HeuristicIndividual:
        if individual.is_evaluated:
            return individual
        self.educated.append(individual.id)
        purpose = individual.structure.slots[0].purpose
        if "fail" in purpose:
            raise EducationError(f"{individual.id}: провал", code="all_candidates_failed_for_slot")
        impls = {
            slot.id: FunctionImpl(slot_id=slot.id, source=f"def func_{slot.id}(x):\n    return x")
            for slot in individual.structure.slots
        }
        return individual.model_copy(update={"impls": impls, "quality": float(purpose.split()[-1])})


def evaluated(ident: str, quality: float) -> HeuristicIndividual:
    return HeuristicIndividual(
        id=ident,
        structure=parse_structure(structure(quality)),
        impls={1: FunctionImpl(slot_id=1, source="def func_1(x):\n    return x")},
        quality=quality,
    )


def make_ga(responses, limit: int = 100000, memory: AdaptiveMemory = None, **cfg):
    work_dir = tempfile.mkdtemp()
    transcript_path = os.path.join(work_dir, "transcript.jsonl")
    log_path = os.path.join(work_dir, "log.jsonl")
    gateway = LLMGateway(
        MockLLMProvider(responses),
        RunBudget(mode="tokens", limit=limit),
        LLMConfig(provider="mock", transcript="x"),
        JsonlWriter(transcript_path, deterministic=True),
    )
    ga = ExteriorGA(
        gateway,
        PromptKit(),
        StubEducator(),
        GAConfig(**cfg),
        context_fn=lambda: PromptContext(problem="Traveling Salesman Problem (TSP)", timeout=5),
        memory=memory,
        run_log=RunLog(log_path, deterministic=True),
        seed=3,
    )
    return ga, transcript_path, log_path


def prompts_of(transcript_path: str):
    if not os.path.exists(transcript_path):
        return []
    with open(transcript_path, "r", encoding="utf-8") as f:
        return [json.loads(line)["prompt"] for line in f]


def test_select():
    print("🧪 Тестирование отбора...")
    members = [
        evaluated("a", 0.1),
        HeuristicIndividual(id="raw", structure=parse_structure(structure(0.9))),
        evaluated("b", 0.5),
        evaluated("c", 0.3),
    ]
    chosen = select(members, 2)
    assert chosen.ids() == ["b", "c"]

    try:
        select([members[1]], 2)
        raise AssertionError("пустой отбор принят")
    except PopulationError as e:
        assert e.code == "empty_after_filtering"
    print("   ✅ Остаются лучшие оцененные особи")


def test_initialization_retries():
    print("🧪 Тестирование инициализации популяции...")
    ga, transcript_path, log_path = make_ga(
        [fenced(structure(0.1)), "I cannot help with that", fenced(structure(0.2))],
        init_pop_size=2,
        max_init_retries=1,
    )
    population = asyncio.run(ga.initialize_population())
    assert population.ids() == ["ind-0001", "ind-0002"]
    assert all(m.lineage.kind == "init" and m.token_cost > 0 for m in population.members)
    assert prompts_of(transcript_path) == ["exterior_user_generator"] * 3
    assert len(load_events(log_path, "structure_rejected")) == 1

    # Без повторов неудачная попытка уменьшает размер популяции
    ga, _, _ = make_ga([fenced(structure(0.1)), "no", fenced(structure(0.2))], init_pop_size=3)
    assert len(asyncio.run(ga.initialize_population()).members) == 2
    print("   ✅ Отброшенные структуры повторяются или уменьшают популяцию")


def test_initialization_failures():
    ga, _, _ = make_ga(["x", "y"], init_pop_size=2)
    try:
        asyncio.run(ga.initialize_population())
        raise AssertionError("популяция без структур создана")
    except PopulationError as e:
        assert e.code == "all_candidates_unparseable"

    costly = {"text": fenced(structure(0.1)), "prompt_tokens": 10, "completion_tokens": 0}
    ga, _, log_path = make_ga([costly, costly], limit=10, init_pop_size=2)
    population = asyncio.run(ga.initialize_population())
    assert len(population.members) == 1
    assert ga.budget_exhausted
    assert load_events(log_path, "budget_exhausted")[0]["stage"] == "initialization"


def test_generation_draw_schedule():
    print("🧪 Тестирование порядка операторов в поколении...")
    children = [structure(q) for q in (0.9, 0.05, 0.2, 0.4, 0.0)]
    ga, transcript_path, log_path = make_ga([fenced(c) for c in children], p_c=1.0, p_m=1.0, max_pop_size=3, am_interval=10)
    parents = Population(generation=0, members=[evaluated("par-3", 0.1), evaluated("par-1", 0.5), evaluated("par-2", 0.3)])

    population = asyncio.run(ga.evolve_generation(parents))

    assert prompts_of(transcript_path) == ["crossover", "crossover", "mutation", "mutation", "mutation"]
    assert population.generation == 1
    assert population.ids() == ["ind-0001", "par-1", "ind-0004"]
    assert ga.educator.educated == ["ind-0001", "ind-0002", "ind-0003", "ind-0004", "ind-0005"]

    event = load_events(log_path, "generation")[0]
    lineages = [(o["lineage"]["kind"], o["lineage"]["parents"]) for o in event["offspring"]]
    assert lineages == [
        ("crossover", ["par-1", "par-2"]),
        ("crossover", ["par-2", "par-3"]),
        ("mutation", ["par-1"]),
        ("mutation", ["par-2"]),
        ("mutation", ["par-3"]),
    ]
    assert event["best_quality"] == 0.9
    assert event["am_updated"] is False
    print("   ✅ Сначала скрещивания соседей, затем мутации к элите")


def test_zero_probabilities_keep_population():
    ga, transcript_path, _ = make_ga(["unused"], p_c=0.0, p_m=0.0, max_pop_size=2, am_interval=10)
    parents = Population(generation=4, members=[evaluated("a", 0.2), evaluated("b", 0.4), evaluated("c", 0.1)])
    population = asyncio.run(ga.evolve_generation(parents))
    assert population.generation == 5
    assert population.ids() == ["b", "a"]
    assert prompts_of(transcript_path) == []


def test_failed_education_drops_individual():
    ga, _, log_path = make_ga([fenced(structure("fail")), fenced(structure(0.6))], p_c=1.0, p_m=0.0, am_interval=10)
    parents = Population(members=[evaluated("a", 0.2), evaluated("b", 0.4), evaluated("c", 0.1)])
    population = asyncio.run(ga.evolve_generation(parents))
    assert population.ids()[0] == "ind-0002"
    assert "ind-0001" not in population.ids()
    dropped = load_events(log_path, "individual_dropped")
    assert [d["individual_id"] for d in dropped] == ["ind-0001"]


def test_adaptive_memory_cadence():
    print("🧪 Тестирование обновления памяти по расписанию...")
    memory = AdaptiveMemory()
    ga, transcript_path, log_path = make_ga([NAMING], memory=memory, p_c=0.0, p_m=0.0, am_interval=2)
    first = asyncio.run(ga.evolve_generation(Population(generation=0, members=[evaluated("a", 0.2), evaluated("b", 0.4)])))
    assert memory.entries == []

    second = asyncio.run(ga.evolve_generation(first))
    assert second.generation == 2
    # У обеих особей одинаковая реализация: в память попадает одна функция
    assert memory.names() == ["pass_through"]
    assert memory.entries[0].purpose == "Returns the input unchanged"
    assert prompts_of(transcript_path) == ["am_naming"]

    updates = load_events(log_path, "am_update")
    assert [u["generation"] for u in updates] == [2]
    assert updates[0]["size"] == 1

    asyncio.run(ga.evolve_generation(second))
    assert len(load_events(log_path, "am_update")) == 1
    print("   ✅ Память обновляется раз в am_interval поколений")


def test_refresh_without_memory():
    print("🧪 Тестирование обновления популяции без памяти...")
    ga, transcript_path, log_path = make_ga(
        [fenced(structure(0.7)), fenced(structure(0.05))],
        p_c=0.0, p_m=0.0, max_pop_size=3, am_interval=1, refresh_on_am_interval=True, refresh_keep=1,
    )
    parents = Population(members=[evaluated("a", 0.2), evaluated("b", 0.4), evaluated("c", 0.1)])
    population = asyncio.run(ga.evolve_generation(parents))

    assert prompts_of(transcript_path) == ["exterior_user_generator"] * 2
    assert population.ids() == ["ind-0001", "b", "ind-0002"]
    refresh = load_events(log_path, "population_refresh")[0]
    assert refresh["kept"] == ["b"]
    assert refresh["fresh"] == ["ind-0001", "ind-0002"]
    assert all(m.generation_born == 1 for m in population.members if m.id.startswith("ind-"))
    print("   ✅ Лучшая особь сохранена, остальные заменены")


if __name__ == "__main__":
    print("🧬 Тестирование внешнего уровня")
    print("=" * 50)
    test_select()
    test_initialization_retries()
    test_initialization_failures()
    test_generation_draw_schedule()
    test_zero_probabilities_keep_population()
    test_failed_education_drops_individual()
    test_adaptive_memory_cadence()
    test_refresh_without_memory()
    print("\n✅ Все тесты завершены успешно!")
