import logging
import re
from typing import Callable, List, Optional, Tuple

import numpy as np

from app.core.education import Educator
from app.core.errors import (
    BudgetExhaustedError,
    EducationError,
    ExtractionError,
    FixError,
    PopulationError,
    StructureError,
)
from app.core.gateway import LLMGateway
from app.core.memory import AdaptiveMemory
from app.core.models import HeuristicIndividual, Lineage, Population, sort_by_quality
from app.core.prompts import PromptContext, PromptKit
from app.core.run_config import GAConfig
from app.core.run_log import RunLog
from app.core.structure import parse_structure
from app.utils.code_parse import CodeParser

logger = logging.getLogger(__name__)

_DOCSTRING_RE = re.compile(r'("""|\'\'\')([\s\S]*?)\1')


def select(members: List[HeuristicIndividual], max_pop_size: int) -> Population:
    """Оставляет лучшие max_pop_size оцененных особей"""
    evaluated = [m for m in members if m.is_evaluated]
    if not evaluated:
        raise PopulationError("После отбора не осталось оцененных особей", code="empty_after_filtering")
    return Population(members=sort_by_quality(evaluated)[:max_pop_size])


class ExteriorGA:
    """Внешний уровень: эволюция структур через LLM с обучением потомков"""

    def __init__(
        self,
        gateway: LLMGateway,
        prompts: PromptKit,
        educator: Educator,
        cfg: GAConfig,
        context_fn: Callable[[], PromptContext],
        memory: Optional[AdaptiveMemory] = None,
        run_log: Optional[RunLog] = None,
        seed: int = 0,
        reserved_names: Tuple[str, ...] = (),
    ):
        self.gateway = gateway
        self.prompts = prompts
        self.educator = educator
        self.cfg = cfg
        self.context_fn = context_fn
        self.memory = memory
        self.run_log = run_log
        self.rng = np.random.default_rng(seed)
        self.reserved_names = reserved_names
        self.id_counter = 0
        self.budget_exhausted = False

    def _log(self, kind: str, **fields):
        if self.run_log is not None:
            self.run_log.event(kind, **fields)

    def next_id(self) -> str:
        self.id_counter += 1
        return f"ind-{self.id_counter:04d}"

    def state(self) -> dict:
        return {"rng": self.rng.bit_generator.state, "id_counter": self.id_counter}

    def load_state(self, state: dict):
        self.rng.bit_generator.state = state["rng"]
        self.id_counter = int(state["id_counter"])

    def _draw(self, probability: float) -> bool:
        return bool(self.rng.random() < probability)

    async def _request_structure(
        self,
        prompt_pair: Tuple[str, str],
        prompt: str,
        lineage: Lineage,
        generation: int,
    ) -> Optional[HeuristicIndividual]:
        system, user = prompt_pair
        response = await self.gateway.ask(system, user, tag="generation", prompt=prompt)
        try:
            code = CodeParser.extract_code_block(response.text).code
            structure = parse_structure(code, max_func_num=self.cfg.max_func_num)
        except (ExtractionError, StructureError) as e:
            logger.warning(f"Структура ({prompt}) отброшена: {e}")
            self._log("structure_rejected", prompt=prompt, code=getattr(e, "code", "parse_error"), generation=generation)
            return None
        return HeuristicIndividual(
            id=self.next_id(),
            structure=structure,
            lineage=lineage,
            generation_born=generation,
            token_cost=response.total_tokens,
        )

    # Инициализация

    async def initialize_population(self, count: Optional[int] = None, generation: int = 0) -> Population:
        """Запрашивает count структур; ошибки разбора повторяются не больше max_init_retries раз"""
        count = self.cfg.init_pop_size if count is None else count
        members: List[HeuristicIndividual] = []
        failures = 0
        while len(members) < count:
            try:
                individual = await self._request_structure(
                    self.prompts.initial_prompt(self.context_fn()),
                    "exterior_user_generator",
                    Lineage(kind="init"),
                    generation,
                )
            except BudgetExhaustedError:
                self.budget_exhausted = True
                self._log("budget_exhausted", stage="initialization", generation=generation)
                break
            if individual is None:
                failures += 1
                if failures > self.cfg.max_init_retries:
                    # попытка потеряна, размер популяции уменьшается
                    count -= 1
                    failures = 0
                continue
            members.append(individual)

        if not members and not self.budget_exhausted:
            raise PopulationError("Ни одна структура не разобрана", code="all_candidates_unparseable")
        logger.info(f"Поколение {generation}: получено {len(members)} структур")
        return Population(generation=generation, members=members)

    # Обучение

    async def educate_all(self, members: List[HeuristicIndividual], generation: int) -> List[HeuristicIndividual]:
        """Обучает по порядку; провалившиеся особи удаляются"""
        educated: List[HeuristicIndividual] = []
        for individual in members:
            if self.budget_exhausted and not individual.is_evaluated:
                continue
            try:
                result = await self.educator.educate(individual)
            except (EducationError, FixError) as e:
                logger.warning(f"Особь {individual.id} удалена: {e}")
                self._log("individual_dropped", individual_id=individual.id, code=e.code, generation=generation)
                continue
            except BudgetExhaustedError:
                self.budget_exhausted = True
                self._log("budget_exhausted", stage="education", individual_id=individual.id, generation=generation)
                continue
            if self.memory is not None and not individual.is_evaluated:
                self.memory.record_usage(result, generation)
            educated.append(result)
            if self.gateway.budget.exhausted():
                self.budget_exhausted = True
        return educated

    # Поколение

    async def _offspring(self, members: List[HeuristicIndividual], generation: int) -> List[HeuristicIndividual]:
        ctx = self.context_fn()
        offspring: List[HeuristicIndividual] = []
        requests = []
        # сначала все скрещивания соседних по рангу, затем мутации к элите
        for i in range(len(members) - 1):
            if self._draw(self.cfg.p_c):
                requests.append(("crossover", members[i], members[i + 1]))
        elite = members[0] if members else None
        for member in members:
            if self._draw(self.cfg.p_m):
                requests.append(("mutation", member, elite))

        for kind, first, second in requests:
            if self.budget_exhausted:
                break
            try:
                if kind == "crossover":
                    pair = self.prompts.render_crossover(ctx, first, second)
                    lineage = Lineage(kind="crossover", parents=[first.id, second.id])
                else:
                    pair = self.prompts.render_mutation(ctx, first.structure, second.structure)
                    lineage = Lineage(kind="mutation", parents=[first.id])
                child = await self._request_structure(pair, kind, lineage, generation)
            except BudgetExhaustedError:
                self.budget_exhausted = True
                self._log("budget_exhausted", stage=kind, generation=generation)
                break
            if child is not None:
                offspring.append(child)
        return offspring

    async def evolve_generation(self, population: Population) -> Population:
        members = sort_by_quality([m for m in population.members if m.is_evaluated])
        generation = population.generation + 1
        previous_best = members[0].quality if members else None

        offspring = await self._offspring(members, generation)
        educated = await self.educate_all(offspring, generation)
        selected = select(members + educated, self.cfg.max_pop_size)

        best = selected.members[0]
        if self.memory is not None and previous_best is not None and best.quality > previous_best:
            self.memory.credit_improvement(best, best.quality - previous_best)

        am_updated = False
        if generation % self.cfg.am_interval == 0 and not self.budget_exhausted:
            if self.memory is not None:
                events = await self.memory.update(selected.members, generation, self.name_function, self.reserved_names)
                self._log(
                    "am_update",
                    generation=generation,
                    events=[e.model_dump(exclude_none=True) for e in events],
                    size=len(self.memory.entries),
                )
                am_updated = True
            elif self.cfg.refresh_on_am_interval:
                selected = await self.refresh(selected, generation)

        population = Population(generation=generation, members=selected.members)
        self._log(
            "generation",
            generation=generation,
            population=population.ids(),
            offspring=[{"id": c.id, "lineage": c.lineage.model_dump()} for c in offspring],
            best_quality=population.best().quality,
            budget_consumed=self.gateway.budget.consumed,
            am_updated=am_updated,
        )
        return population

    async def refresh(self, population: Population, generation: int) -> Population:
        """Сохраняет refresh_keep лучших и дополняет популяцию новыми структурами"""
        kept = population.members[:self.cfg.refresh_keep]
        fresh = await self.initialize_population(self.cfg.max_pop_size - len(kept), generation)
        educated = await self.educate_all(fresh.members, generation)
        self._log("population_refresh", generation=generation, kept=[m.id for m in kept], fresh=[m.id for m in educated])
        return select(kept + educated, self.cfg.max_pop_size)

    async def name_function(self, source: str) -> Optional[Tuple[str, str]]:
        """Имя и описание функции для Adaptive Memory по ответу LLM"""
        system, user = self.prompts.am_naming(source)
        response = await self.gateway.ask(system, user, tag="am_naming", prompt="am_naming")
        code = CodeParser.extract_code_block(response.text).code
        blocks = CodeParser.find_functions(code)
        if not blocks:
            return None
        docstring = _DOCSTRING_RE.search(code)
        return blocks[0].name, docstring.group(2).strip() if docstring else ""
