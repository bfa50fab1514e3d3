import logging
import math
import time
import zlib
from typing import Callable, Dict, List, Optional, Tuple

from pydantic import BaseModel, Field

from app.core.calibration import calibrate, parse_ranges
from app.core.errors import (
    AssemblyError,
    BudgetExhaustedError,
    CalibrationError,
    EducationError,
    EvaluationError,
    ExtractionError,
    FixError,
    GatewayError,
    StructureError,
)
from app.core.gateway import LLMGateway
from app.core.knowledge import HeuBase, KnowledgeView
from app.core.models import FunctionImpl, HeuristicIndividual, sort_by_quality
from app.core.problems import ProblemInstance, ProblemSuite, instance_score
from app.core.prompts import PromptContext, PromptKit
from app.core.providers.llm_base import RequestTag
from app.core.run_config import CalibrationConfig, EducationConfig
from app.core.run_log import RunLog
from app.core.sandbox import EvaluationReport, EvaluationStatus, Sandbox
from app.core.structure import (
    assemble,
    make_impl,
    render_program,
    restore_max_time,
    set_hyper_values,
    split_program,
)
from app.utils.code_parse import CodeParser

logger = logging.getLogger(__name__)


class EvaluationSet(BaseModel):
    """Экземпляры и их эталонные значения"""
    instances: List[ProblemInstance]
    references: List[float]

    def subset(self, fraction: float) -> "EvaluationSet":
        count = max(1, math.ceil(len(self.instances) * fraction))
        return EvaluationSet(instances=self.instances[:count], references=self.references[:count])


class CandidateRecord(BaseModel):
    index: int
    status: str
    quality: Optional[float] = None
    fix_rounds: int = 0
    impl: str = ""


class SlotSearchRecord(BaseModel):
    """Поиск реализации одного слота: кандидаты и выбранный"""
    individual_id: str
    slot_id: int
    candidates: List[CandidateRecord] = Field(default_factory=list)
    chosen_index: int = -1


ContextFn = Callable[[], PromptContext]
ViewFn = Callable[[], KnowledgeView]


class Educator:
    """
    Обучение особи: реализация слотов по одному с выбором лучшего кандидата,
    исправление ошибок через LLM, оценка в песочнице и калибровка.
    """

    def __init__(
        self,
        gateway: LLMGateway,
        prompts: PromptKit,
        sandbox: Sandbox,
        problem: ProblemSuite,
        validation: EvaluationSet,
        cfg: EducationConfig = None,
        calibration: CalibrationConfig = None,
        context_fn: ContextFn = None,
        view_fn: ViewFn = None,
        run_log: Optional[RunLog] = None,
        heubase: Optional[HeuBase] = None,
        run_seed: int = 0,
    ):
        self.gateway = gateway
        self.prompts = prompts
        self.sandbox = sandbox
        self.problem = problem
        self.validation = validation
        self.cfg = cfg or EducationConfig()
        self.calibration = calibration or CalibrationConfig(enabled=False)
        self.context_fn = context_fn or (lambda: PromptContext(problem=problem.display_name or problem.kind))
        self.view_fn = view_fn or KnowledgeView
        self.run_log = run_log
        self.heubase = heubase
        self.run_seed = run_seed
        self.records: List[SlotSearchRecord] = []

    def _log(self, kind: str, **fields):
        if self.run_log is not None:
            self.run_log.event(kind, **fields)

    async def _ask_code(self, prompt_pair: Tuple[str, str], tag: RequestTag, prompt: str) -> str:
        system, user = prompt_pair
        response = await self.gateway.ask(system, user, tag=tag, prompt=prompt)
        return CodeParser.extract_code_block(response.text).code

    # Оценка

    async def evaluate(
        self,
        individual: HeuristicIndividual,
        dataset: Optional[EvaluationSet] = None,
    ) -> HeuristicIndividual:
        """
        Среднее качество на наборе экземпляров.

        Первый неуспешный отчет песочницы поднимается как EvaluationError.
        """
        dataset = dataset or self.validation
        view = self.view_fn()
        try:
            program = assemble(individual, view, self.problem.entry_point)
        except AssemblyError as e:
            report = EvaluationReport(status=EvaluationStatus.COMPILE_ERROR, stderr_tail=e.message)
            raise EvaluationError(e.message, report=report, code=e.code)

        reports = await self.sandbox.run_batch(
            program, dataset.instances, individual.structure.max_time_s, short_circuit=True,
        )
        self._log(
            "evaluation",
            individual_id=individual.id,
            reports=[r.to_log() for r in reports],
        )
        for report in reports:
            if not report.ok:
                raise EvaluationError(report.error_message(), report=report, code=report.status.value)

        scores = [
            instance_score(report.objective, reference, self.problem.sense)
            for report, reference in zip(reports, dataset.references)
        ]
        return individual.model_copy(update={
            "quality": sum(scores) / len(scores),
            "instance_scores": scores,
        })

    async def _try_evaluate(self, individual: HeuristicIndividual, dataset: EvaluationSet) -> Optional[HeuristicIndividual]:
        try:
            return await self.evaluate(individual, dataset)
        except EvaluationError:
            return None

    # Исправление

    def _rebuild(
        self,
        base: HeuristicIndividual,
        program: str,
        committed: Dict[int, FunctionImpl],
    ) -> HeuristicIndividual:
        structure, sources = split_program(program, base.structure, keep_max_time=False)
        view = self.view_fn()
        impls = {sid: make_impl(sid, src, view) for sid, src in sources.items() if structure.slot(sid)}
        impls.update({sid: impl for sid, impl in committed.items() if structure.slot(sid)})
        return base.model_copy(update={"structure": structure, "impls": impls, "quality": None})

    async def fix(
        self,
        individual: HeuristicIndividual,
        report: EvaluationReport,
        committed: Optional[Dict[int, FunctionImpl]] = None,
    ) -> Tuple[HeuristicIndividual, int]:
        """
        До max_fix_try раундов: промпт исправления с текстом ошибки, разбор ответа,
        повторная оценка. Закрепленные реализации возвращаются после каждого раунда.
        Возвращает оцененную особь и число раундов.
        """
        if report.ok:
            return individual, 0

        committed = committed or {}
        original = individual.structure
        current = individual
        max_rounds = self.cfg.max_fix_try
        max_time_violated = False
        rounds = 0
        while rounds < max_rounds:
            rounds += 1
            try:
                code = await self._ask_code(
                    self.prompts.fix(render_program(current), report.error_message()),
                    tag="fixing",
                    prompt="fix",
                )
                candidate = self._rebuild(current, code, committed)
            except (ExtractionError, StructureError) as e:
                logger.info(f"Исправление {individual.id}, раунд {rounds}: ответ не разобран ({e})")
                report = EvaluationReport(status=EvaluationStatus.COMPILE_ERROR, stderr_tail=str(e))
                continue

            if candidate.structure.max_time_s != original.max_time_s:
                logger.warning(f"Исправление {individual.id} изменило MAX_TIME, восстанавливаем")
                candidate = candidate.model_copy(update={
                    "structure": restore_max_time(candidate.structure, original),
                })
                if not max_time_violated:
                    max_time_violated = True
                    max_rounds += 1

            if not candidate.is_complete():
                missing = [s for s in candidate.structure.slot_ids() if s not in candidate.impls]
                report = EvaluationReport(
                    status=EvaluationStatus.COMPILE_ERROR,
                    stderr_tail=f"NameError: functions {', '.join(f'func_{s}' for s in missing)} are not implemented",
                )
                current = candidate
                continue

            try:
                return await self.evaluate(candidate), rounds
            except EvaluationError as e:
                report = e.report
                current = candidate

        raise FixError(
            f"Особь {individual.id} не исправлена за {rounds} раундов",
            code="fix_budget_exhausted",
            report=report.to_log() if report else None,
        )

    async def fix_and_evaluate(
        self,
        individual: HeuristicIndividual,
        committed: Optional[Dict[int, FunctionImpl]] = None,
    ) -> Tuple[HeuristicIndividual, int]:
        if not individual.is_complete():
            missing = [s for s in individual.structure.slot_ids() if s not in individual.impls]
            report = EvaluationReport(
                status=EvaluationStatus.COMPILE_ERROR,
                stderr_tail=f"NameError: functions {', '.join(f'func_{s}' for s in missing)} are not implemented",
            )
            return await self.fix(individual, report, committed)
        try:
            return await self.evaluate(individual), 0
        except EvaluationError as e:
            return await self.fix(individual, e.report, committed)

    # Обучение

    async def educate(self, individual: HeuristicIndividual) -> HeuristicIndividual:
        """Полностью реализованная и оцененная особь; уже оцененные возвращаются как есть"""
        if individual.is_evaluated:
            return individual

        tokens_before = self.gateway.budget.tokens_used
        if self.cfg.mode == "one_shot":
            educated, first_quality = await self._educate_one_shot(individual)
        else:
            educated, first_quality = await self._educate_by_slots(individual)

        if self.calibration.enabled and not self.gateway.budget.exhausted():
            educated = await self.calibrate(educated)

        educated = educated.add_tokens(self.gateway.budget.tokens_used - tokens_before)
        if self.heubase is not None:
            # учитывается только итоговая программа, не промежуточные кандидаты
            self.heubase.record_selection(assemble(educated, self.view_fn(), self.problem.entry_point))
        self._log(
            "education",
            individual_id=educated.id,
            mode=self.cfg.mode,
            first_quality=first_quality,
            final_quality=educated.quality,
            token_cost=educated.token_cost,
            tokens_cum=self.gateway.budget.tokens_used,
        )
        return educated

    async def _educate_one_shot(self, individual: HeuristicIndividual) -> Tuple[HeuristicIndividual, float]:
        ctx = self.context_fn()
        try:
            code = await self._ask_code(
                self.prompts.fill_all(ctx, render_program(individual)), tag="generation", prompt="fill_allFunc",
            )
            candidate = self._rebuild(individual, code, {})
            if candidate.structure.max_time_s != individual.structure.max_time_s:
                candidate = candidate.model_copy(update={
                    "structure": restore_max_time(candidate.structure, individual.structure),
                })
        except (ExtractionError, StructureError) as e:
            raise EducationError(f"{individual.id}: реализация не разобрана ({e})", code="all_candidates_failed_for_slot")
        try:
            educated, _ = await self.fix_and_evaluate(candidate)
        except FixError as e:
            raise EducationError(f"{individual.id}: {e.message}", code="all_candidates_failed_for_slot")
        return educated, educated.quality

    async def _candidate(
        self,
        ctx: PromptContext,
        base: HeuristicIndividual,
        slot_id: int,
        committed: Dict[int, FunctionImpl],
        previous: List[str],
    ) -> Tuple[Optional[HeuristicIndividual], CandidateRecord]:
        index = len(previous)
        partial = base.model_copy(update={"impls": dict(committed), "quality": None})
        code = await self._ask_code(
            self.prompts.fill_one(ctx, render_program(partial), slot_id, previous),
            tag="generation",
            prompt="fill_1func",
        )
        source = CodeParser.function_source(code, f"func_{slot_id}")
        if source is None:
            previous.append(code)
            return None, CandidateRecord(index=index, status="extraction_error", impl=code)
        previous.append(source)

        view = self.view_fn()
        chosen = {**committed, slot_id: make_impl(slot_id, source, view)}
        temp = base.model_copy(update={"impls": chosen, "quality": None})
        completion = await self._ask_code(
            self.prompts.fill_all(ctx, render_program(temp)), tag="generation", prompt="fill_allFunc",
        )
        try:
            _, completed = split_program(completion, temp.structure)
        except StructureError as e:
            logger.info(f"Дополнение для func_{slot_id} не разобрано: {e}")
            completed = {}
        impls = {sid: make_impl(sid, src, view) for sid, src in completed.items()}
        impls.update(chosen)
        candidate = temp.model_copy(update={"impls": impls})

        try:
            evaluated, rounds = await self.fix_and_evaluate(candidate, committed)
        except FixError:
            return None, CandidateRecord(index=index, status="fix_failed", fix_rounds=self.cfg.max_fix_try, impl=source)
        return evaluated, CandidateRecord(
            index=index,
            status="ok",
            quality=evaluated.quality,
            fix_rounds=rounds,
            impl=evaluated.impls[slot_id].source,
        )

    async def _educate_by_slots(self, individual: HeuristicIndividual) -> Tuple[HeuristicIndividual, float]:
        slot_ids = individual.structure.slot_ids()
        if not slot_ids:
            try:
                educated, _ = await self.fix_and_evaluate(individual)
            except FixError as e:
                raise EducationError(f"{individual.id}: {e.message}", code="all_candidates_failed_for_slot")
            return educated, educated.quality

        ctx = self.context_fn()
        base = individual.model_copy(update={"impls": {}, "quality": None})
        committed: Dict[int, FunctionImpl] = {}
        evaluated_all: List[HeuristicIndividual] = []
        first_quality: Optional[float] = None
        chosen_individual: Optional[HeuristicIndividual] = None

        for slot_id in slot_ids:
            record = SlotSearchRecord(individual_id=individual.id, slot_id=slot_id)
            results: List[Optional[HeuristicIndividual]] = []
            previous: List[str] = []
            try:
                for _ in range(self.cfg.mc_func_pop):
                    try:
                        evaluated, entry = await self._candidate(ctx, base, slot_id, committed, previous)
                    except ExtractionError as e:
                        evaluated, entry = None, CandidateRecord(index=len(previous), status="extraction_error")
                        previous.append("")
                        logger.info(f"func_{slot_id}: пустой ответ LLM ({e})")
                    results.append(evaluated)
                    record.candidates.append(entry)
                    if evaluated is not None:
                        evaluated_all.append(evaluated)
                        if first_quality is None:
                            first_quality = evaluated.quality
            except BudgetExhaustedError:
                self._log_record(record)
                if evaluated_all:
                    best = sort_by_quality(evaluated_all)[0]
                    logger.warning(f"Бюджет исчерпан при обучении {individual.id}, берем лучший вариант")
                    return best, first_quality
                raise

            successful = [i for i, r in enumerate(results) if r is not None]
            if not successful:
                self._log_record(record)
                raise EducationError(
                    f"{individual.id}: все кандидаты для func_{slot_id} провалились",
                    code="all_candidates_failed_for_slot",
                )
            chosen = max(successful, key=lambda i: (results[i].quality, -i))
            record.chosen_index = chosen
            self._log_record(record)

            chosen_individual = results[chosen]
            committed[slot_id] = chosen_individual.impls[slot_id]
            base = base.model_copy(update={"structure": chosen_individual.structure})
            logger.info(f"{individual.id}: func_{slot_id} закреплена, качество {chosen_individual.quality:.6f}")

        return chosen_individual, first_quality

    def _log_record(self, record: SlotSearchRecord):
        self.records.append(record)
        for candidate in record.candidates:
            self._log(
                "slot_candidate",
                individual_id=record.individual_id,
                slot_id=record.slot_id,
                candidate_idx=candidate.index,
                status=candidate.status,
                quality=candidate.quality,
                fix_rounds=candidate.fix_rounds,
            )
        self._log(
            "slot_search",
            individual_id=record.individual_id,
            slot_id=record.slot_id,
            chosen_index=record.chosen_index,
        )

    # Калибровка

    async def calibrate(self, individual: HeuristicIndividual) -> HeuristicIndividual:
        tunable = [p for p in individual.structure.hyper_block if p.name != "MAX_TIME"]
        if not tunable or self.calibration.max_evals <= 0:
            return individual

        try:
            response = await self.gateway.ask(
                *self.prompts.ask_pms(render_program(individual)), tag="calibration_ranges", prompt="ask_pms_interval",
            )
            ranges = parse_ranges(response.text, individual.structure)
        except CalibrationError as e:
            logger.warning(f"Калибровка {individual.id} пропущена: {e}")
            self._log("calibration", individual_id=individual.id, skipped=e.code)
            return individual
        except GatewayError as e:
            logger.warning(f"Калибровка {individual.id} пропущена: {e}")
            return individual

        subset = self.validation.subset(self.calibration.subset_fraction)

        async def search(params):
            candidate = individual.model_copy(update={"quality": None})
            try:
                candidate = candidate.model_copy(update={
                    "structure": set_hyper_values(individual.structure, params),
                })
            except StructureError:
                return None
            evaluated = await self._try_evaluate(candidate, subset)
            return evaluated.quality if evaluated is not None else None

        async def confirm(candidate: HeuristicIndividual):
            return await self._try_evaluate(candidate, self.validation)

        deadline = None
        if self.gateway.budget.mode == "time_seconds":
            self.gateway.sync_clock()
            deadline = time.monotonic() + self.calibration.budget_fraction * self.gateway.budget.remaining()

        result = await calibrate(
            individual,
            ranges,
            search,
            max_evals=self.calibration.max_evals,
            seed=zlib.crc32(f"{self.run_seed}:{individual.id}".encode("utf-8")),
            sigma0=self.calibration.sigma0,
            confirm_fn=confirm,
            deadline=deadline,
        )
        self._log(
            "calibration",
            individual_id=individual.id,
            accepted=result.accepted,
            evals_used=result.evals_used,
            best_params=result.best_params,
            pre_quality=result.pre_quality,
            post_quality=result.post_quality,
        )
        return result.individual
