import logging
import os
import time
from typing import List, Optional

from pydantic import BaseModel

from app.config import Config
from app.core.education import Educator, EvaluationSet
from app.core.errors import ConfigError, EvaluationError, PopulationError
from app.core.exterior import ExteriorGA, select
from app.core.gateway import LLMGateway, RunBudget
from app.core.knowledge import HeuBase, KnoBase, KnowledgeView, render_heubase_prompt
from app.core.memory import AdaptiveMemory
from app.core.models import HeuristicIndividual, Population
from app.core.problems import ProblemSuite, get_problem, quality_to_gap
from app.core.prompts import PromptContext, PromptKit
from app.core.report import aggregate
from app.core.providers import LLMProvider, MockLLMProvider, OpenAIChatProvider
from app.core.run_config import RunConfig
from app.core.run_log import JsonlWriter, RunLog
from app.core.sandbox import Sandbox
from app.core.structure import assemble, individual_from_record
from app.utils.file_utils import FileUtils

logger = logging.getLogger(__name__)

LOG_FILE = "log.jsonl"
TRANSCRIPT_FILE = "transcript.jsonl"
CHECKPOINT_FILE = "checkpoint.json"
CONFIG_FILE = "config.json"
SUMMARY_FILE = "summary.json"
BEST_FILE = "best.json"
BEST_PROGRAM_FILE = "best_program.txt"
AM_FILE = "am.json"
HEUBASE_STATS_FILE = "heubase_stats.json"


class RunSummary(BaseModel):
    run_id: str
    status: str  # completed | budget_exhausted | paused | failed
    problem: str
    sense: str
    best_id: Optional[str] = None
    best_quality: Optional[float] = None
    best_gap: Optional[float] = None
    test_gap: Optional[float] = None
    generations_completed: int = 0
    tokens_used: int = 0
    budget_consumed: int = 0
    budget_exhausted: bool = False
    wall_s: float = 0.0
    error: Optional[str] = None


def run_dir_for(cfg: RunConfig) -> str:
    run_id = cfg.run_id or f"{cfg.name}-seed{cfg.seed}"
    return os.path.join(cfg.output_dir, run_id)


def build_provider(cfg: RunConfig) -> LLMProvider:
    if cfg.llm.provider == "mock":
        return MockLLMProvider.from_file(cfg.llm.transcript)
    Config.validate(live_llm=True, base_url=cfg.llm.base_url, env_name=cfg.llm.api_key_env)
    return OpenAIChatProvider(
        api_key=Config.api_key(cfg.llm.api_key_env),
        base_url=cfg.llm.base_url or Config.LLM_BASE_URL,
        model=cfg.llm.model or Config.LLM_MODEL,
        max_retries=cfg.llm.max_retries,
        backoff_s=cfg.llm.backoff_s,
        timeout_s=cfg.llm.request_timeout_s,
    )


def build_dataset(problem: ProblemSuite, cfg: RunConfig, seeds: List[int]) -> EvaluationSet:
    instances = [problem.generate(cfg.problem.size, seed) for seed in seeds]
    references = [
        problem.reference(instance, cfg.problem.reference_method, cfg.problem.reference_file).value
        for instance in instances
    ]
    return EvaluationSet(instances=instances, references=references)


class EngineRun:
    """
    Один запуск: сборка зависимостей, цикл поколений, контрольные точки
    после каждого поколения и итоговые артефакты в runs/<id>/.
    """

    def __init__(self, cfg: RunConfig, run_dir: Optional[str] = None, provider: Optional[LLMProvider] = None):
        self.cfg = cfg
        self.run_dir = run_dir or run_dir_for(cfg)
        self.run_id = os.path.basename(os.path.normpath(self.run_dir))
        self.deterministic = cfg.deterministic
        self._provider = provider
        self._started = time.monotonic()
        self.population: Optional[Population] = None

    def _path(self, name: str) -> str:
        return os.path.join(self.run_dir, name)

    def _build(self):
        cfg = self.cfg
        self.problem = get_problem(cfg.problem.kind)
        self.validation = build_dataset(self.problem, cfg, cfg.problem.validation_seeds)
        self.test = build_dataset(self.problem, cfg, cfg.problem.test_seeds) if cfg.problem.test_seeds else None

        self.prompts = PromptKit(Config.PROMPTS_DIR)
        self.heubase: Optional[HeuBase] = None
        self.knobase: Optional[KnoBase] = None
        if cfg.knowledge.enabled:
            if cfg.knowledge.heubase_manifest:
                self.heubase = HeuBase.load_manifest(cfg.knowledge.heubase_manifest)
            if cfg.knowledge.knobase_dir:
                self.knobase = KnoBase.load_dir(cfg.knowledge.knobase_dir)
        self.memory = AdaptiveMemory(cfg.am) if cfg.am.enabled else None

        self.provider = self._provider or build_provider(cfg)
        self.budget = RunBudget(mode=cfg.budget.mode, limit=cfg.budget.limit)
        self.run_log = RunLog(self._path(LOG_FILE), self.deterministic)
        self.transcript = JsonlWriter(self._path(TRANSCRIPT_FILE), self.deterministic)
        self.gateway = LLMGateway(self.provider, self.budget, cfg.llm, self.transcript, self.deterministic)
        self.sandbox = Sandbox(self.problem, cfg.sandbox, record_timing=not self.deterministic)

        self.educator = Educator(
            gateway=self.gateway,
            prompts=self.prompts,
            sandbox=self.sandbox,
            problem=self.problem,
            validation=self.validation,
            cfg=cfg.education,
            calibration=cfg.calibration,
            context_fn=self.context,
            view_fn=self.view,
            run_log=self.run_log,
            heubase=self.heubase,
            run_seed=cfg.seed,
        )
        self.ga = ExteriorGA(
            gateway=self.gateway,
            prompts=self.prompts,
            educator=self.educator,
            cfg=cfg.ga,
            context_fn=self.context,
            memory=self.memory,
            run_log=self.run_log,
            seed=cfg.seed,
            reserved_names=tuple(e.name for e in self.heubase.entries) if self.heubase else (),
        )

    # Знания для промптов и сборки

    def context(self) -> PromptContext:
        tags = self.problem.tags
        listing = render_heubase_prompt(
            self.heubase,
            tags,
            self.prompts.render("heubase_common"),
            self.memory.render_listing() if self.memory is not None else [],
        )
        return PromptContext(
            problem=self.problem.display_name,
            alg_type=self.problem.alg_type,
            problem_description=self.problem.description(),
            baseline=self.problem.function_signature(),
            timeout=self.cfg.problem.timeout_s,
            max_func_num=self.cfg.ga.max_func_num,
            prior_knowledge=self.knobase.text_for(tags) if self.knobase is not None else "",
            knowledge_listing=listing,
        )

    def view(self) -> KnowledgeView:
        functions = []
        if self.heubase is not None:
            functions.extend(self.heubase.view(self.problem.tags))
        if self.memory is not None:
            functions.extend(self.memory.view())
        return KnowledgeView(functions)

    # Контрольные точки

    def checkpoint(self):
        FileUtils.write_json(self._path(CHECKPOINT_FILE), {
            "generation": self.population.generation,
            "population": [m.to_record() for m in self.population.members],
            "memory": self.memory.to_dict() if self.memory is not None else None,
            "budget": self.budget.model_dump(),
            "ga": self.ga.state(),
            "provider": self.provider.state(),
            "log_lines": self.run_log.lines,
            "transcript_lines": self.transcript.lines,
            "heubase": self.heubase.stats_dict() if self.heubase is not None else None,
        })
        if self.memory is not None:
            FileUtils.write_json(self._path(AM_FILE), self.memory.to_dict())
        logger.info(f"Контрольная точка: поколение {self.population.generation}")

    def _restore(self, state: dict):
        self.run_log.truncate(int(state["log_lines"]))
        self.transcript.truncate(int(state["transcript_lines"]))
        self.budget = RunBudget.model_validate(state["budget"])
        self.gateway.budget = self.budget
        self.ga.load_state(state["ga"])
        self.provider.load_state(state.get("provider") or {})
        if self.memory is not None and state.get("memory"):
            restored = AdaptiveMemory.from_dict(state["memory"])
            self.memory.entries = restored.entries
            self.memory.generation = restored.generation
        if self.heubase is not None and state.get("heubase"):
            self.heubase.load_stats(state["heubase"])
        members = [
            individual_from_record(record, max_func_num=self.cfg.ga.max_func_num)
            for record in state["population"]
        ]
        self.population = Population(generation=int(state["generation"]), members=members)

    # Запуск

    async def start(self, stop_after: Optional[int] = None, overwrite: bool = False) -> RunSummary:
        if os.path.exists(self._path(CHECKPOINT_FILE)) and not overwrite:
            raise ConfigError(
                f"Каталог {self.run_dir} уже содержит запуск; используйте resume или --overwrite",
                code="config_invalid",
            )
        if os.path.isdir(self.run_dir):
            FileUtils.cleanup_dir(self.run_dir)
        FileUtils.ensure_dir(self.run_dir)
        FileUtils.write_json(self._path(CONFIG_FILE), self.cfg.model_dump(mode="json", by_alias=True))

        self._build()
        self.run_log.event(
            "run_start",
            run_id=self.run_id,
            problem=self.problem.kind,
            size=self.cfg.problem.size,
            seed=self.cfg.seed,
            validation=[
                {"instance_id": i.instance_id, "reference": r}
                for i, r in zip(self.validation.instances, self.validation.references)
            ],
            budget={"mode": self.budget.mode, "limit": self.budget.limit},
        )

        initial = await self.ga.initialize_population()
        if not initial.members:
            return await self.finish(None, status="budget_exhausted")
        educated = await self.ga.educate_all(initial.members, 0)
        try:
            self.population = select(educated, self.cfg.ga.max_pop_size)
        except PopulationError as e:
            status = "budget_exhausted" if self.ga.budget_exhausted else "failed"
            return await self.finish(None, status=status, error=str(e))

        self.run_log.event(
            "generation",
            generation=0,
            population=self.population.ids(),
            offspring=[{"id": m.id, "lineage": m.lineage.model_dump()} for m in initial.members],
            best_quality=self.population.best().quality,
            budget_consumed=self.budget.consumed,
            am_updated=False,
        )
        self.checkpoint()
        return await self._loop(stop_after)

    @classmethod
    async def resume(cls, run_dir: str, stop_after: Optional[int] = None,
                     provider: Optional[LLMProvider] = None) -> RunSummary:
        checkpoint_path = os.path.join(run_dir, CHECKPOINT_FILE)
        if not os.path.exists(checkpoint_path):
            raise ConfigError(f"Нет контрольной точки в {run_dir}", code="config_invalid")
        cfg = RunConfig.from_dict(FileUtils.read_json(os.path.join(run_dir, CONFIG_FILE)))
        run = cls(cfg, run_dir=run_dir, provider=provider)
        run._build()
        run._restore(FileUtils.read_json(checkpoint_path))
        logger.info(f"Продолжаем {run.run_id} с поколения {run.population.generation}")
        return await run._loop(stop_after)

    async def _loop(self, stop_after: Optional[int]) -> RunSummary:
        while self.population.generation < self.cfg.ga.generations and not self.ga.budget_exhausted:
            if self.budget.exhausted():
                self.ga.budget_exhausted = True
                break
            self.population = await self.ga.evolve_generation(self.population)
            self.checkpoint()
            if stop_after is not None and self.population.generation >= stop_after:
                logger.info(f"Запуск приостановлен после поколения {self.population.generation}")
                return self._summary(self.population.best(), status="paused")

        status = "budget_exhausted" if self.ga.budget_exhausted else "completed"
        return await self.finish(self.population.best(), status=status)

    # Итоги

    async def evaluate_test(self, best: HeuristicIndividual) -> Optional[float]:
        """Оценка лучшей особи на отложенных тестовых экземплярах"""
        if self.test is None:
            return None
        try:
            evaluated = await self.educator.evaluate(best, self.test)
        except EvaluationError as e:
            logger.warning(f"Тестовая оценка {best.id} провалилась: {e}")
            self.run_log.event("test_evaluation", individual_id=best.id, status=e.code, instances=[])
            return None

        rows = []
        for instance, reference, score in zip(self.test.instances, self.test.references, evaluated.instance_scores):
            objective = reference * (1 - score) if self.problem.sense == "min" else reference * score
            rows.append({
                "instance_id": instance.instance_id,
                "reference": reference,
                "objective": objective,
                "gap": quality_to_gap(score, self.problem.sense),
            })
        mean_gap = sum(r["gap"] for r in rows) / len(rows)
        self.run_log.event("test_evaluation", individual_id=best.id, status="ok", instances=rows, mean_gap=mean_gap)
        return mean_gap

    def _summary(self, best: Optional[HeuristicIndividual], status: str, error: Optional[str] = None,
                 test_gap: Optional[float] = None) -> RunSummary:
        return RunSummary(
            run_id=self.run_id,
            status=status,
            problem=self.cfg.problem.kind,
            sense=self.problem.sense,
            best_id=best.id if best else None,
            best_quality=best.quality if best else None,
            best_gap=quality_to_gap(best.quality, self.problem.sense) if best else None,
            test_gap=test_gap,
            generations_completed=self.population.generation if self.population else 0,
            tokens_used=self.budget.tokens_used,
            budget_consumed=self.budget.consumed,
            budget_exhausted=self.ga.budget_exhausted or self.budget.exhausted(),
            wall_s=0.0 if self.deterministic else round(time.monotonic() - self._started, 3),
            error=error,
        )

    async def finish(self, best: Optional[HeuristicIndividual], status: str, error: Optional[str] = None) -> RunSummary:
        test_gap = await self.evaluate_test(best) if best is not None else None
        summary = self._summary(best, status, error, test_gap)

        if best is not None:
            FileUtils.write_json(self._path(BEST_FILE), best.to_record())
            FileUtils.write_text(self._path(BEST_PROGRAM_FILE), assemble(best, self.view(), self.problem.entry_point))
        if self.memory is not None:
            FileUtils.write_json(self._path(AM_FILE), self.memory.to_dict())
        if self.heubase is not None:
            FileUtils.write_json(self._path(HEUBASE_STATS_FILE), {
                **self.heubase.stats_dict(),
                "frequencies": self.heubase.frequencies(),
            })
        FileUtils.write_json(self._path(SUMMARY_FILE), summary.model_dump())
        self.run_log.event("run_end", **summary.model_dump(exclude={"wall_s"}))
        logger.info(
            f"Запуск {self.run_id}: {status}, лучшая особь {summary.best_id}, "
            f"разрыв {summary.best_gap}, токенов {summary.tokens_used}"
        )
        return summary


async def bench(cfg: RunConfig, attempts: int, overwrite: bool = False) -> str:
    """Запускает конфигурацию attempts раз с сидами seed+k и пишет aggregate.csv"""
    if attempts < 1:
        raise ConfigError("attempts должно быть не меньше 1", code="config_invalid")
    bench_dir = FileUtils.ensure_dir(os.path.join(cfg.output_dir, f"{cfg.name}-bench"))
    run_dirs = []
    for k in range(attempts):
        attempt = cfg.model_copy(update={"seed": cfg.seed + k, "run_id": f"{cfg.name}-attempt{k}"})
        run_dir = os.path.join(bench_dir, attempt.run_id)
        run_dirs.append(run_dir)
        try:
            summary = await EngineRun(attempt, run_dir=run_dir).start(overwrite=overwrite)
            logger.info(f"Попытка {k}: {summary.status}, разрыв {summary.best_gap}")
        except Exception as e:
            logger.error(f"Попытка {k} завершилась ошибкой: {e}")
    return aggregate(run_dirs, bench_dir)
