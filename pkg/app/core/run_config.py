import logging
import os
from typing import Any, Dict, List, Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from app.config import Config
from app.core.errors import ConfigError

logger = logging.getLogger(__name__)


class ProblemConfig(BaseModel):
    kind: Literal["tsp", "bpp", "mis", "cvrp"] = "tsp"
    size: int = Field(default=20, ge=1)
    validation_seeds: List[int] = Field(default_factory=lambda: [0, 1], min_length=1)
    test_seeds: List[int] = Field(default_factory=lambda: [1000, 1001])
    reference_method: Literal["auto", "brute_force", "file", "baseline", "lower_bound"] = "auto"
    reference_file: Optional[str] = None
    # Значение MAX_TIME, которое требуют промпты
    timeout_s: int = Field(default=60, ge=1)


class BudgetConfig(BaseModel):
    mode: Literal["tokens", "time_seconds"] = "tokens"
    limit: int = Field(default=2_000_000, ge=0)


class GAConfig(BaseModel):
    init_pop_size: int = Field(default=5, ge=1)
    max_pop_size: int = Field(default=5, ge=2)
    p_c: float = Field(default=0.7, ge=0.0, le=1.0)
    p_m: float = Field(default=0.3, ge=0.0, le=1.0)
    generations: int = Field(default=10, ge=0)
    am_interval: int = Field(default=2, ge=1)
    max_init_retries: int = Field(default=0, ge=0)
    max_func_num: int = Field(default=4, ge=1)
    refresh_on_am_interval: bool = False
    refresh_keep: int = Field(default=1, ge=1)


class EducationConfig(BaseModel):
    mode: Literal["mcts", "one_shot"] = "mcts"
    mc_func_pop: int = Field(default=3, ge=1)
    max_fix_try: int = Field(default=3, ge=0)


class CalibrationConfig(BaseModel):
    enabled: bool = True
    subset_fraction: float = Field(default=0.5, gt=0.0, le=1.0)
    max_evals: int = Field(default=50, ge=0)
    budget_fraction: float = Field(default=0.1, gt=0.0, le=1.0)
    sigma0: float = Field(default=0.3, gt=0.0)


class AMConfig(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    enabled: bool = True
    alpha1: float = Field(default=0.4, ge=0.0)
    alpha2: float = Field(default=0.3, ge=0.0)
    alpha3: float = Field(default=0.2, ge=0.0)
    alpha4: float = Field(default=0.1, ge=0.0)
    tau: float = Field(default=0.8, ge=0.0, le=1.0)
    delta_th: float = Field(default=0.05, ge=0.0)
    lam: float = Field(default=0.7, ge=0.0, le=1.0, alias="lambda")
    c_max: int = Field(default=32, ge=1)
    t_idle: int = Field(default=3, ge=0)
    epsilon: float = 0.1
    elite_count: int = Field(default=3, ge=1)
    ema_beta: float = Field(default=0.5, gt=0.0, le=1.0)


class LLMConfig(BaseModel):
    provider: Literal["openai", "mock"] = "openai"
    base_url: Optional[str] = None
    model: Optional[str] = None
    api_key_env: Optional[str] = None
    transcript: Optional[str] = None
    max_retries: int = Field(default=3, ge=1)
    backoff_s: float = Field(default=1.0, ge=0.0)
    request_timeout_s: float = Field(default=300.0, gt=0.0)
    temperature_fixing: float = Field(default=0.7, ge=0.0, le=2.0)
    temperature_default: float = Field(default=1.0, ge=0.0, le=2.0)

    @model_validator(mode="after")
    def _mock_needs_transcript(self):
        if self.provider == "mock" and not self.transcript:
            raise ValueError("Для mock-провайдера нужен llm.transcript")
        return self


class SandboxConfig(BaseModel):
    interpreter_command: List[str] = Field(default_factory=lambda: ["{python}", "{program_path}"])
    grace_s: float = Field(default=5.0, ge=0.0)
    workers: int = Field(default=1, ge=1)
    memory_limit_mb: Optional[int] = Field(default=None, ge=16)
    env_allowlist: List[str] = Field(default_factory=lambda: ["PATH", "HOME", "LANG", "SYSTEMROOT", "TMPDIR"])
    tail_chars: int = Field(default=2000, ge=100)

    @model_validator(mode="after")
    def _has_program_path(self):
        if not any("{program_path}" in part for part in self.interpreter_command):
            raise ValueError("interpreter_command должен содержать {program_path}")
        return self


class KnowledgeConfig(BaseModel):
    enabled: bool = True
    heubase_manifest: Optional[str] = None
    knobase_dir: Optional[str] = None


class RunConfig(BaseModel):
    """Полная конфигурация запуска"""

    name: str = "run"
    seed: int = 0
    output_dir: str = Field(default_factory=lambda: Config.RUNS_DIR)
    run_id: Optional[str] = None
    problem: ProblemConfig = Field(default_factory=ProblemConfig)
    budget: BudgetConfig = Field(default_factory=BudgetConfig)
    ga: GAConfig = Field(default_factory=GAConfig)
    education: EducationConfig = Field(default_factory=EducationConfig)
    calibration: CalibrationConfig = Field(default_factory=CalibrationConfig)
    am: AMConfig = Field(default_factory=AMConfig)
    llm: LLMConfig = Field(default_factory=LLMConfig)
    sandbox: SandboxConfig = Field(default_factory=SandboxConfig)
    knowledge: KnowledgeConfig = Field(default_factory=KnowledgeConfig)

    @model_validator(mode="after")
    def _seeds_disjoint(self):
        common = set(self.problem.validation_seeds) & set(self.problem.test_seeds)
        if common:
            raise ValueError(f"Валидационные и тестовые сиды пересекаются: {sorted(common)}")
        return self

    @property
    def deterministic(self) -> bool:
        """В режиме воспроизведения изменчивые поля времени пишутся нулями"""
        return self.llm.provider == "mock"

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RunConfig":
        try:
            return cls.model_validate(data)
        except ValidationError as e:
            raise ConfigError(f"Некорректная конфигурация: {e}", code="config_invalid")

    @classmethod
    def load(cls, path: str, overrides: Optional[List[str]] = None) -> "RunConfig":
        """YAML-файл и переопределения вида ga.p_c=0.5"""
        if not os.path.exists(path):
            raise ConfigError(f"Файл конфигурации не найден: {path}", code="config_invalid")
        with open(path, "r", encoding="utf-8") as f:
            try:
                data = yaml.safe_load(f) or {}
            except yaml.YAMLError as e:
                raise ConfigError(f"Ошибка YAML: {e}", code="config_invalid")
        if not isinstance(data, dict):
            raise ConfigError("Конфигурация должна быть словарем", code="config_invalid")

        for override in overrides or []:
            apply_override(data, override)

        _resolve_paths(data, os.path.dirname(os.path.abspath(path)))
        return cls.from_dict(data)


def apply_override(data: Dict[str, Any], override: str):
    if "=" not in override:
        raise ConfigError(f"Переопределение без '=': {override}", code="config_invalid")
    key, raw = override.split("=", 1)
    parts = [p for p in key.strip().split(".") if p]
    if not parts:
        raise ConfigError(f"Пустой ключ в переопределении: {override}", code="config_invalid")
    node = data
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError(f"{key}: {part} не является разделом", code="config_invalid")
    node[parts[-1]] = yaml.safe_load(raw)


# Пути в конфигурации считаются относительно файла конфигурации
_PATH_KEYS = [
    ("llm", "transcript"),
    ("knowledge", "heubase_manifest"),
    ("knowledge", "knobase_dir"),
    ("problem", "reference_file"),
]


def _resolve_paths(data: Dict[str, Any], base_dir: str):
    for section, key in _PATH_KEYS:
        value = (data.get(section) or {}).get(key)
        if value and not os.path.isabs(value) and not os.path.exists(value):
            candidate = os.path.normpath(os.path.join(base_dir, value))
            data[section][key] = candidate
