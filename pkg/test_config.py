#!/usr/bin/env python3
"""
Тестовая конфигурация и проверка слоя настроек
"""

import os
import sys
import tempfile

# Добавляем путь к приложению
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from app.config import Config
from app.core.errors import ConfigError
from app.core.run_config import RunConfig, apply_override

ROOT = os.path.dirname(os.path.abspath(__file__))
GOLDEN_CONFIG = os.path.join(ROOT, "configs", "golden_tsp.yaml")
DEFAULT_CONFIG = os.path.join(ROOT, "configs", "default.yaml")


class TestConfig(Config):
    """Тестовая конфигурация приложения"""

    LLM_API_KEY_ENV = "TEST_LLM_API_KEY"
    LLM_BASE_URL = "https://llm.example.com/v1"
    DEBUG = True
    LOG_LEVEL = "INFO"
    RUNS_DIR = os.path.join(tempfile.gettempdir(), "engine-test-runs")


def temp_dir(prefix: str = "engine-test-") -> str:
    return tempfile.mkdtemp(prefix=prefix)


def golden_config(output_dir: str, *overrides: str) -> RunConfig:
    """Воспроизводимая конфигурация TSP n=6 с каталогом запусков output_dir"""
    return RunConfig.load(GOLDEN_CONFIG, [f"output_dir={output_dir}", *overrides])


def expect_error(fn, code: str):
    try:
        fn()
    except ConfigError as e:
        assert e.code == code, f"ожидался {code}, получен {e.code}"
        return e
    raise AssertionError(f"ожидалась ошибка {code}")


def test_golden_config_loads():
    print("🧪 Тестирование загрузки конфигурации...")
    cfg = golden_config(temp_dir())

    assert cfg.name == "golden-tsp"
    assert cfg.seed == 7
    assert cfg.problem.kind == "tsp"
    assert cfg.problem.size == 6
    assert cfg.llm.provider == "mock"
    assert cfg.deterministic
    # Пути разрешены относительно файла конфигурации
    assert os.path.isabs(cfg.llm.transcript)
    assert os.path.exists(cfg.llm.transcript)
    assert os.path.exists(cfg.knowledge.heubase_manifest)
    assert os.path.isdir(cfg.knowledge.knobase_dir)
    print("   ✅ golden_tsp.yaml загружена")


def test_default_config_loads():
    cfg = RunConfig.load(DEFAULT_CONFIG)
    assert cfg.llm.provider == "openai"
    assert not cfg.deterministic
    assert cfg.model_dump(by_alias=True)["am"]["lambda"] == cfg.am.lam
    print("   ✅ default.yaml загружена")


def test_overrides():
    print("🧪 Тестирование переопределений key=value...")
    cfg = golden_config(temp_dir(), "ga.p_c=0.25", "am.lambda=0.5", "problem.validation_seeds=[3, 4, 5]")
    assert cfg.ga.p_c == 0.25
    assert cfg.am.lam == 0.5
    assert cfg.problem.validation_seeds == [3, 4, 5]

    data = {}
    apply_override(data, "budget.limit=10")
    assert data == {"budget": {"limit": 10}}

    expect_error(lambda: apply_override({}, "budget.limit"), "config_invalid")
    expect_error(lambda: apply_override({"ga": 3}, "ga.p_c=0.1"), "config_invalid")
    print("   ✅ Переопределения применяются")


def test_invalid_configs():
    print("🧪 Тестирование некорректных конфигураций...")
    expect_error(lambda: RunConfig.from_dict({"ga": {"p_c": 1.5}}), "config_invalid")
    expect_error(lambda: RunConfig.from_dict({"llm": {"provider": "mock"}}), "config_invalid")
    expect_error(
        lambda: RunConfig.from_dict({"problem": {"validation_seeds": [1, 2], "test_seeds": [2, 3]}}),
        "config_invalid",
    )
    expect_error(
        lambda: RunConfig.from_dict({"sandbox": {"interpreter_command": ["python3"]}}),
        "config_invalid",
    )
    expect_error(lambda: RunConfig.load(os.path.join(ROOT, "configs", "missing.yaml")), "config_invalid")
    print("   ✅ Ошибки конфигурации обнаруживаются")


def test_config_validate():
    print("🧪 Тестирование проверки окружения...")
    saved = {name: os.environ.pop(name, None) for name in ("TEST_LLM_API_KEY", "OPENAI_API_KEY")}
    try:
        assert TestConfig.validate(live_llm=False)
        expect_error(lambda: TestConfig.validate(live_llm=True), "config_invalid")

        os.environ["TEST_LLM_API_KEY"] = "test_key"
        assert TestConfig.api_key() == "test_key"
        assert TestConfig.validate(live_llm=True)
        expect_error(lambda: TestConfig.validate(live_llm=True, base_url="not a url"), "config_invalid")
    finally:
        os.environ.pop("TEST_LLM_API_KEY", None)
        for name, value in saved.items():
            if value is not None:
                os.environ[name] = value
    print("   ✅ Config.validate работает")


if __name__ == "__main__":
    print("⚙️ Тестирование настроек")
    print("=" * 50)
    test_golden_config_loads()
    test_default_config_loads()
    test_overrides()
    test_invalid_configs()
    test_config_validate()
    print("\n✅ Все тесты завершены успешно!")
