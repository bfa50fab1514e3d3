import os
from typing import Optional

import validators
from dotenv import load_dotenv

from app.core.errors import ConfigError

# Загружаем переменные окружения
load_dotenv()


class Config:
    """Настройки окружения (.env)"""

    # LLM
    LLM_API_KEY_ENV = os.getenv("LLM_API_KEY_ENV", "LLM_API_KEY")
    LLM_BASE_URL = os.getenv("LLM_BASE_URL", "https://api.openai.com/v1")
    LLM_MODEL = os.getenv("LLM_MODEL", "gpt-4o-mini")

    # Настройки приложения
    DEBUG = os.getenv("DEBUG", "False").lower() == "true"
    LOG_LEVEL = os.getenv("LOG_LEVEL", "INFO").upper()

    # Каталоги
    RUNS_DIR = os.getenv("RUNS_DIR", "runs")
    PROMPTS_DIR = os.getenv("PROMPTS_DIR") or None

    @classmethod
    def api_key(cls, env_name: Optional[str] = None) -> Optional[str]:
        """Ключ API из переменной env_name (или LLM_API_KEY_ENV), запасной вариант OPENAI_API_KEY"""
        name = env_name or cls.LLM_API_KEY_ENV
        return os.getenv(name) or os.getenv("OPENAI_API_KEY")

    @classmethod
    def validate(cls, live_llm: bool = False, base_url: Optional[str] = None, env_name: Optional[str] = None):
        """Проверяет обязательные настройки"""
        missing_vars = []
        if live_llm and not cls.api_key(env_name):
            missing_vars.append(env_name or cls.LLM_API_KEY_ENV)

        if missing_vars:
            raise ConfigError(
                f"Отсутствуют обязательные переменные окружения: {', '.join(missing_vars)}",
                code="config_invalid",
            )

        url = base_url or cls.LLM_BASE_URL
        if live_llm and validators.url(url) is not True:
            raise ConfigError(f"Некорректный адрес LLM API: {url}", code="config_invalid")

        if cls.LOG_LEVEL not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
            raise ConfigError(f"Неизвестный LOG_LEVEL: {cls.LOG_LEVEL}", code="config_invalid")

        return True
