import math
from abc import ABC, abstractmethod
from typing import Literal

from pydantic import BaseModel, Field

RequestTag = Literal["generation", "fixing", "calibration_ranges", "am_naming"]


class ChatRequest(BaseModel):
    """Один запрос к чат-модели: system + user, без истории"""
    system: str
    user: str
    temperature: float = Field(default=1.0, ge=0.0, le=2.0)
    tag: RequestTag = "generation"
    # Имя шаблона промпта, для журнала и для mock-ответов по ключу
    prompt: str = ""


class ChatResponse(BaseModel):
    text: str
    prompt_tokens: int = Field(default=0, ge=0)
    completion_tokens: int = Field(default=0, ge=0)
    usage_reported: bool = True

    @property
    def total_tokens(self) -> int:
        return self.prompt_tokens + self.completion_tokens


def estimate_tokens(text: str) -> int:
    """Оценка числа токенов, если провайдер не вернул usage: ceil(символы / 4)"""
    return math.ceil(len(text) / 4)


class LLMProvider(ABC):
    """Базовый класс провайдеров чат-моделей"""

    @abstractmethod
    async def complete(self, request: ChatRequest) -> ChatResponse:
        """
        Выполняет запрос и возвращает ответ модели

        Args:
            request: Запрос с system/user промптами и температурой

        Returns:
            Текст ответа и расход токенов
        """
        pass

    def state(self) -> dict:
        """Состояние для контрольной точки (курсор mock-провайдера)"""
        return {}

    def load_state(self, state: dict):
        pass
