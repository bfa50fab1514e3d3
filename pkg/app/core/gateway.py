import asyncio
import logging
import math
import time
from typing import Literal, Optional

from pydantic import BaseModel, Field

from app.core.errors import BudgetExhaustedError
from app.core.providers import ChatRequest, ChatResponse, LLMProvider
from app.core.providers.llm_base import RequestTag
from app.core.run_config import LLMConfig
from app.core.run_log import JsonlWriter

logger = logging.getLogger(__name__)


class RunBudget(BaseModel):
    """Бюджет запуска: токены или секунды; расход только растет"""
    mode: Literal["tokens", "time_seconds"] = "tokens"
    limit: int = Field(default=0, ge=0)
    consumed: int = Field(default=0, ge=0)
    tokens_used: int = Field(default=0, ge=0)
    seconds_used: float = Field(default=0.0, ge=0.0)
    calls: int = Field(default=0, ge=0)

    def exhausted(self) -> bool:
        return self.consumed >= self.limit

    def charge_tokens(self, tokens: int):
        if tokens < 0:
            raise ValueError("Расход токенов не может быть отрицательным")
        self.tokens_used += tokens
        if self.mode == "tokens":
            self.consumed += tokens

    def charge_seconds(self, seconds: float):
        if seconds <= 0:
            return
        self.seconds_used += seconds
        if self.mode == "time_seconds":
            self.consumed = max(self.consumed, math.ceil(self.seconds_used))

    def remaining(self) -> int:
        return max(0, self.limit - self.consumed)


class LLMGateway:
    """
    Единая точка вызова LLM: бюджет, температура по тегу, журнал обменов.

    Запросы одного запуска выполняются строго по одному.
    """

    def __init__(
        self,
        provider: LLMProvider,
        budget: RunBudget,
        cfg: Optional[LLMConfig] = None,
        transcript: Optional[JsonlWriter] = None,
        deterministic: bool = False,
    ):
        self.provider = provider
        self.budget = budget
        self.cfg = cfg or LLMConfig()
        self.transcript = transcript
        self.deterministic = deterministic
        self._lock = asyncio.Lock()
        self._mark = time.monotonic()

    def temperature_for(self, tag: RequestTag) -> float:
        if tag == "fixing":
            return self.cfg.temperature_fixing
        return self.cfg.temperature_default

    def sync_clock(self):
        """Списывает в бюджет время, прошедшее с прошлой отметки"""
        now = time.monotonic()
        self.budget.charge_seconds(now - self._mark)
        self._mark = now

    async def ask(self, system: str, user: str, tag: RequestTag, prompt: str = "") -> ChatResponse:
        request = ChatRequest(
            system=system,
            user=user,
            temperature=self.temperature_for(tag),
            tag=tag,
            prompt=prompt,
        )
        return await self.complete(request)

    async def complete(self, request: ChatRequest) -> ChatResponse:
        async with self._lock:
            self.sync_clock()
            if self.budget.exhausted():
                raise BudgetExhaustedError(
                    f"Бюджет исчерпан: {self.budget.consumed}/{self.budget.limit} ({self.budget.mode})"
                )

            started = time.monotonic()
            response = await self.provider.complete(request)
            elapsed_ms = int((time.monotonic() - started) * 1000)

            self.budget.calls += 1
            self.budget.charge_tokens(response.total_tokens)
            self.sync_clock()

            if self.transcript is not None:
                self.transcript.write({
                    "tag": request.tag,
                    "prompt": request.prompt,
                    "request": {
                        "system": request.system,
                        "user": request.user,
                        "temperature": request.temperature,
                    },
                    "response": response.text,
                    "usage": {
                        "prompt_tokens": response.prompt_tokens,
                        "completion_tokens": response.completion_tokens,
                        "reported": response.usage_reported,
                    },
                    "elapsed_ms": elapsed_ms,
                })
            logger.debug(
                f"LLM {request.tag}/{request.prompt}: {response.total_tokens} токенов, "
                f"бюджет {self.budget.consumed}/{self.budget.limit}"
            )
            return response
