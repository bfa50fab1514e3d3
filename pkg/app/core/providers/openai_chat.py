import asyncio
import logging
from typing import Optional

import aiohttp

from app.core.errors import HttpError, MalformedResponseError

from .llm_base import ChatRequest, ChatResponse, LLMProvider, estimate_tokens

logger = logging.getLogger(__name__)


class OpenAIChatProvider(LLMProvider):
    """Провайдер для любого OpenAI-совместимого эндпоинта /chat/completions"""

    def __init__(
        self,
        api_key: str,
        base_url: str,
        model: str,
        max_retries: int = 3,
        backoff_s: float = 1.0,
        timeout_s: float = 300.0,
    ):
        self.api_key = api_key
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.max_retries = max_retries
        self.backoff_s = backoff_s
        self.timeout_s = timeout_s

    @property
    def endpoint(self) -> str:
        return f"{self.base_url}/chat/completions"

    async def complete(self, request: ChatRequest) -> ChatResponse:
        headers = {
            "Authorization": f"Bearer {self.api_key}",
            "Content-Type": "application/json",
        }
        payload = {
            "model": self.model,
            "messages": [
                {"role": "system", "content": request.system},
                {"role": "user", "content": request.user},
            ],
            "temperature": request.temperature,
        }

        last_status: Optional[int] = None
        last_error = ""
        for attempt in range(self.max_retries):
            try:
                timeout = aiohttp.ClientTimeout(total=self.timeout_s)
                async with aiohttp.ClientSession(timeout=timeout) as session:
                    async with session.post(self.endpoint, headers=headers, json=payload) as response:
                        if response.status == 200:
                            try:
                                data = await response.json(content_type=None)
                            except ValueError:
                                body = (await response.text())[:200]
                                raise MalformedResponseError(f"Тело ответа не является JSON: {body!r}")
                            return self._parse(data, request)
                        last_status = response.status
                        last_error = (await response.text())[:500]
                        logger.warning(f"LLM API error {response.status} (попытка {attempt + 1}/{self.max_retries})")
            except (aiohttp.ClientError, asyncio.TimeoutError) as e:
                last_error = str(e) or type(e).__name__
                logger.warning(f"Ошибка соединения с LLM: {last_error} (попытка {attempt + 1}/{self.max_retries})")

            if attempt + 1 < self.max_retries:
                await asyncio.sleep(self.backoff_s * (2 ** attempt))

        raise HttpError(f"LLM недоступна после {self.max_retries} попыток: {last_error}", status=last_status)

    @staticmethod
    def _parse(data: dict, request: ChatRequest) -> ChatResponse:
        try:
            text = data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError):
            raise MalformedResponseError("В ответе нет choices[0].message.content")
        if not isinstance(text, str):
            raise MalformedResponseError("content не является строкой")

        usage = data.get("usage")
        if isinstance(usage, dict) and "prompt_tokens" in usage and "completion_tokens" in usage:
            try:
                return ChatResponse(
                    text=text,
                    prompt_tokens=int(usage["prompt_tokens"]),
                    completion_tokens=int(usage["completion_tokens"]),
                )
            except (TypeError, ValueError):
                raise MalformedResponseError(f"Некорректный usage: {usage!r}")
        return ChatResponse(
            text=text,
            prompt_tokens=estimate_tokens(request.system) + estimate_tokens(request.user),
            completion_tokens=estimate_tokens(text),
            usage_reported=False,
        )
