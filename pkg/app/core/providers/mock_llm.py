import json
import logging
from typing import Any, Dict, List, Union

from app.core.errors import GatewayError, TranscriptExhaustedError

from .llm_base import ChatRequest, ChatResponse, LLMProvider, estimate_tokens

logger = logging.getLogger(__name__)


class MockLLMProvider(LLMProvider):
    """
    Воспроизведение заранее записанных ответов.

    Транскрипт - либо список ответов (строго по порядку), либо объект
    {"mode": "keyed", "cycle": bool, "responses": {имя_промпта_или_тег: [...]}}.
    Ответ - строка или {"text", "prompt_tokens"?, "completion_tokens"?}.
    """

    def __init__(self, transcript: Union[List[Any], Dict[str, Any]]):
        if isinstance(transcript, list):
            if not transcript:
                raise GatewayError("Пустой транскрипт", code="empty_transcript")
            self.keyed = False
            self.cycle = False
            self.queue = list(transcript)
            self.responses: Dict[str, List[Any]] = {}
        elif isinstance(transcript, dict) and transcript.get("mode") == "keyed":
            responses = transcript.get("responses") or {}
            if not any(responses.values()):
                raise GatewayError("Пустой транскрипт", code="empty_transcript")
            self.keyed = True
            self.cycle = bool(transcript.get("cycle", False))
            self.queue = []
            self.responses = {key: list(items) for key, items in responses.items()}
        else:
            raise GatewayError("Неизвестный формат транскрипта", code="malformed_transcript")

        self.cursor = 0
        self.cursors: Dict[str, int] = {key: 0 for key in self.responses}

    @classmethod
    def from_file(cls, path: str) -> "MockLLMProvider":
        with open(path, "r", encoding="utf-8") as f:
            return cls(json.load(f))

    def _next_entry(self, request: ChatRequest) -> Any:
        if not self.keyed:
            if self.cursor >= len(self.queue):
                raise TranscriptExhaustedError(f"Транскрипт исчерпан после {self.cursor} ответов")
            entry = self.queue[self.cursor]
            self.cursor += 1
            return entry

        key = request.prompt if request.prompt in self.responses else request.tag
        items = self.responses.get(key)
        if not items:
            raise TranscriptExhaustedError(f"В транскрипте нет ответов для {request.prompt or request.tag}")
        index = self.cursors.get(key, 0)
        if index >= len(items):
            if not self.cycle:
                raise TranscriptExhaustedError(f"Ответы для {key} исчерпаны")
            index %= len(items)
        self.cursors[key] = index + 1
        return items[index]

    async def complete(self, request: ChatRequest) -> ChatResponse:
        entry = self._next_entry(request)
        if isinstance(entry, str):
            entry = {"text": entry}
        text = entry["text"]
        prompt_tokens = entry.get("prompt_tokens")
        completion_tokens = entry.get("completion_tokens")
        reported = prompt_tokens is not None and completion_tokens is not None
        return ChatResponse(
            text=text,
            prompt_tokens=int(prompt_tokens) if prompt_tokens is not None
            else estimate_tokens(request.system) + estimate_tokens(request.user),
            completion_tokens=int(completion_tokens) if completion_tokens is not None else estimate_tokens(text),
            usage_reported=reported,
        )

    def state(self) -> dict:
        if self.keyed:
            return {"cursors": dict(self.cursors)}
        return {"cursor": self.cursor}

    def load_state(self, state: dict):
        if self.keyed:
            self.cursors.update({k: int(v) for k, v in state.get("cursors", {}).items()})
        else:
            self.cursor = int(state.get("cursor", 0))
