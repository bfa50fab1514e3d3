# Провайдеры чат-моделей

from .llm_base import ChatRequest, ChatResponse, LLMProvider, estimate_tokens
from .mock_llm import MockLLMProvider
from .openai_chat import OpenAIChatProvider

__all__ = [
    "ChatRequest",
    "ChatResponse",
    "LLMProvider",
    "MockLLMProvider",
    "OpenAIChatProvider",
    "estimate_tokens",
]
