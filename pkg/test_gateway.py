#!/usr/bin/env python3
"""
Тесты шлюза LLM: бюджет, mock-провайдер, журнал обменов
"""

import asyncio
import json
import math
import os
import sys
import tempfile

import numpy as np
from aiohttp import web
from aiohttp.test_utils import TestServer

# Добавляем путь к приложению
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from app.core.errors import (
    BudgetExhaustedError,
    GatewayError,
    HttpError,
    MalformedResponseError,
    TranscriptExhaustedError,
)
from app.core.gateway import LLMGateway, RunBudget
from app.core.providers import ChatRequest, MockLLMProvider, OpenAIChatProvider, estimate_tokens
from app.core.run_config import LLMConfig
from app.core.run_log import JsonlWriter


def make_gateway(transcript, limit: int = 1000, mode: str = "tokens", log_path: str = None):
    provider = MockLLMProvider(transcript)
    writer = JsonlWriter(log_path, deterministic=True) if log_path else None
    gateway = LLMGateway(provider, RunBudget(mode=mode, limit=limit), LLMConfig(provider="mock", transcript="x"), writer)
    return gateway, provider


def test_budget():
    print("🧪 Тестирование бюджета запуска...")
    budget = RunBudget(mode="tokens", limit=100)
    assert not budget.exhausted()
    budget.charge_tokens(60)
    budget.charge_seconds(5.0)
    assert budget.consumed == 60
    assert budget.remaining() == 40
    budget.charge_tokens(40)
    assert budget.exhausted()

    timed = RunBudget(mode="time_seconds", limit=10)
    timed.charge_tokens(500)
    assert timed.consumed == 0
    assert timed.tokens_used == 500
    timed.charge_seconds(3.6)
    timed.charge_seconds(-1.0)
    # Доля секунды списывается целой секундой
    assert timed.consumed == 4
    assert timed.seconds_used == 3.6
    timed.charge_seconds(0.2)
    assert timed.consumed == 4
    timed.charge_seconds(5.3)
    assert timed.exhausted()

    try:
        budget.charge_tokens(-1)
        raise AssertionError("отрицательный расход принят")
    except ValueError:
        pass
    print("   ✅ Бюджет считается верно")


def test_ask_charges_tokens_and_writes_transcript():
    print("🧪 Тестирование запроса через шлюз...")

    async def scenario():
        log_path = os.path.join(tempfile.mkdtemp(), "transcript.jsonl")
        gateway, provider = make_gateway(
            [{"text": "first", "prompt_tokens": 7, "completion_tokens": 3}, "second answer"],
            log_path=log_path,
        )
        first = await gateway.ask("sys", "user prompt", tag="generation", prompt="crossover")
        second = await gateway.ask("system", "user", tag="fixing", prompt="fix")
        return gateway, provider, log_path, first, second

    gateway, provider, log_path, first, second = asyncio.run(scenario())
    assert first.text == "first"
    assert first.total_tokens == 10
    assert first.usage_reported
    assert not second.usage_reported
    assert second.prompt_tokens == estimate_tokens("system") + estimate_tokens("user")
    assert second.completion_tokens == estimate_tokens("second answer")
    assert gateway.budget.calls == 2
    assert gateway.budget.consumed == first.total_tokens + second.total_tokens
    assert provider.state() == {"cursor": 2}

    with open(log_path, "r", encoding="utf-8") as f:
        records = [json.loads(line) for line in f]
    assert [r["prompt"] for r in records] == ["crossover", "fix"]
    assert records[0]["request"]["temperature"] == 1.0
    assert records[1]["request"]["temperature"] == 0.7
    assert records[1]["elapsed_ms"] == 0
    print("   ✅ Токены списаны, обмены записаны")


def test_budget_checked_before_call():
    print("🧪 Тестирование исчерпания бюджета...")

    async def scenario():
        gateway, provider = make_gateway(
            [{"text": "a", "prompt_tokens": 15, "completion_tokens": 5}, "b"], limit=10,
        )
        await gateway.ask("s", "u", tag="generation")
        try:
            await gateway.ask("s", "u", tag="generation")
            raise AssertionError("запрос сверх бюджета выполнен")
        except BudgetExhaustedError as e:
            assert e.code == "budget_exhausted"
        return gateway, provider

    gateway, provider = asyncio.run(scenario())
    # Последний запрос может превысить лимит, следующий уже не отправляется
    assert gateway.budget.consumed == 20
    assert provider.cursor == 1

    async def zero_budget():
        gateway, provider = make_gateway(["never"], limit=0)
        try:
            await gateway.ask("s", "u", tag="generation")
            raise AssertionError("запрос при нулевом бюджете выполнен")
        except BudgetExhaustedError:
            pass
        return provider

    assert asyncio.run(zero_budget()).cursor == 0
    print("   ✅ Бюджет проверяется до запроса")


def test_fuzzed_budgets_allow_one_call_overrun():
    print("🧪 Тестирование бюджета на случайных транскриптах...")
    rng = np.random.default_rng(50)
    for _ in range(50):
        transcript = [
            {"text": "x", "prompt_tokens": int(rng.integers(1, 40)), "completion_tokens": int(rng.integers(1, 40))}
            for _ in range(200)
        ]
        limit = int(rng.integers(0, 400))

        async def drain():
            gateway, provider = make_gateway(transcript, limit=limit)
            charged = []
            while True:
                before = gateway.budget.consumed
                try:
                    response = await gateway.ask("s", "u", tag="generation")
                except BudgetExhaustedError:
                    return gateway, provider, charged
                assert before < limit
                charged.append(response.total_tokens)

        gateway, provider, charged = asyncio.run(drain())
        assert gateway.budget.consumed == sum(charged)
        # Лимит превышается не больше чем на последний запрос
        if charged:
            assert gateway.budget.consumed - charged[-1] < limit <= gateway.budget.consumed
        else:
            assert limit == 0
        assert provider.cursor == gateway.budget.calls == len(charged)

    timed = RunBudget(mode="time_seconds", limit=30)
    for seconds in rng.uniform(0.0, 2.0, 40):
        timed.charge_seconds(float(seconds))
        assert timed.consumed == math.ceil(timed.seconds_used)
        assert timed.exhausted() == (math.ceil(timed.seconds_used) >= 30)
    print("   ✅ Перерасход не больше одного запроса")


def test_keyed_transcript():
    print("🧪 Тестирование транскрипта по ключам...")
    transcript = {
        "mode": "keyed",
        "cycle": False,
        "responses": {"fix": ["fixed-1"], "am_naming": ["name-1", "name-2"], "generation": ["by-tag"]},
    }

    async def scenario():
        provider = MockLLMProvider(transcript)
        fix = await provider.complete(ChatRequest(system="s", user="u", tag="fixing", prompt="fix"))
        by_tag = await provider.complete(ChatRequest(system="s", user="u", tag="generation", prompt="crossover"))
        name = await provider.complete(ChatRequest(system="s", user="u", tag="am_naming", prompt="am_naming"))
        try:
            await provider.complete(ChatRequest(system="s", user="u", tag="fixing", prompt="fix"))
            raise AssertionError("исчерпанный транскрипт вернул ответ")
        except TranscriptExhaustedError:
            pass
        return provider, fix.text, by_tag.text, name.text

    provider, fix, by_tag, name = asyncio.run(scenario())
    assert (fix, by_tag, name) == ("fixed-1", "by-tag", "name-1")
    assert provider.state() == {"cursors": {"fix": 1, "am_naming": 1, "generation": 1}}

    async def cycled():
        provider = MockLLMProvider({**transcript, "cycle": True})
        texts = []
        for _ in range(3):
            response = await provider.complete(ChatRequest(system="s", user="u", tag="am_naming", prompt="am_naming"))
            texts.append(response.text)
        return provider, texts

    provider, texts = asyncio.run(cycled())
    assert texts == ["name-1", "name-2", "name-1"]

    restored = MockLLMProvider({**transcript, "cycle": True})
    restored.load_state(provider.state())
    assert restored.cursors["am_naming"] == provider.cursors["am_naming"] == 1
    print("   ✅ Ответы выдаются по имени промпта")


def test_malformed_transcripts():
    for bad in ([], {"mode": "keyed", "responses": {}}, {"responses": {"fix": ["x"]}}):
        try:
            MockLLMProvider(bad)
            raise AssertionError(f"транскрипт {bad!r} принят")
        except GatewayError:
            pass


def test_openai_parse():
    print("🧪 Тестирование разбора ответа OpenAI-совместимого API...")
    request = ChatRequest(system="abcd", user="efgh")

    parsed = OpenAIChatProvider._parse(
        {"choices": [{"message": {"content": "hello"}}], "usage": {"prompt_tokens": 11, "completion_tokens": 2}},
        request,
    )
    assert parsed.text == "hello"
    assert parsed.total_tokens == 13
    assert parsed.usage_reported

    estimated = OpenAIChatProvider._parse({"choices": [{"message": {"content": "12345"}}]}, request)
    assert not estimated.usage_reported
    assert estimated.prompt_tokens == 2
    assert estimated.completion_tokens == 2

    for bad in ({}, {"choices": []}, {"choices": [{"message": {"content": None}}]}):
        try:
            OpenAIChatProvider._parse(bad, request)
            raise AssertionError(f"ответ {bad!r} принят")
        except MalformedResponseError as e:
            assert e.code == "malformed_provider_response"

    provider = OpenAIChatProvider("key", "https://llm.example.com/v1/", "model")
    assert provider.endpoint == "https://llm.example.com/v1/chat/completions"
    print("   ✅ Ответ разобран")


async def call_stub_server(replies, max_retries: int = 3):
    """Запрос к локальному HTTP-серверу, отвечающему по очереди из replies"""
    calls = []

    async def handle(request):
        calls.append(await request.json())
        status, body = replies[min(len(calls), len(replies)) - 1]
        return web.Response(status=status, text=body, content_type="text/html")

    app = web.Application()
    app.router.add_post("/v1/chat/completions", handle)
    server = TestServer(app)
    await server.start_server()
    try:
        provider = OpenAIChatProvider("key", str(server.make_url("/v1")), "model", max_retries=max_retries, backoff_s=0.0)
        try:
            return await provider.complete(ChatRequest(system="s", user="u")), calls
        except GatewayError as e:
            return e, calls
    finally:
        await server.close()


def test_openai_http_errors():
    print("🧪 Тестирование HTTP-ответов OpenAI-совместимого API...")
    ok_body = json.dumps({"choices": [{"message": {"content": "hi"}}], "usage": {"prompt_tokens": 3, "completion_tokens": 1}})

    response, calls = asyncio.run(call_stub_server([(200, ok_body)]))
    assert response.text == "hi" and response.total_tokens == 4
    assert calls[0]["model"] == "model"
    assert [m["role"] for m in calls[0]["messages"]] == ["system", "user"]

    # Тело не JSON при статусе 200: ошибка формата без повторов
    error, calls = asyncio.run(call_stub_server([(200, "<html>gateway page</html>")]))
    assert isinstance(error, MalformedResponseError), error
    assert error.code == "malformed_provider_response"
    assert len(calls) == 1

    bad_usage = json.dumps({"choices": [{"message": {"content": "hi"}}], "usage": {"prompt_tokens": "many", "completion_tokens": 1}})
    error, _ = asyncio.run(call_stub_server([(200, bad_usage)]))
    assert isinstance(error, MalformedResponseError)

    # Ошибка сервера повторяется, затем успех
    response, calls = asyncio.run(call_stub_server([(503, "busy"), (200, ok_body)]))
    assert response.text == "hi" and len(calls) == 2

    error, calls = asyncio.run(call_stub_server([(500, "down")], max_retries=2))
    assert isinstance(error, HttpError) and error.code == "http_error"
    assert len(calls) == 2
    print("   ✅ Некорректные ответы превращаются в ошибки шлюза")


if __name__ == "__main__":
    print("🔌 Тестирование шлюза LLM")
    print("=" * 50)
    test_budget()
    test_ask_charges_tokens_and_writes_transcript()
    test_budget_checked_before_call()
    test_fuzzed_budgets_allow_one_call_overrun()
    test_keyed_transcript()
    test_malformed_transcripts()
    test_openai_parse()
    test_openai_http_errors()
    print("\n✅ Все тесты завершены успешно!")
