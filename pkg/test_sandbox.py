#!/usr/bin/env python3
"""
Тесты песочницы: запуск собранных программ в отдельном процессе
"""

import asyncio
import os
import sys
import time

import numpy as np

# Добавляем путь к приложению
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from app.core.errors import SandboxSetupError
from app.core.problems import ProblemInstance, get_problem
from app.core.problems.tsp import TspSuite, tour_length
from app.core.run_config import SandboxConfig
from app.core.sandbox import EvaluationStatus, Sandbox
from app.core.structure import DRIVER_TEMPLATE

DRIVER = DRIVER_TEMPLATE.replace("ENTRY_POINT", "solve")

IDENTITY = '''
def solve(instance):
    print("iteration 1: best so far")
    return {"tour": list(range(len(instance["coords"])))}
''' + DRIVER

SLEEPER = '''
def solve(instance):
    while True:
        pass
''' + DRIVER

NAPPER = '''
import time


def solve(instance):
    time.sleep(10 ** 6)
''' + DRIVER

CRASH = '''
def solve(instance):
    raise ValueError("boom")
''' + DRIVER

BROKEN = '''
def solve(instance:
    return None
''' + DRIVER

SILENT = '''
import json, sys
json.load(sys.stdin)
print("no solution here")
'''

ADJACENT = '''
def solve(instance):
    return {"select": [1] * instance["num_nodes"]}
''' + DRIVER


def raw_output(line: str) -> str:
    """Программа, печатающая готовую строку протокола"""
    return "import json, sys\njson.load(sys.stdin)\nprint(" + repr(line) + ")\n"


class BrokenCheckSuite(TspSuite):
    """Проверка решения, которая сама падает"""

    def validate(self, instance, solution):
        return None

    def _objective(self, instance, solution):
        return tour_length(instance.payload["coords"], solution["path"])


def sandbox(kind: str = "tsp", **cfg) -> Sandbox:
    options = {"grace_s": 0.5}
    options.update(cfg)
    return Sandbox(get_problem(kind), SandboxConfig(**options), record_timing=False)


def run(box: Sandbox, program: str, inst: ProblemInstance, max_time_s: float = 2.0):
    return asyncio.run(box.run(program, inst, max_time_s))


def test_ok_run():
    print("🧪 Тестирование успешного запуска...")
    inst = get_problem("tsp").generate(5, 0)
    report = run(sandbox(), IDENTITY, inst)
    assert report.status == EvaluationStatus.OK, report.stderr_tail
    assert report.ok
    assert report.solution == {"tour": [0, 1, 2, 3, 4]}
    assert abs(report.objective - tour_length(inst.payload["coords"], [0, 1, 2, 3, 4])) < 1e-12
    assert "iteration 1" in report.stdout_tail
    assert report.wall_ms == 0
    print("   ✅ Решение получено и проверено")


def test_timeout():
    print("🧪 Тестирование жесткого таймаута...")
    inst = get_problem("tsp").generate(5, 0)
    report = run(sandbox(grace_s=0.2), SLEEPER, inst, max_time_s=0.3)
    assert report.status == EvaluationStatus.TIMEOUT
    assert "MAX_TIME" in report.error_message()
    print("   ✅ Процесс убит")


def test_hung_candidates_are_always_killed():
    print("🧪 Тестирование таймаута на повторных запусках...")
    max_time_s, grace_s = 0.2, 0.2
    box = sandbox(grace_s=grace_s)
    rng = np.random.default_rng(9)
    for trial in range(20):
        inst = get_problem("tsp").generate(5, int(rng.integers(0, 2 ** 31)))
        program = SLEEPER if trial % 2 == 0 else NAPPER
        started = time.monotonic()
        report = run(box, program, inst, max_time_s=max_time_s)
        elapsed = time.monotonic() - started
        assert report.status == EvaluationStatus.TIMEOUT, f"запуск {trial}: {report.status}"
        assert elapsed < max_time_s + grace_s + 1.0, f"запуск {trial}: {elapsed:.2f} с"
    print("   ✅ 20 из 20 процессов убиты вовремя")


def test_objective_replays_exactly():
    tsp = get_problem("tsp")
    box = sandbox()
    rng = np.random.default_rng(10)
    for seed in rng.integers(0, 2 ** 31, 5):
        inst = tsp.generate(int(rng.integers(5, 12)), int(seed))
        report = run(box, IDENTITY, inst)
        assert report.ok
        assert tsp.objective(inst, report.solution) == report.objective


def test_failures_are_classified():
    print("🧪 Тестирование классификации ошибок...")
    inst = get_problem("tsp").generate(5, 0)
    box = sandbox()

    crash = run(box, CRASH, inst)
    assert crash.status == EvaluationStatus.RUNTIME_ERROR
    assert "ValueError: boom" in crash.stderr_tail
    assert "ValueError: boom" in crash.error_message()

    broken = run(box, BROKEN, inst)
    assert broken.status == EvaluationStatus.COMPILE_ERROR
    assert "SyntaxError" in broken.stderr_tail

    silent = run(box, SILENT, inst)
    assert silent.status == EvaluationStatus.PROTOCOL_ERROR
    assert "solution" in silent.error_message()
    print("   ✅ Ошибки выполнения, компиляции и протокола различаются")


def test_constraint_violation():
    print("🧪 Тестирование нарушения ограничений...")
    triangle = ProblemInstance(
        kind="mis", instance_id="mis-k3", size=3, seed=0,
        payload={"num_nodes": 3, "edges": [[0, 1], [1, 2], [0, 2]]},
    )
    report = run(sandbox("mis"), ADJACENT, triangle)
    assert report.status == EvaluationStatus.CONSTRAINT_VIOLATION
    assert report.objective is None
    assert "(0, 1)" in report.error_message()
    print("   ✅ Смежные вершины обнаружены")


def test_non_finite_numbers_are_candidate_failures():
    print("🧪 Тестирование NaN и Infinity в решении...")
    inst = get_problem("tsp").generate(5, 0)
    box = sandbox()
    for bad in ("NaN", "Infinity", "-Infinity", "1.5"):
        line = '{"solution": {"tour": [' + bad + ', 1, 2, 3, 4]}}'
        report = run(box, raw_output(line), inst)
        assert report.status == EvaluationStatus.CONSTRAINT_VIOLATION, f"{bad}: {report.status}"
        assert "schema_mismatch" in report.stderr_tail
        assert report.objective is None

    # Целое число, записанное как 2.0, допустимо
    whole = run(box, raw_output('{"solution": {"tour": [0, 1, 2.0, 3, 4]}}'), inst)
    assert whole.ok
    print("   ✅ Нечисловые значения дают отчет, а не исключение")


def test_checker_exception_becomes_report():
    box = Sandbox(BrokenCheckSuite(), SandboxConfig(grace_s=0.5), record_timing=False)
    report = run(box, IDENTITY, get_problem("tsp").generate(5, 0))
    assert report.status == EvaluationStatus.PROTOCOL_ERROR
    assert "could not be checked" in report.stderr_tail


def test_run_batch():
    print("🧪 Тестирование пакетного запуска...")
    tsp = get_problem("tsp")
    instances = [tsp.generate(5, seed) for seed in range(3)]

    reports = asyncio.run(sandbox(workers=2).run_batch(IDENTITY, instances, 2.0))
    assert [r.instance_id for r in reports] == [i.instance_id for i in instances]
    assert all(r.ok for r in reports)

    stopped = asyncio.run(sandbox().run_batch(CRASH, instances, 2.0, short_circuit=True))
    assert len(stopped) == 1
    full = asyncio.run(sandbox().run_batch(CRASH, instances, 2.0))
    assert len(full) == 3
    print("   ✅ Порядок отчетов совпадает с порядком экземпляров")


def test_setup_failures():
    inst = get_problem("tsp").generate(5, 0)
    try:
        run(sandbox(), "   ", inst)
        raise AssertionError("пустая программа запущена")
    except SandboxSetupError as e:
        assert e.code == "sandbox_setup_failure"

    missing = sandbox(interpreter_command=["/nonexistent/python-binary", "{program_path}"])
    try:
        run(missing, IDENTITY, inst)
        raise AssertionError("несуществующий интерпретатор запущен")
    except SandboxSetupError:
        pass


if __name__ == "__main__":
    print("📦 Тестирование песочницы")
    print("=" * 50)
    test_ok_run()
    test_timeout()
    test_hung_candidates_are_always_killed()
    test_objective_replays_exactly()
    test_failures_are_classified()
    test_constraint_violation()
    test_non_finite_numbers_are_candidate_failures()
    test_checker_exception_becomes_report()
    test_run_batch()
    test_setup_failures()
    print("\n✅ Все тесты завершены успешно!")
