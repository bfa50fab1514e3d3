#!/usr/bin/env python3
"""
Тесты отчетов: кривая разрыва, таблица тестовых разрывов, сводка попыток
"""

import csv
import os
import sys

from PIL import Image

# Добавляем путь к приложению
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from app.cli.main import main
from app.core.errors import ReportError
from app.core.report import RunReport, aggregate, find_run_dirs
from app.core.run_log import RunLog
from app.utils.file_utils import FileUtils
from test_config import temp_dir


def education(log: RunLog, ident: str, first: float, final: float, tokens: int):
    log.event("education", individual_id=ident, mode="mcts", first_quality=first, final_quality=final, tokens_cum=tokens)


def synthetic_run(run_dir: str, kind: str = "tsp") -> str:
    """Каталог запуска с журналом из четырех обучений и тестовой оценкой"""
    FileUtils.ensure_dir(run_dir)
    FileUtils.write_json(os.path.join(run_dir, "config.json"), {"problem": {"kind": kind}})
    log = RunLog(os.path.join(run_dir, "log.jsonl"))
    log.event("run_start", run_id=os.path.basename(run_dir))
    education(log, "ind-0001", -0.2, -0.1, 100)
    education(log, "ind-0002", -0.3, -0.3, 250)
    log.event("education", individual_id="ind-0003", first_quality=None, final_quality=None, tokens_cum=300)
    education(log, "ind-0004", -0.1, -0.05, 420)
    log.event("test_evaluation", individual_id="ind-0004", status="ok", mean_gap=4.0, instances=[
        {"instance_id": "tsp-6-101", "reference": 10.0, "objective": 10.5, "gap": 5.0},
        {"instance_id": "tsp-6-102", "reference": 20.0, "objective": 20.6, "gap": 3.0},
    ])
    return run_dir


def write_summary(run_dir: str, best_gap, test_gap=None, status: str = "completed"):
    FileUtils.ensure_dir(run_dir)
    FileUtils.write_json(os.path.join(run_dir, "config.json"), {"problem": {"kind": "tsp"}})
    FileUtils.write_json(os.path.join(run_dir, "summary.json"), {
        "run_id": os.path.basename(run_dir), "status": status, "sense": "min",
        "best_gap": best_gap, "test_gap": test_gap, "tokens_used": 1000,
    })


def test_curve_is_monotone():
    print("🧪 Тестирование кривой разрыва...")
    report = RunReport(synthetic_run(os.path.join(temp_dir(), "run")))
    points = report.curve()

    assert [p.individual_id for p in points] == ["ind-0001", "ind-0002", "ind-0004"]
    assert [p.tokens_cum for p in points] == [100, 250, 420]
    assert [round(p.gap, 9) for p in points] == [10.0, 30.0, 5.0]
    assert [round(p.best_gap_so_far, 9) for p in points] == [10.0, 10.0, 5.0]
    print("   ✅ Лучший разрыв не возрастает")


def test_curve_for_maximization():
    report = RunReport(synthetic_run(os.path.join(temp_dir(), "run"), kind="mis"))
    assert report.sense == "max"
    # Для максимизации качество 1.0 - нулевой разрыв
    assert [round(p.gap, 9) for p in report.curve()] == [110.0, 130.0, 105.0]


def test_education_gain():
    report = RunReport(synthetic_run(os.path.join(temp_dir(), "run")))
    gain = report.education_gain()
    assert abs(gain - (0.5 + 0.0 + 0.5) / 3) < 1e-9


def test_write_outputs():
    print("🧪 Тестирование записи отчетов...")
    run_dir = synthetic_run(os.path.join(temp_dir(), "run"))
    written = RunReport(run_dir).write("csv")
    names = sorted(os.path.basename(p) for p in written)
    assert names == ["best_summary.json", "gap_curve.csv", "gap_curve.png", "test_gaps.csv"]

    with open(os.path.join(run_dir, "gap_curve.csv"), "r", encoding="utf-8") as f:
        rows = list(csv.DictReader(f))
    assert [r["individual_id"] for r in rows] == ["ind-0001", "ind-0002", "ind-0004"]

    with Image.open(os.path.join(run_dir, "gap_curve.png")) as image:
        assert image.size == (800, 480)

    with open(os.path.join(run_dir, "test_gaps.csv"), "r", encoding="utf-8") as f:
        test_rows = list(csv.DictReader(f))
    assert [float(r["gap"]) for r in test_rows] == [5.0, 3.0]

    best = FileUtils.read_json(os.path.join(run_dir, "best_summary.json"))
    assert best["evaluated_individuals"] == 3
    assert round(best["best_gap"], 9) == 5.0
    assert best["tokens_used"] == 420

    assert main(["report", run_dir, "--format", "table"]) == 0
    table = FileUtils.read_text(os.path.join(run_dir, "test_gaps.txt"))
    assert table.split("\n")[0].split() == ["instance_id", "reference", "objective", "gap"]
    assert "tsp-6-101" in table and "5.0000" in table
    print("   ✅ CSV, PNG и таблица записаны")


def test_report_errors():
    print("🧪 Тестирование ошибок отчета...")
    empty_dir = temp_dir()
    try:
        RunReport(empty_dir)
        raise AssertionError("отчет без журнала создан")
    except ReportError as e:
        assert e.code == "missing_log"

    RunLog(os.path.join(empty_dir, "log.jsonl")).event("run_start", run_id="empty")
    try:
        RunReport(empty_dir).curve()
        raise AssertionError("кривая без оцененных особей построена")
    except ReportError as e:
        assert e.code == "empty_evaluation"

    try:
        RunReport(synthetic_run(os.path.join(temp_dir(), "run"))).write("xml")
        raise AssertionError("неизвестный формат принят")
    except ReportError:
        pass
    print("   ✅ Ошибки обнаружены")


def test_aggregate():
    print("🧪 Тестирование сводки попыток...")
    bench_dir = temp_dir()
    write_summary(os.path.join(bench_dir, "attempt0"), 3.0, 4.0)
    write_summary(os.path.join(bench_dir, "attempt1"), 1.0, 2.0)
    write_summary(os.path.join(bench_dir, "attempt2"), 2.0)
    write_summary(os.path.join(bench_dir, "attempt3"), None, status="budget_exhausted")
    failed = os.path.join(bench_dir, "attempt4")
    FileUtils.ensure_dir(failed)
    FileUtils.write_json(os.path.join(failed, "config.json"), {"problem": {"kind": "tsp"}})
    FileUtils.ensure_dir(os.path.join(bench_dir, "not-a-run"))

    run_dirs = find_run_dirs(bench_dir)
    assert [os.path.basename(d) for d in run_dirs] == ["attempt0", "attempt1", "attempt2", "attempt3", "attempt4"]

    path = aggregate(run_dirs, bench_dir)
    with open(path, "r", encoding="utf-8") as f:
        rows = {r["attempt"]: r for r in csv.DictReader(f)}
    assert rows["attempt4"]["status"] == "failed"
    assert rows["attempt3"]["best_gap"] == ""
    assert float(rows["MIN"]["best_gap"]) == 1.0
    assert float(rows["AVG"]["best_gap"]) == 2.0
    assert float(rows["MIN"]["best_gap"]) <= float(rows["AVG"]["best_gap"])
    assert float(rows["MIN"]["test_gap"]) == 2.0
    assert float(rows["AVG"]["test_gap"]) == 3.0

    assert main(["report", bench_dir, "--aggregate"]) == 0

    for bad, code in (([], "missing_log"), ([failed], "empty_evaluation")):
        try:
            aggregate(bad, bench_dir)
            raise AssertionError("сводка без результатов построена")
        except ReportError as e:
            assert e.code == code
    print("   ✅ MIN не больше AVG, провалившиеся попытки отмечены")


if __name__ == "__main__":
    print("📊 Тестирование отчетов")
    print("=" * 50)
    test_curve_is_monotone()
    test_curve_for_maximization()
    test_education_gain()
    test_write_outputs()
    test_report_errors()
    test_aggregate()
    print("\n✅ Все тесты завершены успешно!")
