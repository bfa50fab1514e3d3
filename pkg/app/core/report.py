import csv
import io
import logging
import os
from typing import Dict, List, Optional, Sequence

from PIL import Image, ImageDraw
from pydantic import BaseModel

from app.core.errors import ReportError
from app.core.problems import quality_to_gap
from app.core.run_log import load_events
from app.utils.file_utils import FileUtils

logger = logging.getLogger(__name__)

CURVE_CSV = "gap_curve.csv"
CURVE_PNG = "gap_curve.png"
TEST_CSV = "test_gaps.csv"
TEST_TABLE = "test_gaps.txt"
BEST_SUMMARY = "best_summary.json"
AGGREGATE_CSV = "aggregate.csv"


class CurvePoint(BaseModel):
    individual_id: str
    tokens_cum: int
    gap: float
    best_gap_so_far: float


def _csv_text(header: Sequence[str], rows: Sequence[Sequence[object]]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buffer.getvalue()


def _table_text(header: Sequence[str], rows: Sequence[Sequence[object]]) -> str:
    cells = [[str(h) for h in header]] + [[_fmt(v) for v in row] for row in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(header))]
    lines = ["  ".join(value.ljust(width) for value, width in zip(row, widths)).rstrip() for row in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def _fmt(value: object) -> str:
    if isinstance(value, float):
        return f"{value:.4f}"
    return "" if value is None else str(value)


class RunReport:
    """Отчеты по каталогу запуска: кривая разрыва от токенов, тестовая таблица, итог"""

    def __init__(self, run_dir: str):
        self.run_dir = run_dir
        log_path = os.path.join(run_dir, "log.jsonl")
        if not os.path.exists(log_path):
            raise ReportError(f"Нет журнала {log_path}", code="missing_log")
        self.events = load_events(log_path)
        summary_path = os.path.join(run_dir, "summary.json")
        self.summary: Dict = FileUtils.read_json(summary_path) if os.path.exists(summary_path) else {}
        config_path = os.path.join(run_dir, "config.json")
        config = FileUtils.read_json(config_path) if os.path.exists(config_path) else {}
        self.sense = self.summary.get("sense") or _sense_for(config.get("problem", {}).get("kind", "tsp"))

    def _path(self, name: str) -> str:
        return os.path.join(self.run_dir, name)

    def curve(self) -> List[CurvePoint]:
        """Точка на каждую оцененную особь; лучший разрыв не возрастает"""
        points: List[CurvePoint] = []
        best_quality: Optional[float] = None
        for event in self.events:
            if event.get("event") != "education" or event.get("final_quality") is None:
                continue
            quality = event["final_quality"]
            best_quality = quality if best_quality is None else max(best_quality, quality)
            points.append(CurvePoint(
                individual_id=event["individual_id"],
                tokens_cum=int(event.get("tokens_cum", 0)),
                gap=quality_to_gap(quality, self.sense),
                best_gap_so_far=quality_to_gap(best_quality, self.sense),
            ))
        if not points:
            raise ReportError("В журнале нет оцененных особей", code="empty_evaluation")
        return points

    def test_rows(self) -> List[Dict]:
        evaluations = [e for e in self.events if e.get("event") == "test_evaluation"]
        if not evaluations:
            return []
        return list(evaluations[-1].get("instances", []))

    def education_gain(self) -> Optional[float]:
        """Средний относительный прирост итогового качества над первым удачным кандидатом"""
        gains = []
        for event in self.events:
            if event.get("event") != "education":
                continue
            first, final = event.get("first_quality"), event.get("final_quality")
            if first is None or final is None or first == 0:
                continue
            gains.append((final - first) / abs(first))
        if not gains:
            return None
        return sum(gains) / len(gains)

    def write(self, fmt: str = "csv") -> List[str]:
        if fmt not in ("csv", "table"):
            raise ReportError(f"Неизвестный формат {fmt}", code="report_error")
        points = self.curve()
        written = []

        header = ["individual_id", "tokens_cum", "gap", "best_gap_so_far"]
        rows = [[p.individual_id, p.tokens_cum, p.gap, p.best_gap_so_far] for p in points]
        written.append(FileUtils.write_text(self._path(CURVE_CSV), _csv_text(header, rows)))
        written.append(self._plot(points))

        test_header = ["instance_id", "reference", "objective", "gap"]
        test_rows = [[r["instance_id"], r["reference"], r["objective"], r["gap"]] for r in self.test_rows()]
        if fmt == "csv":
            written.append(FileUtils.write_text(self._path(TEST_CSV), _csv_text(test_header, test_rows)))
        else:
            written.append(FileUtils.write_text(self._path(TEST_TABLE), _table_text(test_header, test_rows)))

        best = {
            "run_id": self.summary.get("run_id"),
            "status": self.summary.get("status"),
            "best_id": self.summary.get("best_id"),
            "best_quality": self.summary.get("best_quality"),
            "best_gap": self.summary.get("best_gap", points[-1].best_gap_so_far),
            "test_gap": self.summary.get("test_gap"),
            "tokens_used": self.summary.get("tokens_used", points[-1].tokens_cum),
            "generations_completed": self.summary.get("generations_completed"),
            "evaluated_individuals": len(points),
            "education_gain": self.education_gain(),
        }
        best_path = self._path("best.json")
        if os.path.exists(best_path):
            record = FileUtils.read_json(best_path)
            best["impl_origins"] = [impl["origin"] for impl in record.get("impls", [])]
            best["hyperparameters"] = _hyper_lines(record.get("structure_source", ""))
        written.append(FileUtils.write_json(self._path(BEST_SUMMARY), best))
        logger.info(f"Отчет {self.run_dir}: {len(written)} файлов")
        return written

    def _plot(self, points: List[CurvePoint], width: int = 800, height: int = 480) -> str:
        """Ступенчатая кривая лучшего разрыва от числа токенов"""
        margin = 50
        image = Image.new("RGB", (width, height), "white")
        draw = ImageDraw.Draw(image)
        xs = [p.tokens_cum for p in points]
        ys = [p.best_gap_so_far for p in points]
        x_low, x_high = min(xs), max(xs)
        y_low, y_high = min(ys), max(ys)
        x_span = (x_high - x_low) or 1
        y_span = (y_high - y_low) or 1

        def to_pixel(x: float, y: float):
            px = margin + (x - x_low) / x_span * (width - 2 * margin)
            py = height - margin - (y - y_low) / y_span * (height - 2 * margin)
            return px, py

        draw.line([(margin, margin), (margin, height - margin), (width - margin, height - margin)], fill="black")
        steps = []
        for i, (x, y) in enumerate(zip(xs, ys)):
            if i > 0:
                steps.append(to_pixel(x, ys[i - 1]))
            steps.append(to_pixel(x, y))
        if len(steps) > 1:
            draw.line(steps, fill=(200, 40, 40), width=2)
        for x, y in zip(xs, ys):
            px, py = to_pixel(x, y)
            draw.ellipse([px - 3, py - 3, px + 3, py + 3], fill=(200, 40, 40))
        draw.text((margin, 10), "best gap, % vs tokens", fill="black")
        draw.text((margin, height - margin + 10), str(x_low), fill="black")
        draw.text((width - margin - 60, height - margin + 10), str(x_high), fill="black")
        draw.text((5, margin), f"{y_high:.2f}", fill="black")
        draw.text((5, height - margin - 10), f"{y_low:.2f}", fill="black")

        path = self._path(CURVE_PNG)
        image.save(path, format="PNG")
        return path


def _sense_for(kind: str) -> str:
    return "max" if kind == "mis" else "min"


def _hyper_lines(source: str) -> List[str]:
    lines = source.split("\n")
    markers = [i for i, line in enumerate(lines) if line.strip().lower().replace(" ", "") == "#hyperparameter#"]
    if len(markers) < 2:
        return []
    return [line.strip() for line in lines[markers[0] + 1:markers[1]] if line.strip()]


def aggregate(run_dirs: Sequence[str], output_dir: str) -> str:
    """
    Сводка по попыткам: строка на попытку и строки MIN и AVG по итоговым разрывам.
    Попытки без summary.json или с ошибкой отмечаются и в MIN/AVG не входят.
    """
    if not run_dirs:
        raise ReportError("Нет запусков для сводки", code="missing_log")
    rows = []
    gaps: List[float] = []
    test_gaps: List[float] = []
    for run_dir in sorted(run_dirs):
        summary_path = os.path.join(run_dir, "summary.json")
        name = os.path.basename(os.path.normpath(run_dir))
        if not os.path.exists(summary_path):
            rows.append([name, "failed", None, None, None])
            continue
        summary = FileUtils.read_json(summary_path)
        if summary.get("best_gap") is None:
            rows.append([name, summary.get("status", "failed"), None, None, summary.get("tokens_used")])
            continue
        gaps.append(summary["best_gap"])
        if summary.get("test_gap") is not None:
            test_gaps.append(summary["test_gap"])
        rows.append([name, summary.get("status"), summary["best_gap"], summary.get("test_gap"), summary.get("tokens_used")])

    if not gaps:
        raise ReportError("Ни одна попытка не дала результата", code="empty_evaluation")
    rows.append(["MIN", "", min(gaps), min(test_gaps) if test_gaps else None, None])
    rows.append(["AVG", "", sum(gaps) / len(gaps), sum(test_gaps) / len(test_gaps) if test_gaps else None, None])
    header = ["attempt", "status", "best_gap", "test_gap", "tokens_used"]
    return FileUtils.write_text(os.path.join(output_dir, AGGREGATE_CSV), _csv_text(header, rows))


def find_run_dirs(path: str) -> List[str]:
    """Каталоги запусков внутри каталога бенчмарка"""
    if not os.path.isdir(path):
        raise ReportError(f"Каталог не найден: {path}", code="missing_log")
    return sorted(
        os.path.join(path, name)
        for name in os.listdir(path)
        if os.path.exists(os.path.join(path, name, "config.json"))
    )
