import argparse
import asyncio
import logging
import os
import sys
from typing import List, Optional

from app.config import Config
from app.core.errors import EngineError
from app.core.knowledge import HeuBase
from app.core.prompts import PromptKit
from app.core.report import RunReport, aggregate, find_run_dirs
from app.core.run_config import RunConfig
from app.core.runner import EngineRun, bench, run_dir_for
from app.utils.file_utils import FileUtils

# Настройка логирования
log_level = getattr(logging, Config.LOG_LEVEL.upper(), logging.INFO)
logging.basicConfig(level=log_level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
logger = logging.getLogger(__name__)

DEFAULT_HEUBASE = os.path.join(os.path.dirname(os.path.dirname(__file__)), "data", "heubase", "manifest.json")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="run_engine.py", description="Двухуровневый LLM-конструктор эвристик")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="запуск по конфигурации")
    run.add_argument("--config", required=True)
    run.add_argument("--seed", type=int)
    run.add_argument("--mock", help="транскрипт mock-LLM вместо живой модели")
    run.add_argument("--set", dest="overrides", action="append", default=[], help="переопределение key=value")
    run.add_argument("--stop-after", type=int, help="приостановить после поколения N")
    run.add_argument("--overwrite", action="store_true")

    resume = sub.add_parser("resume", help="продолжить запуск с контрольной точки")
    resume.add_argument("run_dir")
    resume.add_argument("--stop-after", type=int)

    report = sub.add_parser("report", help="отчеты по каталогу запуска")
    report.add_argument("run_dir")
    report.add_argument("--format", choices=["csv", "table"], default="csv")
    report.add_argument("--aggregate", action="store_true", help="сводка MIN/AVG по каталогу бенчмарка")

    bench_cmd = sub.add_parser("bench", help="несколько попыток одной конфигурации")
    bench_cmd.add_argument("--config", required=True)
    bench_cmd.add_argument("--attempts", type=int, default=3)
    bench_cmd.add_argument("--mock")
    bench_cmd.add_argument("--set", dest="overrides", action="append", default=[])
    bench_cmd.add_argument("--overwrite", action="store_true")

    prompts = sub.add_parser("prompts", help="шаблоны промптов")
    prompts.add_argument("action", choices=["lint"])

    heubase = sub.add_parser("heubase", help="база эвристик")
    heubase.add_argument("action", choices=["lint", "stats"])
    heubase.add_argument("--manifest", default=DEFAULT_HEUBASE)
    heubase.add_argument("--run-dir", help="каталог запуска со статистикой выбора")
    return parser


def load_config(args: argparse.Namespace) -> RunConfig:
    overrides = list(args.overrides)
    if getattr(args, "seed", None) is not None:
        overrides.append(f"seed={args.seed}")
    if args.mock:
        overrides.extend(["llm.provider=mock", f"llm.transcript={os.path.abspath(args.mock)}"])
    return RunConfig.load(args.config, overrides)


def print_lines(title: str, lines: List[str]) -> int:
    if not lines:
        print(f"✅ {title}: замечаний нет")
        return 0
    print(f"❌ {title}: {len(lines)} замечаний")
    for line in lines:
        print(f"   • {line}")
    return 1


async def dispatch(args: argparse.Namespace) -> int:
    if args.command == "run":
        cfg = load_config(args)
        summary = await EngineRun(cfg, run_dir=run_dir_for(cfg)).start(args.stop_after, args.overwrite)
        print(f"🏁 {summary.run_id}: {summary.status}, лучший разрыв {summary.best_gap}, токенов {summary.tokens_used}")
        return 0 if summary.status != "failed" else 1

    if args.command == "resume":
        summary = await EngineRun.resume(args.run_dir, args.stop_after)
        print(f"🏁 {summary.run_id}: {summary.status}, лучший разрыв {summary.best_gap}")
        return 0 if summary.status != "failed" else 1

    if args.command == "report":
        if args.aggregate:
            path = aggregate(find_run_dirs(args.run_dir), args.run_dir)
            print(f"📊 {path}")
            return 0
        for path in RunReport(args.run_dir).write(args.format):
            print(f"📄 {path}")
        return 0

    if args.command == "bench":
        path = await bench(load_config(args), args.attempts, args.overwrite)
        print(f"📊 {path}")
        return 0

    if args.command == "prompts":
        return print_lines("Шаблоны промптов", PromptKit(Config.PROMPTS_DIR).lint())

    if args.command == "heubase":
        base = HeuBase.load_manifest(args.manifest)
        if args.action == "lint":
            return print_lines("HeuBase", base.lint())
        if args.run_dir:
            stats_path = os.path.join(args.run_dir, "heubase_stats.json")
            if os.path.exists(stats_path):
                base.load_stats(FileUtils.read_json(stats_path))
        print(f"📚 HeuBase: {len(base.entries)} компонентов, отобрано программ: {base.observed}")
        for name, frequency in base.frequencies().items():
            print(f"   {name}: {frequency:.3f}")
        return 0

    return 2


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return asyncio.run(dispatch(args))
    except EngineError as e:
        logger.error(f"{e}")
        print(f"❌ {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
