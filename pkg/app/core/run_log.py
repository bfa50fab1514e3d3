import json
import logging
import os
from typing import Any, Dict, Iterator, List, Optional

logger = logging.getLogger(__name__)

# Поля времени, которые в режиме воспроизведения пишутся нулями
VOLATILE_FIELDS = ("elapsed_ms", "wall_ms", "wall_s")


def _scrub(value: Any) -> Any:
    if isinstance(value, dict):
        return {k: (0 if k in VOLATILE_FIELDS else _scrub(v)) for k, v in value.items()}
    if isinstance(value, list):
        return [_scrub(v) for v in value]
    return value


class JsonlWriter:
    """Журнал JSONL с подсчетом строк (для усечения при возобновлении)"""

    def __init__(self, path: str, deterministic: bool = False):
        self.path = path
        self.deterministic = deterministic
        self.lines = 0
        if os.path.exists(path):
            with open(path, "r", encoding="utf-8") as f:
                self.lines = sum(1 for _ in f)

    def write(self, record: Dict[str, Any]):
        if self.deterministic:
            record = _scrub(record)
        with open(self.path, "a", encoding="utf-8") as f:
            f.write(json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n")
        self.lines += 1

    def truncate(self, lines: int):
        """Оставляет первые lines строк"""
        if not os.path.exists(self.path):
            self.lines = 0
            return
        with open(self.path, "r", encoding="utf-8") as f:
            kept = f.readlines()[:lines]
        with open(self.path, "w", encoding="utf-8") as f:
            f.writelines(kept)
        self.lines = len(kept)


class RunLog(JsonlWriter):
    """Журнал событий запуска log.jsonl"""

    def event(self, kind: str, **fields: Any):
        self.write({"event": kind, **fields})


def read_events(path: str, kind: Optional[str] = None) -> Iterator[Dict[str, Any]]:
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            if kind is None or record.get("event") == kind:
                yield record


def load_events(path: str, kind: Optional[str] = None) -> List[Dict[str, Any]]:
    return list(read_events(path, kind))
