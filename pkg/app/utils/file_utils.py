import json
import logging
import os
import shutil
import tempfile
from contextlib import contextmanager
from typing import Any, Iterator, Optional

logger = logging.getLogger(__name__)


class FileUtils:
    """Утилиты для работы с файлами запуска"""

    @staticmethod
    def ensure_dir(path: str) -> str:
        os.makedirs(path, exist_ok=True)
        return path

    @staticmethod
    @contextmanager
    def workspace(prefix: str = "cand-", base_dir: Optional[str] = None) -> Iterator[str]:
        """Временный каталог, удаляется при выходе"""
        path = tempfile.mkdtemp(prefix=prefix, dir=base_dir)
        try:
            yield path
        finally:
            FileUtils.cleanup_dir(path)

    @staticmethod
    def cleanup_dir(path: str):
        try:
            shutil.rmtree(path, ignore_errors=True)
        except Exception as e:
            logger.warning(f"Ошибка удаления временного каталога {path}: {e}")

    @staticmethod
    def write_text(path: str, text: str) -> str:
        """Атомарная запись: сначала во временный файл рядом, затем замена"""
        directory = os.path.dirname(os.path.abspath(path))
        FileUtils.ensure_dir(directory)
        fd, temp_path = tempfile.mkstemp(dir=directory, prefix=".tmp-")
        with os.fdopen(fd, "w", encoding="utf-8") as f:
            f.write(text)
        os.replace(temp_path, path)
        return path

    @staticmethod
    def dump_json(data: Any) -> str:
        return json.dumps(data, ensure_ascii=False, indent=2, sort_keys=True) + "\n"

    @staticmethod
    def write_json(path: str, data: Any) -> str:
        return FileUtils.write_text(path, FileUtils.dump_json(data))

    @staticmethod
    def read_json(path: str) -> Any:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)

    @staticmethod
    def read_text(path: str) -> str:
        with open(path, "r", encoding="utf-8") as f:
            return f.read()

    @staticmethod
    def tail(text: str, limit: int) -> str:
        """Последние limit символов текста"""
        if limit <= 0 or len(text) <= limit:
            return text
        return text[-limit:]
