import ast
import json
import logging
import os
from typing import Dict, Iterable, List, Optional

from pydantic import BaseModel, Field

from app.core.errors import KnowledgeError
from app.utils.code_parse import CodeParser

logger = logging.getLogger(__name__)


class KnowledgeFunction(BaseModel):
    """Функция, которую можно вызывать по имени из кода кандидата"""
    name: str
    body: str
    requires: List[str] = Field(default_factory=list)
    kind: str = "heubase"  # heubase | adaptive_memory


class KnowledgeView:
    """Упорядоченный набор функций HeuBase и AM, доступных при сборке"""

    def __init__(self, functions: Iterable[KnowledgeFunction] = ()):
        self._functions: Dict[str, KnowledgeFunction] = {}
        for function in functions:
            if function.name not in self._functions:
                self._functions[function.name] = function

    def names(self) -> List[str]:
        return list(self._functions)

    def get(self, name: str) -> Optional[KnowledgeFunction]:
        return self._functions.get(name)

    def __contains__(self, name: str) -> bool:
        return name in self._functions

    def __len__(self) -> int:
        return len(self._functions)


class HeuBaseEntry(BaseModel):
    """Готовый эвристический компонент из манифеста"""
    name: str
    signature: str
    docstring: str
    body: str
    tags: List[str] = Field(default_factory=list)
    provenance: str = "pre_constructed"  # pre_constructed | retrieved | promoted_from_am
    requires: List[str] = Field(default_factory=list)


class KnoBaseDoc(BaseModel):
    """Фрагмент экспертных знаний"""
    tags: List[str]
    text: str


def render_block(name: str, signature: str, docstring: str) -> str:
    """Блок сигнатура+докстрока в формате листинга базы эвристик"""
    params = signature.strip()
    if not params.startswith("("):
        params = f"({params})"
    doc_lines = [f"    {line}".rstrip() for line in docstring.strip().split("\n")]
    return "\n".join(["```python", f"def {name}{params}:", '    """', *doc_lines, '    """', "```"])


class HeuBase:
    """Манифест компонентов HeuBase и статистика их выбора"""

    VALID_PROVENANCE = ("pre_constructed", "retrieved", "promoted_from_am")

    def __init__(self, entries: List[HeuBaseEntry] = None):
        self.entries: List[HeuBaseEntry] = list(entries or [])
        self.selections: Dict[str, int] = {entry.name: 0 for entry in self.entries}
        self.observed = 0

    @classmethod
    def load_manifest(cls, path: str) -> "HeuBase":
        """Загружает манифест JSON: [{name, signature, docstring, body_path, tags, provenance}]"""
        if not os.path.exists(path):
            raise KnowledgeError(f"Манифест не найден: {path}", code="load_error")
        try:
            with open(path, "r", encoding="utf-8") as f:
                raw = json.load(f)
        except json.JSONDecodeError as e:
            raise KnowledgeError(f"Ошибка парсинга манифеста: {e}", code="malformed_entry")

        if not isinstance(raw, list):
            raise KnowledgeError("Манифест должен быть JSON-массивом", code="malformed_entry")

        base_dir = os.path.dirname(os.path.abspath(path))
        entries: List[HeuBaseEntry] = []
        seen = set()
        for item in raw:
            entry = cls._parse_entry(item, base_dir)
            if entry.name in seen:
                raise KnowledgeError(f"Повторное имя в манифесте: {entry.name}", code="duplicate_name")
            seen.add(entry.name)
            entries.append(entry)

        logger.info(f"HeuBase: загружено {len(entries)} компонентов из {path}")
        return cls(entries)

    @classmethod
    def _parse_entry(cls, item: dict, base_dir: str) -> HeuBaseEntry:
        if not isinstance(item, dict):
            raise KnowledgeError("Запись манифеста должна быть объектом", code="malformed_entry")
        for field in ("name", "signature", "docstring", "body_path"):
            if field not in item:
                raise KnowledgeError(f"В записи нет поля {field}", code="malformed_entry")

        name = str(item["name"])
        if not str(item["docstring"]).strip():
            raise KnowledgeError(f"Пустая докстрока у {name}", code="malformed_entry")
        provenance = item.get("provenance", "pre_constructed")
        if provenance not in cls.VALID_PROVENANCE:
            raise KnowledgeError(f"Неизвестное происхождение {provenance} у {name}", code="malformed_entry")

        body_path = os.path.join(base_dir, item["body_path"])
        try:
            with open(body_path, "r", encoding="utf-8") as f:
                body = f.read().strip("\n")
        except FileNotFoundError:
            raise KnowledgeError(f"Нет файла тела {body_path}", code="malformed_entry")

        if not cls._is_single_function(body, name):
            raise KnowledgeError(f"Тело {name} должно быть одной функцией {name}", code="malformed_entry")

        return HeuBaseEntry(
            name=name,
            signature=str(item["signature"]),
            docstring=str(item["docstring"]),
            body=body,
            tags=list(item.get("tags", [])),
            provenance=provenance,
            requires=list(item.get("requires", [])),
        )

    @staticmethod
    def _is_single_function(body: str, name: str) -> bool:
        try:
            tree = ast.parse(body)
        except SyntaxError:
            return False
        return (
            len(tree.body) == 1
            and isinstance(tree.body[0], (ast.FunctionDef, ast.AsyncFunctionDef))
            and tree.body[0].name == name
        )

    def matching(self, problem_tags: Iterable[str]) -> List[HeuBaseEntry]:
        tags = set(problem_tags)
        return [entry for entry in self.entries if tags.intersection(entry.tags)]

    def lint(self) -> List[str]:
        """Нарушения правила плоских записей: компонент вызывает другой компонент"""
        names = {entry.name for entry in self.entries}
        problems = []
        for entry in self.entries:
            calls = CodeParser.called_names(entry.body) & (names - {entry.name})
            for callee in sorted(calls):
                problems.append(f"{entry.name} вызывает другой компонент HeuBase: {callee}")
        return problems

    def view(self, problem_tags: Iterable[str] = None) -> List[KnowledgeFunction]:
        entries = self.entries if problem_tags is None else self.matching(problem_tags)
        return [
            KnowledgeFunction(name=e.name, body=e.body, requires=e.requires, kind="heubase")
            for e in entries
        ]

    def record_selection(self, program: str) -> List[str]:
        """Учитывает вызовы компонентов в собранной программе"""
        called = CodeParser.called_names(program)
        selected = [entry.name for entry in self.entries if entry.name in called]
        for name in selected:
            self.selections[name] = self.selections.get(name, 0) + 1
        self.observed += 1
        return selected

    def frequencies(self) -> Dict[str, float]:
        if self.observed == 0:
            return {name: 0.0 for name in self.selections}
        return {name: count / self.observed for name, count in self.selections.items()}

    def stats_dict(self) -> dict:
        return {"observed": self.observed, "selections": dict(self.selections)}

    def load_stats(self, data: dict):
        self.observed = int(data.get("observed", 0))
        for name, count in data.get("selections", {}).items():
            if name in self.selections:
                self.selections[name] = int(count)


def render_heubase_prompt(
    base: Optional[HeuBase],
    problem_tags: Iterable[str],
    header: str,
    memory_blocks: List[str] = None,
) -> str:
    """
    Листинг базы эвристик для промпта: заголовок heubase_common и блоки
    сигнатура+докстрока. Сначала HeuBase (порядок манифеста), затем AM.
    Тела функций никогда не выводятся.
    """
    blocks: List[str] = []
    if base is not None:
        for entry in base.matching(problem_tags):
            blocks.append(render_block(entry.name, entry.signature, entry.docstring))
    blocks.extend(memory_blocks or [])
    if not blocks:
        return ""
    return header.rstrip() + "\n\n" + "\n\n".join(blocks)


class KnoBase:
    """Тексты экспертных знаний: каталог пар {tags.json, text.md}"""

    def __init__(self, docs: List[KnoBaseDoc] = None):
        self.docs = list(docs or [])

    @classmethod
    def load_dir(cls, path: str) -> "KnoBase":
        if not os.path.isdir(path):
            raise KnowledgeError(f"Каталог KnoBase не найден: {path}", code="load_error")

        docs = []
        for name in sorted(os.listdir(path)):
            doc_dir = os.path.join(path, name)
            tags_path = os.path.join(doc_dir, "tags.json")
            text_path = os.path.join(doc_dir, "text.md")
            if not (os.path.isfile(tags_path) and os.path.isfile(text_path)):
                continue
            with open(tags_path, "r", encoding="utf-8") as f:
                tags = json.load(f)
            with open(text_path, "r", encoding="utf-8") as f:
                text = f.read().strip()
            if not text:
                raise KnowledgeError(f"Пустой текст знаний: {doc_dir}", code="malformed_entry")
            docs.append(KnoBaseDoc(tags=list(tags), text=text))

        logger.info(f"KnoBase: загружено {len(docs)} документов")
        return cls(docs)

    def text_for(self, problem_tags: Iterable[str]) -> str:
        tags = set(problem_tags)
        return "\n\n".join(doc.text for doc in self.docs if tags.intersection(doc.tags))
