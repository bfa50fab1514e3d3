import re
from dataclasses import dataclass
from typing import List, Optional, Set, Tuple

from app.core.errors import ExtractionError


# Модули, через которые LLM "импортирует" функции из базы эвристик
KNOWLEDGE_MODULES = ("heubase", "memory", "am", "adaptive_memory", "heuristic_database", "heuristics")

_FENCE_RE = re.compile(r"```[ \t]*([\w+.-]*)[^\n]*\n(.*?)```", re.DOTALL)
_DEF_RE = re.compile(r"^(?:async\s+)?def\s+([A-Za-z_]\w*)\s*\(")
_TOKEN_RE = re.compile(
    r'(?P<str>"""[\s\S]*?"""|\'\'\'[\s\S]*?\'\'\'|"(?:\\.|[^"\\\n])*"|\'(?:\\.|[^\'\\\n])*\')'
    r"|(?P<comment>#[^\n]*)"
    r"|(?P<num>\d+\.?\d*(?:[eE][-+]?\d+)?|\.\d+(?:[eE][-+]?\d+)?)"
    r"|(?P<name>[A-Za-z_]\w*)"
    r"|(?P<op>\*\*|//|==|!=|<=|>=|->|[-+*/%<>=!&|^~@:;.,()\[\]{}])"
)
_KNOWLEDGE_IMPORT_RE = re.compile(
    r"^[ \t]*from\s+(?:%s)\s+import\s+\(?([^)\n]+)\)?[ \t]*$" % "|".join(KNOWLEDGE_MODULES),
    re.MULTILINE,
)
_TOP_IMPORT_RE = re.compile(r"^(?:import\s+\S.*|from\s+\S+\s+import\s+.+)$")


@dataclass
class CodeBlock:
    """Код, извлеченный из ответа LLM"""
    code: str
    fenced: bool


@dataclass
class FunctionBlock:
    """Функция верхнего уровня: имя и диапазон строк [start, end)"""
    name: str
    start: int
    end: int
    header_end: int

    def text(self, lines: List[str]) -> str:
        return "\n".join(lines[self.start:self.end])


class CodeParser:
    """Разбор кода кандидатов без AST: блоки кода, функции, токены"""

    @staticmethod
    def extract_code_block(text: str) -> CodeBlock:
        """
        Возвращает содержимое первого блока ```...```.

        Если ограждений нет - весь текст без пробелов по краям, fenced=False.
        """
        if text is None or not text.strip():
            raise ExtractionError("Пустой ответ LLM", code="empty_completion")

        match = _FENCE_RE.search(text)
        if match:
            return CodeBlock(code=match.group(2).strip("\n").rstrip(), fenced=True)
        return CodeBlock(code=text.strip(), fenced=False)

    @staticmethod
    def strip_fence(text: str) -> str:
        if "```" in text:
            return CodeParser.extract_code_block(text).code
        return text

    @staticmethod
    def find_functions(source: str) -> List[FunctionBlock]:
        """Находит функции верхнего уровня по отступам"""
        lines = source.split("\n")
        blocks: List[FunctionBlock] = []
        i = 0
        while i < len(lines):
            match = _DEF_RE.match(lines[i])
            if not match:
                i += 1
                continue

            start = i
            # Декораторы над функцией
            while start > 0 and lines[start - 1].startswith("@"):
                start -= 1

            header_end = CodeParser._header_end(lines, i)
            end = header_end + 1
            in_string: Optional[str] = None
            last_content = header_end
            while end < len(lines):
                line = lines[end]
                if in_string is None and line.strip() and not line[0].isspace():
                    break
                in_string = CodeParser._track_triple_quotes(line, in_string)
                if line.strip():
                    last_content = end
                end += 1

            blocks.append(FunctionBlock(
                name=match.group(1), start=start, end=last_content + 1, header_end=header_end
            ))
            i = last_content + 1
        return blocks

    @staticmethod
    def _header_end(lines: List[str], index: int) -> int:
        """Последняя строка заголовка def (заголовок может занимать несколько строк)"""
        depth = 0
        for j in range(index, len(lines)):
            code = CodeParser._strip_comment(lines[j])
            depth += code.count("(") + code.count("[") - code.count(")") - code.count("]")
            if depth <= 0 and code.rstrip().endswith(":"):
                return j
            # Однострочное тело: def f(x): return x
            if depth <= 0 and j == index:
                return j
        return index

    @staticmethod
    def _strip_comment(line: str) -> str:
        result = []
        quote = None
        for ch in line:
            if quote:
                if ch == quote:
                    quote = None
            elif ch in ("'", '"'):
                quote = ch
            elif ch == "#":
                break
            result.append(ch)
        return "".join(result)

    @staticmethod
    def _track_triple_quotes(line: str, state: Optional[str]) -> Optional[str]:
        for quote in ('"""', "'''"):
            count = line.count(quote)
            if state is None and count % 2 == 1:
                return quote
            if state == quote and count % 2 == 1:
                return None
        return state

    @staticmethod
    def function_source(source: str, name: str) -> Optional[str]:
        lines = source.split("\n")
        for block in CodeParser.find_functions(source):
            if block.name == name:
                return block.text(lines)
        return None

    @staticmethod
    def tokens(source: str) -> List[Tuple[str, str]]:
        """Токены (вид, текст) без комментариев"""
        result = []
        for match in _TOKEN_RE.finditer(source):
            kind = match.lastgroup
            if kind == "comment":
                continue
            result.append((kind, match.group(kind)))
        return result

    @staticmethod
    def normalized_tokens(source: str) -> List[str]:
        """Нормализованный поток: имена в нижнем регистре, литералы - в корзины"""
        normalized = []
        for kind, text in CodeParser.tokens(source):
            if kind == "name":
                normalized.append(text.casefold())
            elif kind == "num":
                normalized.append("<num>")
            elif kind == "str":
                normalized.append("<str>")
            else:
                normalized.append(text)
        return normalized

    @staticmethod
    def called_names(source: str) -> Set[str]:
        """Имена, за которыми следует вызов name(...); атрибуты и определения не считаются"""
        toks = CodeParser.tokens(source)
        names: Set[str] = set()
        for i, (kind, text) in enumerate(toks):
            if kind != "name" or i + 1 >= len(toks) or toks[i + 1][1] != "(":
                continue
            prev = toks[i - 1][1] if i > 0 else ""
            if prev in (".", "def", "class"):
                continue
            names.add(text)
        return names

    @staticmethod
    def knowledge_imports(source: str) -> List[str]:
        """Имена из строк вида `from heubase import a, b`"""
        names: List[str] = []
        for match in _KNOWLEDGE_IMPORT_RE.finditer(source):
            for part in match.group(1).split(","):
                name = part.strip().split(" as ")[0].strip()
                if name and name not in names:
                    names.append(name)
        return names

    @staticmethod
    def remove_knowledge_imports(source: str) -> str:
        return _KNOWLEDGE_IMPORT_RE.sub("", source)

    @staticmethod
    def top_level_imports(source: str) -> List[str]:
        imports = []
        for line in source.split("\n"):
            stripped = line.rstrip()
            if _TOP_IMPORT_RE.match(stripped) and not _KNOWLEDGE_IMPORT_RE.match(stripped):
                if stripped not in imports:
                    imports.append(stripped)
        return imports

    @staticmethod
    def defined_functions(source: str) -> List[str]:
        return [block.name for block in CodeParser.find_functions(source)]
