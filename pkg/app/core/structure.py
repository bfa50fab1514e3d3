import logging
import re
from typing import Dict, List, Optional, Tuple, Union

from app.core.errors import AssemblyError, StructureError
from app.core.knowledge import KnowledgeView
from app.core.models import (
    FunctionImpl,
    FunctionSlot,
    HeuristicIndividual,
    HyperParam,
    ImplOrigin,
    Lineage,
    StructureCode,
)
from app.utils.code_parse import CodeParser

logger = logging.getLogger(__name__)

MARKER = "#Hyperparameter#"
_MARKER_RE = re.compile(r"^\s*#\s*Hyperparameter\s*#\s*$", re.IGNORECASE)
_ASSIGN_RE = re.compile(r"^\s*([A-Za-z_]\w*)\s*=\s*([^#]+?)\s*(#.*)?$")
_DECIMAL_RE = re.compile(r"^[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?$")
_INT_RE = re.compile(r"^[-+]?\d+$")
_INT_FLAG_RE = re.compile(r"#\s*int\b", re.IGNORECASE)
_SLOT_NAME_RE = re.compile(r"^func_(\d+)$")
_SLOT_REF_RE = re.compile(r"\bfunc_(\d+)\b")
_PURPOSE_RE = re.compile(r"^\s*#\s*Purpose\s*:\s*(.*)$", re.IGNORECASE)
_HEADER_RE = re.compile(r"def\s+func_\d+\s*(\(.*\))\s*(->\s*[^:]+)?\s*:", re.DOTALL)
_DOCSTRING_RE = re.compile(r'("""|\'\'\')([\s\S]*?)\1')

DRIVER_TEMPLATE = '''

if __name__ == "__main__":
    import json as _json
    import sys as _sys

    def _to_json(value):
        if hasattr(value, "tolist"):
            return value.tolist()
        if hasattr(value, "item"):
            return value.item()
        raise TypeError(f"not JSON serializable: {type(value).__name__}")

    _instance = _json.load(_sys.stdin)
    _solution = ENTRY_POINT(_instance)
    _sys.stdout.write("\\n" + _json.dumps({"solution": _solution}, default=_to_json) + "\\n")
'''


def _format_value(value: Union[int, float], is_integer: bool) -> str:
    if is_integer:
        return str(int(round(value)))
    return repr(float(value))


def serialize_hyper_block(params: List[HyperParam]) -> str:
    lines = [MARKER]
    for param in params:
        suffix = "  # int" if param.is_integer else ""
        lines.append(f"{param.name} = {_format_value(param.value, param.is_integer)}{suffix}")
    lines.append(MARKER)
    return "\n".join(lines)


def _marker_lines(lines: List[str]) -> Tuple[int, int]:
    markers = [i for i, line in enumerate(lines) if _MARKER_RE.match(line)]
    if len(markers) < 2:
        raise StructureError("Нет пары маркеров #Hyperparameter#", code="missing_hyper_markers")
    return markers[0], markers[1]


def _parse_hyper_lines(lines: List[str]) -> List[HyperParam]:
    params: List[HyperParam] = []
    for line in lines:
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        match = _ASSIGN_RE.match(line)
        if not match:
            logger.warning(f"Строка в блоке гиперпараметров пропущена: {stripped}")
            continue
        name, literal, comment = match.group(1), match.group(2).strip(), match.group(3) or ""
        if not _DECIMAL_RE.match(literal):
            raise StructureError(
                f"Значение {name} не десятичный литерал: {literal}", code="invalid_hyper_value"
            )
        if _INT_RE.match(literal):
            value: Union[int, float] = int(literal)
        else:
            value = float(literal)
        is_integer = bool(_INT_FLAG_RE.search(comment)) or isinstance(value, int)
        if is_integer and isinstance(value, float) and not value.is_integer():
            raise StructureError(
                f"Значение {name} помечено как целое, но равно {literal}", code="invalid_hyper_value"
            )
        if any(p.name == name for p in params):
            raise StructureError(f"Гиперпараметр {name} задан дважды", code="duplicate_hyperparameter")
        params.append(HyperParam(name=name, value=int(value) if is_integer else value, is_integer=is_integer))
    return params


def _extract_purpose(block_lines: List[str], header_offset: int) -> Optional[str]:
    body = block_lines[header_offset + 1:]
    for index, line in enumerate(body):
        match = _PURPOSE_RE.match(line)
        if not match:
            continue
        text = match.group(1).strip()
        if text:
            return text
        if index + 1 < len(body) and body[index + 1].strip().startswith("#"):
            return body[index + 1].strip().lstrip("#").strip() or None
        return None

    doc = _DOCSTRING_RE.search("\n".join(body))
    if doc:
        text = " ".join(part.strip() for part in doc.group(2).strip().split("\n") if part.strip())
        return text or None
    return None


def _header_signature(header: str) -> str:
    code = "\n".join(CodeParser._strip_comment(line) for line in header.split("\n"))
    match = _HEADER_RE.search(code)
    if not match:
        return ""
    params = " ".join(match.group(1).split())
    ret = match.group(2)
    return f"{params} {' '.join(ret.split())}" if ret else params


def _canonical_stub(header: str, purpose: str) -> str:
    flat = " ".join(purpose.split())
    return f"{header}\n    # Purpose: {flat}\n    pass"


def _renumber(source: str, slot_ids: List[int]) -> str:
    mapping = {old: new for new, old in enumerate(sorted(slot_ids), start=1)}
    return _SLOT_REF_RE.sub(lambda m: f"func_{mapping.get(int(m.group(1)), int(m.group(1)))}", source)


def parse_structure(source: str, max_func_num: int = 4) -> StructureCode:
    """
    Разбирает код структуры алгоритма.

    Заглушки func_i приводятся к каноническому виду (def, строка # Purpose:, pass),
    поэтому повторный разбор результата дает ту же структуру.
    """
    text = CodeParser.strip_fence(source).strip("\n")
    lines = text.split("\n")

    first, second = _marker_lines(lines)
    hyper_block = _parse_hyper_lines(lines[first + 1:second])
    max_time = next((p for p in hyper_block if p.name == "MAX_TIME"), None)
    if max_time is None:
        raise StructureError("В блоке гиперпараметров нет MAX_TIME", code="missing_max_time")
    if max_time.value <= 0:
        raise StructureError("MAX_TIME должен быть положительным", code="invalid_hyper_value")

    blocks = [b for b in CodeParser.find_functions(text) if _SLOT_NAME_RE.match(b.name)]
    if not blocks:
        raise StructureError("В структуре нет заглушек func_i", code="missing_slots")

    ids: List[int] = []
    for block in blocks:
        slot_id = int(_SLOT_NAME_RE.match(block.name).group(1))
        if slot_id in ids:
            raise StructureError(f"Заглушка func_{slot_id} определена дважды", code="duplicate_slot")
        ids.append(slot_id)

    if len(ids) > max_func_num:
        raise StructureError(
            f"Заглушек {len(ids)}, допустимо не больше {max_func_num}", code="too_many_slots"
        )

    referenced = {int(m.group(1)) for m in _SLOT_REF_RE.finditer(
        " ".join(tok for kind, tok in CodeParser.tokens(text) if kind == "name")
    )}
    undefined = sorted(referenced - set(ids))
    if undefined:
        raise StructureError(
            f"Вызов неопределенных заглушек: {undefined}", code="undefined_slot_reference"
        )

    renumbered = sorted(ids) != list(range(1, len(ids) + 1))
    if renumbered:
        logger.warning(f"Идентификаторы заглушек {sorted(ids)} не подряд, перенумеровываем")
        text = _renumber(text, ids)
        lines = text.split("\n")
        blocks = [b for b in CodeParser.find_functions(text) if _SLOT_NAME_RE.match(b.name)]

    slots: List[FunctionSlot] = []
    replacements: List[Tuple[int, int, str]] = []
    for block in blocks:
        slot_id = int(_SLOT_NAME_RE.match(block.name).group(1))
        block_lines = lines[block.start:block.end]
        header_offset = block.header_end - block.start
        header = "\n".join(block_lines[:header_offset + 1])
        purpose = _extract_purpose(block_lines, header_offset)
        if not purpose:
            raise StructureError(f"У func_{slot_id} нет описания назначения", code="missing_purpose")

        one_liner = not CodeParser._strip_comment(lines[block.header_end]).rstrip().endswith(":")
        if one_liner:
            header = header.split(":", 1)[0] + ":" if ")" in header else header
        slots.append(FunctionSlot(id=slot_id, purpose=" ".join(purpose.split()), signature=_header_signature(header)))
        replacements.append((block.start, block.end, _canonical_stub(header, purpose)))

    for start, end, stub in sorted(replacements, reverse=True):
        lines[start:end] = stub.split("\n")

    return StructureCode(
        source="\n".join(lines),
        hyper_block=hyper_block,
        slots=sorted(slots, key=lambda s: s.id),
        max_time_s=float(max_time.value),
        renumbered=renumbered,
    )


def _ensure_purpose(impl_source: str, purpose: str) -> str:
    """Возвращает реализацию со строкой # Purpose: сразу после заголовка"""
    lines = impl_source.split("\n")
    blocks = CodeParser.find_functions(impl_source)
    if not blocks:
        return impl_source
    block = blocks[0]
    body = lines[block.header_end + 1:block.end]
    if any(_PURPOSE_RE.match(line) for line in body):
        return impl_source
    indent = "    "
    for line in body:
        if line.strip():
            indent = line[:len(line) - len(line.lstrip())] or indent
            break
    flat = " ".join(purpose.split())
    lines.insert(block.header_end + 1, f"{indent}# Purpose: {flat}")
    return "\n".join(lines)


def render_program(individual: HeuristicIndividual) -> str:
    """
    Код особи: структура, в которой реализованные заглушки заменены реализациями.
    Нереализованные заглушки остаются как есть.
    """
    structure = individual.structure
    lines = structure.source.split("\n")
    blocks = [b for b in CodeParser.find_functions(structure.source) if _SLOT_NAME_RE.match(b.name)]
    for block in sorted(blocks, key=lambda b: b.start, reverse=True):
        slot_id = int(_SLOT_NAME_RE.match(block.name).group(1))
        impl = individual.impls.get(slot_id)
        if impl is None:
            continue
        slot = structure.slot(slot_id)
        source = _ensure_purpose(impl.source.strip("\n"), slot.purpose if slot else "")
        lines[block.start:block.end] = source.split("\n")
    return "\n".join(lines)


def split_program(
    program: str,
    reference: StructureCode,
    keep_max_time: bool = True,
) -> Tuple[StructureCode, Dict[int, str]]:
    """
    Делит полный код программы на структуру и реализации слотов.

    Назначения слотов берутся из reference. Если слот пропал из программы,
    его заглушка возвращается в структуру, а реализации для него нет.
    """
    text = CodeParser.strip_fence(program).strip("\n")
    lines = text.split("\n")
    blocks = {b.name: b for b in CodeParser.find_functions(text)}

    impls: Dict[int, str] = {}
    replacements: List[Tuple[int, int, str]] = []
    missing: List[FunctionSlot] = []
    for slot in reference.slots:
        block = blocks.get(f"func_{slot.id}")
        if block is None:
            missing.append(slot)
            continue
        impls[slot.id] = block.text(lines)
        header = "\n".join(lines[block.start:block.header_end + 1])
        if not CodeParser._strip_comment(lines[block.header_end]).rstrip().endswith(":"):
            header = header.split(":", 1)[0] + ":"
        replacements.append((block.start, block.end, _canonical_stub(header, slot.purpose)))

    for start, end, stub in sorted(replacements, reverse=True):
        lines[start:end] = stub.split("\n")

    if missing:
        logger.warning(f"В программе нет слотов {[s.id for s in missing]}")
        try:
            _, second = _marker_lines(lines)
        except StructureError:
            second = -1
        stubs: List[str] = []
        for slot in missing:
            stubs.extend(["", "", _canonical_stub(f"def func_{slot.id}{slot.signature.split(' ->')[0] or '()'}:", slot.purpose)])
        lines[second + 1:second + 1] = "\n".join(stubs).split("\n")

    structure = parse_structure("\n".join(lines), max_func_num=max(len(reference.slots), 1))
    if keep_max_time and structure.max_time_s != reference.max_time_s:
        logger.warning("MAX_TIME в программе изменен, восстанавливаем")
        structure = restore_max_time(structure, reference)
    return structure, impls


def restore_max_time(structure: StructureCode, reference: StructureCode) -> StructureCode:
    original = next(p for p in reference.hyper_block if p.name == "MAX_TIME")
    return _rewrite_hyper(structure, {"MAX_TIME": original.value}, allow_max_time=True)


def set_hyper_values(structure: StructureCode, values: Dict[str, Union[int, float]]) -> StructureCode:
    """Подставляет новые значения гиперпараметров. MAX_TIME менять нельзя."""
    if "MAX_TIME" in values:
        raise StructureError("MAX_TIME не калибруется", code="immutable_hyperparameter")
    return _rewrite_hyper(structure, values, allow_max_time=False)


def _rewrite_hyper(
    structure: StructureCode,
    values: Dict[str, Union[int, float]],
    allow_max_time: bool,
) -> StructureCode:
    known = {p.name: p for p in structure.hyper_block}
    unknown = [name for name in values if name not in known]
    if unknown:
        raise StructureError(f"Неизвестные гиперпараметры: {unknown}", code="unknown_hyperparameter")

    lines = structure.source.split("\n")
    first, second = _marker_lines(lines)
    for index in range(first + 1, second):
        match = _ASSIGN_RE.match(lines[index])
        if not match or match.group(1) not in values:
            continue
        param = known[match.group(1)]
        if param.name == "MAX_TIME" and not allow_max_time:
            continue
        suffix = "  # int" if param.is_integer else ""
        lines[index] = f"{param.name} = {_format_value(values[param.name], param.is_integer)}{suffix}"

    return parse_structure("\n".join(lines), max_func_num=max(len(structure.slots), 1))


def make_impl(slot_id: int, source: str, view: Optional[KnowledgeView]) -> FunctionImpl:
    """Реализация слота с происхождением по вызовам функций из базы знаний"""
    refs: List[str] = []
    if view is not None and len(view):
        called = CodeParser.called_names(source) | set(CodeParser.knowledge_imports(source))
        refs = [name for name in view.names() if name in called]

    origin = ImplOrigin.LLM_GENERATED
    kinds = {view.get(name).kind for name in refs} if refs else set()
    if "adaptive_memory" in kinds:
        origin = ImplOrigin.ADAPTIVE_MEMORY
    elif "heubase" in kinds:
        origin = ImplOrigin.HEUBASE
    return FunctionImpl(slot_id=slot_id, source=source.strip("\n"), origin=origin, knowledge_refs=refs)


def _strip_hyper_block(program: str) -> Tuple[List[str], List[str]]:
    lines = program.split("\n")
    first, second = _marker_lines(lines)
    return lines[:first], lines[second + 1:]


def assemble(
    individual: HeuristicIndividual,
    view: Optional[KnowledgeView] = None,
    entry_point: str = "solve",
) -> str:
    """
    Собирает исполняемую программу: блок гиперпараметров, импорты и тела функций
    из базы знаний, код особи и драйвер, читающий экземпляр из stdin.
    """
    if not individual.is_complete():
        raise AssemblyError(f"Особь {individual.id} реализована не полностью", code="partial_individual")

    view = view or KnowledgeView()
    program = render_program(individual)
    imported = CodeParser.knowledge_imports(program)
    unresolved = [name for name in imported if name not in view]
    for impl in individual.impls.values():
        unresolved.extend(name for name in impl.knowledge_refs if name not in view and name not in unresolved)
    if unresolved:
        raise AssemblyError(
            f"Функции не найдены в базе знаний: {unresolved}", code="unresolved_knowledge_reference"
        )
    program = CodeParser.remove_knowledge_imports(program)

    needed = set(imported) | (CodeParser.called_names(program) & set(view.names()))
    # Замыкание по вызовам между функциями базы
    frontier = list(needed)
    while frontier:
        function = view.get(frontier.pop())
        for name in CodeParser.called_names(function.body) & set(view.names()):
            if name not in needed:
                needed.add(name)
                frontier.append(name)

    defined = set(CodeParser.defined_functions(program))
    clashes = sorted(defined & needed)
    if clashes:
        raise AssemblyError(
            f"Функции базы знаний переопределены в коде особи: {clashes}", code="duplicate_definition"
        )

    ordered = [name for name in view.names() if name in needed]
    requires: List[str] = []
    bodies: List[str] = []
    for name in ordered:
        function = view.get(name)
        for line in function.requires:
            if line not in requires:
                requires.append(line)
        bodies.append(function.body.strip("\n"))

    head, tail = _strip_hyper_block(program)
    parts = [serialize_hyper_block(individual.structure.hyper_block)]
    if requires:
        parts.append("\n".join(requires))
    prefix = "\n".join(head).strip("\n")
    if prefix:
        parts.append(prefix)
    parts.extend(bodies)
    parts.append("\n".join(tail).strip("\n"))
    return "\n\n\n".join(parts) + DRIVER_TEMPLATE.replace("ENTRY_POINT", entry_point)


def individual_from_record(record: dict, max_func_num: int = 16) -> HeuristicIndividual:
    """Восстанавливает особь из документа to_record()"""
    structure = parse_structure(record["structure_source"], max_func_num=max_func_num)
    impls = {
        int(item["slot_id"]): FunctionImpl(
            slot_id=int(item["slot_id"]),
            source=item["source"],
            origin=ImplOrigin(item.get("origin", "llm_generated")),
            knowledge_refs=list(item.get("knowledge_refs", [])),
        )
        for item in record.get("impls", [])
    }
    lineage = record.get("lineage") or {}
    return HeuristicIndividual(
        id=record["id"],
        structure=structure,
        impls=impls,
        quality=record.get("quality"),
        lineage=Lineage(kind=lineage.get("kind", "init"), parents=list(lineage.get("parents", []))),
        generation_born=int(record.get("generation_born", 0)),
        token_cost=int(record.get("token_cost", 0)),
        instance_scores=list(record.get("instance_scores", [])),
    )
