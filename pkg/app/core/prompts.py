import logging
import os
import re
from typing import Dict, List, Optional, Sequence, Set, Tuple

from pydantic import BaseModel

from app.core.errors import PromptError
from app.core.models import HeuristicIndividual, StructureCode, compare_quality

logger = logging.getLogger(__name__)

DEFAULT_PROMPTS_DIR = os.path.join(os.path.dirname(os.path.dirname(__file__)), "prompts")

# Имя шаблона -> файл в каталоге prompts
TEMPLATE_FILES: Dict[str, str] = {
    "system_generator": "system_generator.txt",
    "exterior_user_generator": "exterior_user_generator.txt",
    "crossover": "crossover.txt",
    "mutation": "mutation.txt",
    "fill_1func": "fill_1func.txt",
    "fill_allFunc": "fill_allFunc.txt",
    "fix": "fix.txt",
    "fix_system": "fix_system.txt",
    "ask_pms_interval": "ask_pms_interval.txt",
    "ask_pms_system": "ask_pms_system.txt",
    "am_naming": "am.txt",
    "heubase_common": "heubase_common.txt",
    "prior_knowledge": "prior_knowledge.txt",
    "problem_description": "problem_description.txt",
    "func_generation": "func_generation.txt",
}

DECLARED_PLACEHOLDERS: Dict[str, Set[str]] = {
    "system_generator": set(),
    "exterior_user_generator": {
        "alg_type", "problem", "problem_description", "baseline", "max_func_pop", "timeout", "prior_knowledge",
    },
    "crossover": {"exterior_user_generator", "worse_code", "better_code"},
    "mutation": {"exterior_user_generator", "now_structure", "elitist_structure"},
    "fill_1func": {"problem", "problem_description", "id", "code_before", "prior_knowledge"},
    "fill_allFunc": {"problem", "problem_description", "prior_knowledge"},
    "fix": {"error_msg"},
    "fix_system": set(),
    "ask_pms_interval": set(),
    "ask_pms_system": set(),
    "am_naming": {"function_code"},
    "heubase_common": set(),
    "prior_knowledge": {"prior_knowledge"},
    "problem_description": {"problem_description"},
    "func_generation": set(),
}

# Фрагменты, которые обязаны сохраниться в каждом шаблоне дословно
LITERAL_FRAGMENTS: Dict[str, List[str]] = {
    "system_generator": ["optimization heuristics", "```python"],
    "exterior_user_generator": [
        "#Hyperparameter#", "heuristic database", "modularization programming",
        "MAX_TIME = {timeout}", "-second-clock", "# int",
    ],
    "crossover": ["[Worse code]", "[Better code]", "[Improved code]"],
    "mutation": ["[Now Structure]", "[Elitist Code]", "[Improved code]"],
    "fill_1func": ["Critical Reminder", "think out of box and explore"],
    "fill_allFunc": ["Critical Reminder", "heuristic database"],
    "fix": ["You can't change MAX_TIME", "Don't remove hyperparameters!"],
    "fix_system": ["expert in debugging"],
    "ask_pms_interval": ["must be named pms_dict", "(start, end)"],
    "ask_pms_system": ["hyperparameter optimization"],
    "am_naming": ["give a name of this function", "Args:"],
    "heubase_common": ["Do not reimplement these functions"],
    "prior_knowledge": ["prior expert knowledge"],
    "problem_description": ["The problem description is as follows"],
    "func_generation": ["expert in heuristic design"],
}

_PLACEHOLDER_RE = re.compile(r"\{\{|\}\}|\{([A-Za-z_]\w*)\}")


class PromptTemplate(BaseModel):
    name: str
    body: str
    placeholders: List[str]


class PromptContext(BaseModel):
    """Сведения о задаче, общие для всех промптов одного запуска"""
    problem: str
    alg_type: str = "heuristic"
    problem_description: str = ""
    baseline: str = ""
    timeout: int = 60
    max_func_num: int = 4
    prior_knowledge: str = ""
    knowledge_listing: str = ""


def _placeholders(body: str) -> List[str]:
    names: List[str] = []
    for match in _PLACEHOLDER_RE.finditer(body):
        name = match.group(1)
        if name and name not in names:
            names.append(name)
    return names


def with_code(prompt: str, code: str) -> str:
    """Добавляет к промпту код в блоке ```python"""
    return f"{prompt.rstrip()}\n\n```python\n{code.strip(chr(10))}\n```"


class PromptKit:
    """Шаблоны промптов из текстовых файлов и сборка промптов движка"""

    def __init__(self, prompts_dir: Optional[str] = None):
        self.prompts_dir = prompts_dir or DEFAULT_PROMPTS_DIR
        self.templates: Dict[str, PromptTemplate] = {}
        self._load()

    def _load(self):
        for name, filename in TEMPLATE_FILES.items():
            path = os.path.join(self.prompts_dir, filename)
            if not os.path.exists(path):
                raise PromptError(f"Нет файла шаблона {path}", code="unknown_template")
            with open(path, "r", encoding="utf-8") as f:
                body = f.read().rstrip("\n")
            self.templates[name] = PromptTemplate(name=name, body=body, placeholders=_placeholders(body))
        logger.debug(f"Загружено шаблонов: {len(self.templates)} из {self.prompts_dir}")

    def render(self, name: str, fields: Dict[str, object] = None) -> str:
        template = self.templates.get(name)
        if template is None:
            raise PromptError(f"Неизвестный шаблон {name}", code="unknown_template")
        fields = fields or {}
        missing = [p for p in template.placeholders if p not in fields]
        if missing:
            raise PromptError(f"Шаблону {name} не хватает полей: {missing}", code="missing_placeholder")

        def substitute(match: re.Match) -> str:
            token = match.group(0)
            if token == "{{":
                return "{"
            if token == "}}":
                return "}"
            return str(fields[match.group(1)])

        return _PLACEHOLDER_RE.sub(substitute, template.body)

    def lint(self) -> List[str]:
        """Проверка наборов плейсхолдеров и обязательных фрагментов"""
        problems: List[str] = []
        for name, template in self.templates.items():
            declared = DECLARED_PLACEHOLDERS.get(name, set())
            found = set(template.placeholders)
            for extra in sorted(found - declared):
                problems.append(f"{name}: необъявленный плейсхолдер {{{extra}}}")
            for absent in sorted(declared - found):
                problems.append(f"{name}: объявленный плейсхолдер {{{absent}}} не используется")
            for fragment in LITERAL_FRAGMENTS.get(name, []):
                if fragment not in template.body:
                    problems.append(f"{name}: потерян фрагмент {fragment!r}")
        return problems

    # Сборка промптов движка

    def _prior(self, ctx: PromptContext) -> str:
        if not ctx.prior_knowledge.strip():
            return ""
        return self.render("prior_knowledge", {"prior_knowledge": ctx.prior_knowledge.strip()})

    def _description(self, ctx: PromptContext) -> str:
        if not ctx.problem_description.strip():
            return ""
        return self.render("problem_description", {"problem_description": ctx.problem_description.strip()})

    @staticmethod
    def _with_listing(prompt: str, ctx: PromptContext) -> str:
        if not ctx.knowledge_listing:
            return prompt
        return f"{prompt.rstrip()}\n\n{ctx.knowledge_listing}"

    def exterior_base(self, ctx: PromptContext) -> str:
        return self.render("exterior_user_generator", {
            "alg_type": ctx.alg_type,
            "problem": ctx.problem,
            "problem_description": self._description(ctx),
            "baseline": ctx.baseline.strip(),
            "max_func_pop": ctx.max_func_num,
            "timeout": ctx.timeout,
            "prior_knowledge": self._prior(ctx),
        })

    def initial_prompt(self, ctx: PromptContext) -> Tuple[str, str]:
        return self.render("system_generator"), self._with_listing(self.exterior_base(ctx), ctx)

    def render_crossover(
        self,
        ctx: PromptContext,
        first: HeuristicIndividual,
        second: HeuristicIndividual,
    ) -> Tuple[str, str]:
        """Скрещивание: худший родитель в [Worse code], лучший в [Better code], только структуры"""
        if not first.is_evaluated or not second.is_evaluated:
            raise PromptError("Родитель скрещивания не оценен", code="unevaluated_parent")
        better, worse = (first, second) if compare_quality(first, second) <= 0 else (second, first)
        user = self.render("crossover", {
            "exterior_user_generator": self.exterior_base(ctx),
            "worse_code": with_code("", worse.structure.source).lstrip(),
            "better_code": with_code("", better.structure.source).lstrip(),
        })
        return self.render("system_generator"), self._with_listing(user, ctx)

    def render_mutation(
        self,
        ctx: PromptContext,
        current: StructureCode,
        elite: Optional[StructureCode],
    ) -> Tuple[str, str]:
        if elite is None:
            raise PromptError("В популяции нет элитной особи", code="empty_population")
        user = self.render("mutation", {
            "exterior_user_generator": self.exterior_base(ctx),
            "now_structure": with_code("", current.source).lstrip(),
            "elitist_structure": with_code("", elite.source).lstrip(),
        })
        return self.render("system_generator"), self._with_listing(user, ctx)

    def fill_one(
        self,
        ctx: PromptContext,
        program: str,
        slot_id: int,
        previous: Sequence[str] = (),
    ) -> Tuple[str, str]:
        """Промпт реализации одного слота; прежние кандидаты идут в code_before"""
        code_before = "\n\n".join(with_code("", code).lstrip() for code in previous)
        user = self.render("fill_1func", {
            "problem": ctx.problem,
            "problem_description": self._description(ctx),
            "id": slot_id,
            "code_before": code_before,
            "prior_knowledge": self._prior(ctx),
        })
        return self.render("func_generation"), self._with_listing(with_code(user, program), ctx)

    def fill_all(self, ctx: PromptContext, program: str) -> Tuple[str, str]:
        user = self.render("fill_allFunc", {
            "problem": ctx.problem,
            "problem_description": self._description(ctx),
            "prior_knowledge": self._prior(ctx),
        })
        return self.render("func_generation"), self._with_listing(with_code(user, program), ctx)

    def fix(self, program: str, error_msg: str) -> Tuple[str, str]:
        user = self.render("fix", {"error_msg": error_msg.strip() or "unknown error"})
        return self.render("fix_system"), with_code(user, program)

    def ask_pms(self, program: str) -> Tuple[str, str]:
        return self.render("ask_pms_system"), with_code(self.render("ask_pms_interval"), program)

    def am_naming(self, function_code: str) -> Tuple[str, str]:
        user = self.render("am_naming", {"function_code": with_code("", function_code).lstrip()})
        return self.render("system_generator"), user
