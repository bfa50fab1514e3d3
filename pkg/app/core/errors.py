from typing import Any, Optional


class EngineError(Exception):
    """Базовая ошибка движка. Поле code - стабильное имя вида ошибки."""

    code = "engine_error"

    def __init__(self, message: str = "", code: Optional[str] = None, **details: Any):
        super().__init__(message or self.code)
        self.message = message or self.code
        if code:
            self.code = code
        self.details = details

    def __str__(self) -> str:
        base = super().__str__()
        return f"[{self.code}] {base}"


class StructureError(EngineError):
    """Ошибки разбора структуры"""
    code = "parse_error"


class AssemblyError(EngineError):
    code = "assembly_error"


class QualityError(EngineError):
    code = "unevaluated_operand"


class GatewayError(EngineError):
    code = "gateway_error"


class BudgetExhaustedError(GatewayError):
    code = "budget_exhausted"


class HttpError(GatewayError):
    code = "http_error"

    def __init__(self, message: str = "", status: Optional[int] = None, **details: Any):
        super().__init__(message, **details)
        self.status = status


class MalformedResponseError(GatewayError):
    code = "malformed_provider_response"


class TranscriptExhaustedError(GatewayError):
    code = "transcript_exhausted"


class ExtractionError(EngineError):
    code = "empty_completion"


class PromptError(EngineError):
    code = "render_error"


class EducationError(EngineError):
    code = "education_error"


class FixError(EngineError):
    code = "fix_budget_exhausted"


class EvaluationError(EngineError):
    """Провал оценки особи; report - первый неуспешный отчет песочницы"""

    code = "evaluation_error"

    def __init__(self, message: str = "", report: Any = None, **details: Any):
        super().__init__(message, **details)
        self.report = report


class PopulationError(EngineError):
    code = "population_error"


class SandboxSetupError(EngineError):
    code = "sandbox_setup_failure"


class ProblemError(EngineError):
    code = "problem_error"


class CalibrationError(EngineError):
    code = "calibration_error"


class KnowledgeError(EngineError):
    code = "load_error"


class ConfigError(EngineError):
    code = "config_invalid"


class ReportError(EngineError):
    code = "report_error"
