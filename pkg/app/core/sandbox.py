import asyncio
import json
import logging
import math
import os
import sys
import time
from enum import Enum
from typing import Any, List, Optional

from pydantic import BaseModel

from app.core.errors import SandboxSetupError
from app.core.problems import ProblemInstance, ProblemSuite
from app.core.run_config import SandboxConfig
from app.utils.file_utils import FileUtils

logger = logging.getLogger(__name__)

PROGRAM_FILE = "candidate.py"
_COMPILE_MARKERS = ("SyntaxError", "IndentationError", "TabError")


class EvaluationStatus(str, Enum):
    OK = "ok"
    COMPILE_ERROR = "compile_error"
    RUNTIME_ERROR = "runtime_error"
    CONSTRAINT_VIOLATION = "constraint_violation"
    TIMEOUT = "timeout"
    PROTOCOL_ERROR = "protocol_error"


class EvaluationReport(BaseModel):
    """Результат запуска кандидата на одном экземпляре"""
    status: EvaluationStatus
    instance_id: str = ""
    solution: Optional[Any] = None
    objective: Optional[float] = None
    wall_ms: int = 0
    stderr_tail: str = ""
    stdout_tail: str = ""

    @property
    def ok(self) -> bool:
        return self.status == EvaluationStatus.OK

    def error_message(self) -> str:
        """Текст ошибки для промпта исправления"""
        if self.status == EvaluationStatus.TIMEOUT:
            return (
                f"Timeout on instance {self.instance_id}: the program was killed because it did not "
                f"finish in time. Check MAX_TIME frequently and return the best solution found."
            )
        if self.status == EvaluationStatus.CONSTRAINT_VIOLATION:
            return f"Constraint violation on instance {self.instance_id}: {self.stderr_tail.strip()}"
        if self.status == EvaluationStatus.PROTOCOL_ERROR:
            return (
                f"The program did not return a valid solution on instance {self.instance_id}: "
                f"{self.stderr_tail.strip() or 'no solution was produced'}"
            )
        return self.stderr_tail.strip() or f"{self.status.value} on instance {self.instance_id}"

    def to_log(self) -> dict:
        return {
            "instance_id": self.instance_id,
            "status": self.status.value,
            "objective": self.objective,
            "wall_ms": self.wall_ms,
        }


class Sandbox:
    """Запуск собранных программ в отдельном процессе с жестким таймаутом"""

    def __init__(self, problem: ProblemSuite, cfg: SandboxConfig = None, record_timing: bool = True):
        self.problem = problem
        self.cfg = cfg or SandboxConfig()
        self.record_timing = record_timing

    def _argv(self, program_path: str) -> List[str]:
        return [
            part.replace("{python}", sys.executable).replace("{program_path}", program_path)
            for part in self.cfg.interpreter_command
        ]

    def _env(self) -> dict:
        env = {name: os.environ[name] for name in self.cfg.env_allowlist if name in os.environ}
        env["PYTHONHASHSEED"] = "0"
        env["PYTHONDONTWRITEBYTECODE"] = "1"
        env["PYTHONIOENCODING"] = "utf-8"
        return env

    def _preexec(self):
        if not self.cfg.memory_limit_mb or os.name != "posix":
            return None
        limit = self.cfg.memory_limit_mb * 1024 * 1024

        def apply_limits():
            import resource
            resource.setrlimit(resource.RLIMIT_AS, (limit, limit))

        return apply_limits

    def _tail(self, text: str) -> str:
        return FileUtils.tail(text, self.cfg.tail_chars)

    async def run(self, program: str, instance: ProblemInstance, max_time_s: float) -> EvaluationReport:
        if not program or not program.strip():
            raise SandboxSetupError("Пустая программа", code="sandbox_setup_failure")

        kill_after = max_time_s + self.cfg.grace_s
        with FileUtils.workspace(prefix="cand-") as workdir:
            program_path = os.path.join(workdir, PROGRAM_FILE)
            with open(program_path, "w", encoding="utf-8") as f:
                f.write(program)

            started = time.monotonic()
            try:
                process = await asyncio.create_subprocess_exec(
                    *self._argv(program_path),
                    stdin=asyncio.subprocess.PIPE,
                    stdout=asyncio.subprocess.PIPE,
                    stderr=asyncio.subprocess.PIPE,
                    cwd=workdir,
                    env=self._env(),
                    preexec_fn=self._preexec(),
                )
            except OSError as e:
                raise SandboxSetupError(f"Не удалось запустить интерпретатор: {e}", code="sandbox_setup_failure")

            payload = json.dumps(instance.payload).encode("utf-8")
            try:
                stdout_b, stderr_b = await asyncio.wait_for(process.communicate(payload), timeout=kill_after)
            except asyncio.TimeoutError:
                process.kill()
                await process.wait()
                wall_ms = int((time.monotonic() - started) * 1000)
                logger.info(f"{instance.instance_id}: процесс убит через {wall_ms} мс")
                return EvaluationReport(
                    status=EvaluationStatus.TIMEOUT,
                    instance_id=instance.instance_id,
                    wall_ms=wall_ms if self.record_timing else 0,
                    stderr_tail=f"killed after {kill_after:g} s",
                )
            wall_ms = int((time.monotonic() - started) * 1000)

        stdout = stdout_b.decode("utf-8", errors="replace")
        stderr = stderr_b.decode("utf-8", errors="replace")
        report = self._classify(instance, process.returncode, stdout, stderr)
        report.wall_ms = wall_ms if self.record_timing else 0
        logger.debug(f"{instance.instance_id}: {report.status.value}, objective={report.objective}")
        return report

    def _classify(self, instance: ProblemInstance, returncode: int, stdout: str, stderr: str) -> EvaluationReport:
        base = dict(
            instance_id=instance.instance_id,
            stdout_tail=self._tail(stdout),
            stderr_tail=self._tail(stderr),
        )
        if returncode != 0:
            if not stdout.strip() and any(marker in stderr for marker in _COMPILE_MARKERS):
                return EvaluationReport(status=EvaluationStatus.COMPILE_ERROR, **base)
            return EvaluationReport(status=EvaluationStatus.RUNTIME_ERROR, **base)

        lines = [line for line in stdout.split("\n") if line.strip()]
        document = None
        if lines:
            try:
                document = json.loads(lines[-1])
            except json.JSONDecodeError:
                document = None
        if not isinstance(document, dict) or "solution" not in document:
            base["stderr_tail"] = self._tail(stderr + "\nlast stdout line is not a {\"solution\": ...} document")
            return EvaluationReport(status=EvaluationStatus.PROTOCOL_ERROR, **base)

        solution = document["solution"]
        try:
            violation = self.problem.validate(instance, solution)
            objective = None if violation is not None else float(self.problem.objective(instance, solution))
        except (ValueError, TypeError, KeyError, IndexError, OverflowError, ZeroDivisionError) as e:
            logger.warning(f"{instance.instance_id}: решение не удалось проверить: {e!r}")
            base["stderr_tail"] = self._tail(f"{stderr}\nsolution could not be checked: {e}".strip())
            return EvaluationReport(status=EvaluationStatus.PROTOCOL_ERROR, **base)
        if violation is None and not math.isfinite(objective):
            violation = f"objective is not finite: {objective}"
        if violation is not None:
            base["stderr_tail"] = self._tail(f"{stderr}\n{violation}".strip())
            return EvaluationReport(status=EvaluationStatus.CONSTRAINT_VIOLATION, solution=solution, **base)

        return EvaluationReport(status=EvaluationStatus.OK, solution=solution, objective=objective, **base)

    async def run_batch(
        self,
        program: str,
        instances: List[ProblemInstance],
        max_time_s: float,
        short_circuit: bool = False,
    ) -> List[EvaluationReport]:
        """Запуск на списке экземпляров, отчеты в порядке экземпляров"""
        if short_circuit:
            reports = []
            for instance in instances:
                report = await self.run(program, instance, max_time_s)
                reports.append(report)
                if not report.ok:
                    break
            return reports

        semaphore = asyncio.Semaphore(self.cfg.workers)

        async def guarded(instance: ProblemInstance) -> EvaluationReport:
            async with semaphore:
                return await self.run(program, instance, max_time_s)

        return list(await asyncio.gather(*(guarded(instance) for instance in instances)))
