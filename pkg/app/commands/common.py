"""Shared helpers for command handlers: loading, diagnostics and output."""

import sys
from pathlib import Path
from typing import List, Optional

from loguru import logger

from schemas.scenarioschema import ScenarioFile
from services.scenario_service import load_scenario
from utils.director_config import plain_output
from utils.enums import ExitCode
from utils.exceptions import ScenarioSyntaxError, ScenarioValidationError

_RED = "\033[31m"
_RESET = "\033[0m"


class CommandFailed(Exception):
    """Carries the exit code a handler wants to stop with."""

    def __init__(self, exit_code: ExitCode):
        super().__init__(exit_code.name)
        self.exit_code = exit_code


def diagnostics_of(exc: Exception) -> List[ScenarioSyntaxError]:
    if isinstance(exc, ScenarioValidationError):
        return list(exc.diagnostics)
    return [exc]


def print_diagnostics(exc: Exception) -> None:
    colour = not plain_output() and sys.stdout.isatty()
    for diag in diagnostics_of(exc):
        prefix = f"{diag.line}:{diag.col}:"
        if colour:
            prefix = f"{_RED}{prefix}{_RESET}"
        sys.stdout.write(f"{prefix} {diag.message}\n")


def read_scenario(path: Optional[Path]) -> ScenarioFile:
    """Load and validate; I/O failures exit 2, invalid scenarios exit 1."""
    if path is None:
        logger.error("no scenario file given")
        raise CommandFailed(ExitCode.IO_ERROR)
    try:
        return load_scenario(path)
    except OSError as exc:
        logger.error(f"cannot read {path}: {exc}")
        raise CommandFailed(ExitCode.IO_ERROR) from exc
    except (ScenarioSyntaxError, ScenarioValidationError) as exc:
        print_diagnostics(exc)
        raise CommandFailed(ExitCode.VALIDATION_FAILED) from exc


def write_output(text: str, path: Optional[Path]) -> None:
    if path is None:
        sys.stdout.write(text)
        return
    try:
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        logger.error(f"cannot write {path}: {exc}")
        raise CommandFailed(ExitCode.IO_ERROR) from exc
