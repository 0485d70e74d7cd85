"""
run <file>: replay a scenario and write its trace.

DOT snapshots requested with --snapshot-at are written next to the trace
output (or into the working directory) as ``<scenario>.step<N>.dot``.
"""

from pathlib import Path
from typing import Dict

from loguru import logger

from app.commands.common import CommandFailed, read_scenario, write_output
from schemas.cliconfigschema import CliConfig
from schemas.snapshotschema import GraphSnapshot
from services.inspection_service import export_dot
from services.scenario_service import run_scenario
from utils.enums import CliCommand, ExitCode
from utils.exceptions import StepLimitExceeded


def add_parser(subparsers) -> None:
    parser = subparsers.add_parser(CliCommand.RUN.value, help="run a scenario and print its trace")
    parser.add_argument("scenario_path", help="scenario file (JSON or YAML)")
    parser.add_argument("--max-steps", dest="max_steps", type=int, help="engine step limit")
    parser.add_argument("--snapshot-at", dest="snapshot_at", help="comma separated engine steps to export as DOT")
    parser.add_argument("--out", dest="output_path", help="trace output file (default: stdout)")
    parser.set_defaults(handler=handle)


def snapshot_path(config: CliConfig, step: int) -> Path:
    folder = config.output_path.parent if config.output_path else Path.cwd()
    return folder / f"{config.scenario_path.stem}.step{step}.dot"


def _write_snapshots(config: CliConfig, snapshots: Dict[int, GraphSnapshot]) -> None:
    for step in sorted(snapshots):
        path = snapshot_path(config, step)
        try:
            path.write_text(export_dot(snapshots[step]), encoding="utf-8")
        except OSError as exc:
            logger.error(f"cannot write {path}: {exc}")
            raise CommandFailed(ExitCode.IO_ERROR) from exc


def handle(config: CliConfig) -> ExitCode:
    scenario = read_scenario(config.scenario_path)
    try:
        result = run_scenario(scenario, max_steps=config.max_steps, snapshot_at=config.snapshot_at)
        code = ExitCode.OK
    except StepLimitExceeded as exc:
        logger.warning(exc.detail)
        result = exc.partial
        code = ExitCode.STEP_LIMIT
    _write_snapshots(config, result.snapshots)
    write_output(result.trace_text(), config.output_path)
    return code
