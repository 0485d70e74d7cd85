"""
Command-line aggregation module.

Each command lives in app/commands/ and registers its own sub-parser and
handler here. main() validates the parsed flags into a CliConfig, runs the
handler and turns the outcome into a process exit code:

    0 ok, 1 validation failure, 2 I/O failure, 3 step limit exceeded
"""

import argparse
import sys
from typing import List, Optional

from pydantic import ValidationError

from app.commands import (
    export_dot_command,
    fuzz_command,
    run_command,
    trace_command,
    validate_command,
)
from app.commands.common import CommandFailed
from schemas.cliconfigschema import CliConfig
from utils.enums import ExitCode
from utils.logger import configure_logging

COMMANDS = [validate_command, run_command, export_dot_command, trace_command, fuzz_command]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="director", description="Behaviour orchestration scenario runner")
    parser.add_argument("-v", "--verbose", action="store_true", help="log at DEBUG level")
    subparsers = parser.add_subparsers(dest="command", required=True)
    for command in COMMANDS:
        command.add_parser(subparsers)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.verbose:
        configure_logging("DEBUG")
    else:
        configure_logging()

    raw = {key: value for key, value in vars(args).items() if value is not None and key not in ("handler", "verbose")}
    try:
        config = CliConfig(**raw)
    except ValidationError as exc:
        for err in exc.errors():
            sys.stderr.write(f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}\n")
        return ExitCode.VALIDATION_FAILED.value

    try:
        return args.handler(config).value
    except CommandFailed as exc:
        return exc.exit_code.value
