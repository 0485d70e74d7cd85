"""validate <file>: parse a scenario and report diagnostics."""

import sys

from app.commands.common import read_scenario
from schemas.cliconfigschema import CliConfig
from utils.enums import CliCommand, ExitCode


def add_parser(subparsers) -> None:
    parser = subparsers.add_parser(CliCommand.VALIDATE.value, help="check a scenario file")
    parser.add_argument("scenario_path", help="scenario file (JSON or YAML)")
    parser.set_defaults(handler=handle)


def handle(config: CliConfig) -> ExitCode:
    read_scenario(config.scenario_path)
    sys.stdout.write("OK\n")
    return ExitCode.OK
