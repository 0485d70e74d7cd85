"""export-dot <file> --at-step N: DOT rendering of the graph after step N."""

from loguru import logger

from app.commands.common import read_scenario, write_output
from schemas.cliconfigschema import CliConfig
from services.inspection_service import export_dot
from services.scenario_service import run_scenario
from utils.enums import CliCommand, ExitCode
from utils.exceptions import StepLimitExceeded


def add_parser(subparsers) -> None:
    parser = subparsers.add_parser(CliCommand.EXPORT_DOT.value, help="export the graph at a step as DOT")
    parser.add_argument("scenario_path", help="scenario file (JSON or YAML)")
    parser.add_argument("--at-step", dest="at_step", type=int, required=True, help="engine step to snapshot (0 = start)")
    parser.add_argument("--max-steps", dest="max_steps", type=int, help="engine step limit")
    parser.add_argument("--out", dest="output_path", help="DOT output file (default: stdout)")
    parser.set_defaults(handler=handle)


def handle(config: CliConfig) -> ExitCode:
    scenario = read_scenario(config.scenario_path)
    try:
        result = run_scenario(scenario, max_steps=config.max_steps, snapshot_at=[config.at_step])
    except StepLimitExceeded as exc:
        logger.warning(exc.detail)
        if config.at_step not in exc.partial.snapshots:
            return ExitCode.STEP_LIMIT
        write_output(export_dot(exc.partial.snapshots[config.at_step]), config.output_path)
        return ExitCode.STEP_LIMIT
    write_output(export_dot(result.snapshots[config.at_step]), config.output_path)
    return ExitCode.OK
