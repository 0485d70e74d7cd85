"""trace <file> --range A:B: the trace records with sequence numbers in [A, B)."""

from loguru import logger

from app.commands.common import read_scenario, write_output
from schemas.cliconfigschema import CliConfig
from services.inspection_service import render_trace
from services.scenario_service import run_scenario
from utils.enums import CliCommand, ExitCode
from utils.exceptions import RangeOutOfBounds, StepLimitExceeded


def add_parser(subparsers) -> None:
    parser = subparsers.add_parser(CliCommand.TRACE.value, help="print a slice of a scenario's trace")
    parser.add_argument("scenario_path", help="scenario file (JSON or YAML)")
    parser.add_argument("--range", dest="trace_range", help="half-open sequence range A:B")
    parser.add_argument("--max-steps", dest="max_steps", type=int, help="engine step limit")
    parser.add_argument("--out", dest="output_path", help="output file (default: stdout)")
    parser.set_defaults(handler=handle)


def handle(config: CliConfig) -> ExitCode:
    scenario = read_scenario(config.scenario_path)
    code = ExitCode.OK
    try:
        result = run_scenario(scenario, max_steps=config.max_steps)
    except StepLimitExceeded as exc:
        logger.warning(exc.detail)
        result = exc.partial
        code = ExitCode.STEP_LIMIT
    try:
        text = render_trace(result.trace, config.trace_range, offset=result.trace_offset)
    except RangeOutOfBounds as exc:
        logger.error(exc.detail)
        return ExitCode.VALIDATION_FAILED
    write_output(text, config.output_path)
    return code
