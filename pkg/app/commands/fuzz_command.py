"""fuzz --seed N [--count K]: run generated scenarios and check runtime invariants after every step."""

import sys
from typing import List

from loguru import logger

from schemas.cliconfigschema import CliConfig
from schemas.scenarioschema import FuzzOutcome
from services.director_service import Director
from services.inspection_service import check_invariants, optional_subtask_states
from services.scenario_generator_service import generate_scenario
from services.scenario_service import run_scenario
from utils.enums import CliCommand, ExitCode
from utils.exceptions import DirectorException

FUZZ_MAX_STEPS = 1000


def add_parser(subparsers) -> None:
    parser = subparsers.add_parser(CliCommand.FUZZ.value, help="fuzz the runtime with generated scenarios")
    parser.add_argument("--seed", type=int, default=0, help="first seed")
    parser.add_argument("--count", type=int, default=1, help="number of consecutive seeds")
    parser.set_defaults(handler=handle)


def fuzz_run(seed: int) -> FuzzOutcome:
    """
    Run the scenario generated from ``seed``, checking invariants after every step.

    Anything the engine raises, a cascade that never settles included, is
    recorded as a violation.
    """
    outcome = FuzzOutcome(seed=seed)

    def observe(director: Director) -> None:
        for problem in check_invariants(director):
            outcome.violations.append(f"step {director.graph.step_counter}: {problem}")
        running, queued = optional_subtask_states(director)
        outcome.optional_running += running
        outcome.optional_blocked += queued

    try:
        run_scenario(generate_scenario(seed), max_steps=FUZZ_MAX_STEPS, observer=observe)
    except DirectorException as exc:
        outcome.violations.append(f"{exc.code}: {exc.detail}")
    return outcome


def fuzz_seed(seed: int) -> List[str]:
    """Invariant violations seen while running the scenario generated from ``seed``."""
    return fuzz_run(seed).violations


def handle(config: CliConfig) -> ExitCode:
    failed = 0
    for seed in range(config.seed, config.seed + config.count):
        violations = fuzz_seed(seed)
        if violations:
            failed += 1
            for line in violations:
                sys.stdout.write(f"seed {seed}: {line}\n")
        else:
            sys.stdout.write(f"seed {seed}: ok\n")
    logger.info(f"fuzzed {config.count} seeds, {failed} with violations")
    return ExitCode.VALIDATION_FAILED if failed else ExitCode.OK
