from functools import lru_cache

import hypothesis.strategies as st
import pytest
from hypothesis import HealthCheck, settings
from hypothesis.stateful import RuleBasedStateMachine, invariant, precondition, rule

from app.commands.fuzz_command import fuzz_run, fuzz_seed
from services.inspection_service import check_invariants
from services.scenario_generator_service import MAX_GROUPS, generate_scenario
from services.scenario_service import build_director, load_scenario
from tests.conftest import SCENARIO_DIR
from utils.enums import ProviderKind

SOCCER = load_scenario(SCENARIO_DIR / "soccer.json")
SETTLE_STEPS = 50
SEEDS = range(200)

outcome = lru_cache(maxsize=None)(fuzz_run)


@pytest.mark.parametrize("seed", SEEDS)
def test_generated_scenario_keeps_invariants(seed):
    assert outcome(seed).violations == []


def test_fuzz_seed_reports_the_same_violations():
    assert fuzz_seed(3) == outcome(3).violations


def test_optional_subtasks_seen_running_and_blocked_beside_required_ones():
    assert sum(outcome(seed).optional_running for seed in SEEDS) > 0
    assert sum(outcome(seed).optional_blocked for seed in SEEDS) > 0


def test_generation_is_deterministic():
    assert generate_scenario(7) == generate_scenario(7)
    assert len({generate_scenario(seed).model_dump_json() for seed in range(5)}) > 1


@pytest.mark.parametrize("seed", range(0, 200, 20))
def test_generated_scenario_shape(seed):
    sf = generate_scenario(seed)
    groups = sf.group_names
    assert 2 <= len(groups) <= MAX_GROUPS
    for name in groups:
        kinds = [p.kind for p in sf.providers if p.group == name]
        assert ProviderKind.PROVIDE in kinds
    for p in sf.providers:
        below = groups[groups.index(p.group) + 1:]
        assert set(p.needs) <= set(below)
        assert set(p.uses) <= set(below)


class SoccerMachine(RuleBasedStateMachine):
    """Random submissions, removals, state changes and triggers against the soccer registry."""

    def __init__(self):
        super().__init__()
        self.director = build_director(SOCCER)

    def _settle(self):
        self.director.run_until_quiescent(SETTLE_STEPS)

    @rule(group=st.sampled_from(SOCCER.group_names), priority=st.integers(0, 3), optional=st.booleans())
    def submit(self, group, priority, optional):
        self.director.submit_root_task(group, priority=priority, optional=optional)
        self._settle()

    @precondition(lambda self: self.director.graph.root_tasks)
    @rule(data=st.data())
    def remove(self, data):
        uid = data.draw(st.sampled_from(list(self.director.graph.root_tasks)))
        self.director.remove_root_task(uid)
        self._settle()

    @rule(data=st.data(), index=st.integers(0, len(SOCCER.states) - 1))
    def set_state(self, data, index):
        decl = SOCCER.states[index]
        self.director.state_update(decl.name, data.draw(st.sampled_from(decl.values)))
        self._settle()

    @rule(group=st.sampled_from(SOCCER.group_names))
    def trigger(self, group):
        self.director.external_trigger(group)
        self._settle()

    @invariant()
    def graph_is_consistent(self):
        assert check_invariants(self.director) == []


SoccerMachine.TestCase.settings = settings(
    max_examples=50, stateful_step_count=30, deadline=None, suppress_health_check=list(HealthCheck)
)
test_soccer_state_machine = SoccerMachine.TestCase
