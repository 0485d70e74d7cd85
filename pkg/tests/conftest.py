from pathlib import Path
from typing import Callable, List, Optional, Sequence

import pytest

from models.models import ProviderContext, ProviderSpec, StateAssertion, SubtaskBundle, TaskRequest
from services.director_service import Director
from services.scenario_service import compile_condition, load_scenario
from utils.enums import ProviderKind, RunReason

REPO_DIR = Path(__file__).resolve().parent.parent
SCENARIO_DIR = REPO_DIR / "scenarios"
CORPUS_DIR = Path(__file__).resolve().parent / "scenarios"
GOLDEN_DIR = Path(__file__).resolve().parent / "goldens"


def req(task_type: str, priority: int = 0, optional: bool = False, data: str = "") -> TaskRequest:
    return TaskRequest(task_type=task_type, priority=priority, optional=optional, data=data)


class Rig:
    """A Director plus terse provider registration and a log of every callback invocation."""

    def __init__(self, **kwargs):
        self.director = Director(**kwargs)
        self.calls: List[ProviderContext] = []

    def state(self, name: str, values: Sequence[str], initial: Optional[str] = None) -> "Rig":
        self.director.register_state(name, list(values), initial if initial is not None else values[0])
        return self

    def provider(self, group: str, pid: Optional[str] = None, kind: ProviderKind = ProviderKind.PROVIDE,
                 when: Sequence[str] = (), causing: Sequence[str] = (), needs: Sequence[str] = (),
                 uses: Sequence[str] = (), emit=None,
                 behaviour: Optional[Callable[[ProviderContext], Optional[SubtaskBundle]]] = None) -> "Rig":
        store = self.director.graph.state
        if pid is None:
            pid = group.lower() if kind is ProviderKind.PROVIDE else f"{group.lower()}_{kind.value}"
        spec = ProviderSpec(
            id=pid,
            group=group,
            kind=kind,
            when=[compile_condition(text, store) for text in when],
            causing=[compile_condition(text, store, kind=StateAssertion) for text in causing],
            needs=list(needs),
            uses=list(uses),
        )
        if behaviour is None:
            bundle = emit if isinstance(emit, SubtaskBundle) else SubtaskBundle.of(*(emit or ()))
            behaviour = lambda ctx: bundle  # noqa: E731
        self.director.register_provider(spec, self._recording(behaviour))
        return self

    def _recording(self, behaviour):
        def run(ctx: ProviderContext):
            self.calls.append(ctx)
            return behaviour(ctx)
        return run

    def start(self) -> Director:
        self.director.start()
        return self.director

    def settle(self, max_steps: int = 100) -> int:
        return self.director.run_until_quiescent(max_steps)

    def reasons(self, provider: str) -> List[RunReason]:
        return [ctx.reason for ctx in self.calls if ctx.provider == provider]


@pytest.fixture
def rig() -> Rig:
    return Rig()


@pytest.fixture
def soccer():
    return load_scenario(SCENARIO_DIR / "soccer.json")


@pytest.fixture
def phase_switch():
    return load_scenario(SCENARIO_DIR / "phase_switch.json")
