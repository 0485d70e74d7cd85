"""
Seeded random scenarios for fuzzing the runtime.

Groups are laid out in layers: a group only ever requests (Needs, Uses,
emits) groups declared after it, so generated subtask trees are acyclic.
Every generated file passes parse_scenario unchanged.
"""

import random
from typing import List

from schemas.scenarioschema import (
    ProviderDecl,
    RemoveRoot,
    RequestDecl,
    RuleDecl,
    ScenarioFile,
    ScriptEvent,
    StateDecl,
    SubmitRoot,
    TriggerDecl,
    UsesGuard,
)
from utils.enums import Marker, ProviderKind, RunReason, RunState

MAX_GROUPS = 15
MAX_EVENTS = 40
LAYERS = ["purpose", "strategy", "planning", "skill", "actuation"]


class _Generator:
    def __init__(self, seed: int, max_groups: int, max_events: int):
        self.rng = random.Random(seed)
        self.seed = seed
        self.max_groups = max(2, min(max_groups, MAX_GROUPS))
        self.max_events = max(1, min(max_events, MAX_EVENTS))
        self.states: List[StateDecl] = []
        self.groups: List[str] = []

    def condition(self, op_choices=("==", "!=")) -> str:
        state = self.rng.choice(self.states)
        return f"{state.name} {self.rng.choice(op_choices)} {self.rng.choice(state.values)}"

    def make_states(self) -> None:
        for i in range(self.rng.randint(1, 2)):
            values = ["a", "b", "c"][: self.rng.randint(2, 3)]
            self.states.append(StateDecl(name=f"s{i}", values=values, initial=self.rng.choice(values)))

    def rule(self, needs: List[str], uses: List[str]) -> RuleDecl:
        rng = self.rng
        on = rng.sample(list(RunReason), rng.randint(1, 2)) if rng.random() < 0.3 else []
        if_state = [self.condition()] if rng.random() < 0.3 else []
        declared = needs + uses
        if_uses = []
        if declared and rng.random() < 0.3:
            if_uses.append(UsesGuard(
                task=rng.choice(declared),
                run_state=rng.sample(list(RunState), rng.randint(1, 2)),
                done=rng.choice([None, True, False]),
            ))
        min_triggers = rng.randint(1, 2) if rng.random() < 0.2 else None

        roll = rng.random()
        emit: List = []
        if roll < 0.1:
            emit = [Marker.IDLE]
        elif roll < 0.25 and not needs:
            emit = [Marker.DONE]
        else:
            emit = [RequestDecl(task=t, priority=rng.randint(0, 3)) for t in needs]
            for t in uses:
                if rng.random() < 0.7:
                    emit.append(RequestDecl(task=t, priority=rng.randint(0, 3), optional=rng.random() < 0.5))
            if rng.random() < 0.1:
                emit.append(Marker.DONE)
        return RuleDecl(on=on, if_state=if_state, if_uses=if_uses, min_triggers=min_triggers, emit=emit)

    def providers_for(self, index: int) -> List[ProviderDecl]:
        rng = self.rng
        group = self.groups[index]
        below = self.groups[index + 1:]
        layer = LAYERS[min(len(LAYERS) - 1, index * len(LAYERS) // len(self.groups))]
        decls: List[ProviderDecl] = []
        if rng.random() < 0.4:
            decls.append(ProviderDecl(id=f"{group}_start", group=group, kind=ProviderKind.START))
        for k in range(rng.randint(1, 2)):
            needs = sorted(rng.sample(below, min(len(below), rng.randint(0, 2)))) if below else []
            spare = [g for g in below if g not in needs]
            uses = [rng.choice(spare)] if spare and rng.random() < 0.4 else []
            when = [self.condition()] if rng.random() < 0.35 else []
            causing = []
            if rng.random() < 0.3:
                state = rng.choice(self.states)
                causing = [f"{state.name} == {rng.choice(state.values)}"]
            rules = [self.rule(needs, uses) for _ in range(rng.randint(1, 3))]
            decls.append(ProviderDecl(id=f"{group}_p{k}", group=group, when=when, causing=causing,
                                      needs=needs, uses=uses, layer=layer, rules=rules))
        if rng.random() < 0.4:
            decls.append(ProviderDecl(id=f"{group}_stop", group=group, kind=ProviderKind.STOP))
        return decls

    def script(self) -> List[ScriptEvent]:
        rng = self.rng
        count = rng.randint(1, self.max_events)
        times = sorted(rng.randint(0, count) for _ in range(count))
        tops = self.groups[: max(1, len(self.groups) // 3)]
        labels: List[str] = []
        events = []
        for n, at in enumerate(times):
            roll = rng.random()
            if n == 0 or roll < 0.2:
                label = f"r{len(labels)}"
                labels.append(label)
                events.append(ScriptEvent(at=at, submit_root=SubmitRoot(
                    task=rng.choice(tops), priority=rng.randint(0, 3),
                    optional=rng.random() < 0.15, label=label)))
            elif roll < 0.3 and labels:
                events.append(ScriptEvent(at=at, remove_root=RemoveRoot(label=rng.choice(labels))))
            elif roll < 0.6:
                state = rng.choice(self.states)
                events.append(ScriptEvent(at=at, set_state={state.name: rng.choice(state.values)}))
            else:
                events.append(ScriptEvent(at=at, trigger=TriggerDecl(group=rng.choice(self.groups))))
        return events

    def build(self) -> ScenarioFile:
        self.make_states()
        self.groups = [f"G{i}" for i in range(self.rng.randint(2, self.max_groups))]
        providers: List[ProviderDecl] = []
        for index in range(len(self.groups)):
            providers.extend(self.providers_for(index))
        return ScenarioFile(
            name=f"generated-{self.seed}",
            states=self.states,
            providers=providers,
            script=self.script(),
        )


def generate_scenario(seed: int, max_groups: int = MAX_GROUPS, max_events: int = MAX_EVENTS) -> ScenarioFile:
    """Same seed, same scenario. At most ``max_groups`` groups and ``max_events`` script events."""
    return _Generator(seed, max_groups, max_events).build()
