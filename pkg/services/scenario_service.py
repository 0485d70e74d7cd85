"""
Scenario files: parsing with positioned diagnostics, serialization, the
rule-table behaviour adapter and the deterministic script runner.

The surface syntax is YAML, so plain JSON files are accepted as-is. The text
is composed into a YAML node tree first; every diagnostic is reported at the
line/column of the node it concerns.
"""

import json
import re
from functools import partial
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Set, Tuple, Union

import yaml
from loguru import logger
from pydantic import ValidationError

from models.models import (
    Condition,
    ProviderContext,
    ProviderSpec,
    RootTicket,
    StateAssertion,
    StateStore,
    SubtaskBundle,
    TaskRequest,
)
from schemas.scenarioschema import BehaviourRule, ProviderDecl, RequestDecl, RuleDecl, ScenarioFile, ScriptEvent, SimulationResult, UsesGuard
from services.condition_service import validate_registry
from services.director_service import Director
from services.inspection_service import snapshot
from utils.director_config import DEFAULT_MAX_STEPS, MOTOR_DONE_AFTER
from utils.enums import Comparator, Marker
from utils.exceptions import (
    NonMonotoneScript,
    ScenarioSyntaxError,
    ScenarioValidationError,
    StepLimitExceeded,
    UnknownUid,
    UnresolvedReference,
)

ACTUATION_LAYER = "actuation"
_CONDITION = re.compile(r"^\s*([A-Za-z_][\w.-]*)\s*(==|!=|<=|>=|<|>)\s*([\w.-]+)\s*$")
_REGISTRY_KINDS = {"StopWithoutStart", "NoProvideProvider"}

Loc = Tuple[Union[str, int], ...]


class _ScenarioLoader(yaml.SafeLoader):
    """SafeLoader where only true/false are booleans, so ``on:`` stays a string key."""


_ScenarioLoader.yaml_implicit_resolvers = {
    first: [(tag, rx) for tag, rx in resolvers if tag != "tag:yaml.org,2002:bool"]
    for first, resolvers in yaml.SafeLoader.yaml_implicit_resolvers.items()
}
_ScenarioLoader.add_implicit_resolver(
    "tag:yaml.org,2002:bool", re.compile(r"^(?:true|True|TRUE|false|False|FALSE)$"), list("tTfF")
)


# SOURCE POSITIONS
def _node_at(root: yaml.Node, loc: Iterable[Union[str, int]]) -> yaml.Node:
    """Deepest node reachable along a pydantic-style location path."""
    node = root
    for key in loc:
        if isinstance(node, yaml.MappingNode):
            match = next((v for k, v in node.value if k.value == key), None)
        elif isinstance(node, yaml.SequenceNode) and isinstance(key, int) and 0 <= key < len(node.value):
            match = node.value[key]
        else:
            match = None
        if match is None:
            return node
        node = match
    return node


def _position(node: yaml.Node) -> Tuple[int, int]:
    return node.start_mark.line + 1, node.start_mark.column + 1


class _Diagnostics:
    """Collects positioned errors against one composed document."""

    def __init__(self, root: yaml.Node):
        self.root = root
        self.items: List[ScenarioSyntaxError] = []

    def error(self, loc: Loc, message: str) -> None:
        self.items.append(ScenarioSyntaxError(message, *_position(_node_at(self.root, loc))))

    def unresolved(self, loc: Loc, name: str, what: str) -> None:
        self.items.append(UnresolvedReference(name, *_position(_node_at(self.root, loc)), what=what))

    def non_monotone(self, loc: Loc, message: str) -> None:
        self.items.append(NonMonotoneScript(message, *_position(_node_at(self.root, loc))))

    def raise_if_any(self) -> None:
        if not self.items:
            return
        ordered = sorted(self.items, key=lambda d: (d.line, d.col))
        if len(ordered) == 1:
            raise ordered[0]
        raise ScenarioValidationError(ordered)


# CONDITIONS
def split_condition(text: str) -> Tuple[str, Comparator, str]:
    """``"stability == standing"`` -> ("stability", EQ, "standing")."""
    match = _CONDITION.match(text)
    if match is None:
        raise ValueError(f"malformed condition '{text}', expected '<state> <op> <value>'")
    var, op, label = match.groups()
    return var, Comparator.parse(op), label


def compile_condition(text: str, store: StateStore, kind=Condition) -> Condition:
    var, comparator, label = split_condition(text)
    return kind(state_var=var, comparator=comparator, value=store.resolve(var, label))


def _check_condition(diag: _Diagnostics, loc: Loc, text: str, labels: Dict[str, List[str]]) -> None:
    try:
        var, _, label = split_condition(text)
    except ValueError as exc:
        diag.error(loc, str(exc))
        return
    if var not in labels:
        diag.unresolved(loc, var, "state variable")
    elif label not in labels[var]:
        diag.unresolved(loc, label, f"value of '{var}'")


# PARSING
def _compose(text: str) -> yaml.Node:
    try:
        root = yaml.compose(text, Loader=_ScenarioLoader)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark or exc.context_mark
        line, col = (mark.line + 1, mark.column + 1) if mark else (1, 1)
        raise ScenarioSyntaxError(exc.problem or "malformed scenario", line, col) from exc
    except yaml.YAMLError as exc:
        raise ScenarioSyntaxError(str(exc), 1, 1) from exc
    if root is None:
        raise ScenarioSyntaxError("empty scenario", 1, 1)
    if not isinstance(root, yaml.MappingNode):
        raise ScenarioSyntaxError("a scenario must be a mapping", *_position(root))
    return root


def _shape_errors(diag: _Diagnostics, exc: ValidationError) -> None:
    seen: Set[Tuple[int, int]] = set()
    for err in exc.errors():
        loc = tuple(err["loc"])
        position = _position(_node_at(diag.root, loc))
        if position in seen:
            continue
        seen.add(position)
        path = ".".join(str(part) for part in loc) or "scenario"
        diag.items.append(ScenarioSyntaxError(f"{path}: {err['msg']}", *position))


def _check_states(diag: _Diagnostics, sf: ScenarioFile) -> Dict[str, List[str]]:
    labels: Dict[str, List[str]] = {}
    for i, state in enumerate(sf.states):
        if state.name in labels:
            diag.error(("states", i, "name"), f"duplicate state variable '{state.name}'")
            continue
        if len(set(state.values)) != len(state.values):
            diag.error(("states", i, "values"), f"state variable '{state.name}' repeats a value")
        if state.initial not in state.values:
            diag.unresolved(("states", i, "initial"), state.initial, f"value of '{state.name}'")
        labels[state.name] = list(state.values)
    return labels


def _check_rule(diag: _Diagnostics, loc: Loc, rule: RuleDecl, declared: Set[str],
                groups: Set[str], labels: Dict[str, List[str]]) -> None:
    for j, text in enumerate(rule.if_state):
        _check_condition(diag, (*loc, "if_state", j), text, labels)
    for j, guard in enumerate(rule.if_uses):
        if guard.task not in declared:
            diag.unresolved((*loc, "if_uses", j, "task"), guard.task, "declared subtask type")
    for j, entry in enumerate(rule.emit):
        if isinstance(entry, RequestDecl) and entry.task not in groups:
            diag.unresolved((*loc, "emit", j, "task"), entry.task, "task type")
    try:
        _bundle(rule.emit)
    except ValueError as exc:
        message = exc.errors()[0]["msg"] if isinstance(exc, ValidationError) else str(exc)
        diag.error((*loc, "emit"), message)


def _check_providers(diag: _Diagnostics, sf: ScenarioFile, labels: Dict[str, List[str]]) -> None:
    groups = set(sf.group_names)
    declared: Dict[str, Set[str]] = {}
    for p in sf.providers:
        declared.setdefault(p.group, set()).update(p.needs, p.uses)

    ids: Set[str] = set()
    for i, p in enumerate(sf.providers):
        if p.id in ids:
            diag.error(("providers", i, "id"), f"duplicate provider id '{p.id}'")
        ids.add(p.id)
        for field in ("when", "causing"):
            for j, text in enumerate(getattr(p, field)):
                _check_condition(diag, ("providers", i, field, j), text, labels)
        for field in ("needs", "uses"):
            for j, name in enumerate(getattr(p, field)):
                if name not in groups:
                    diag.unresolved(("providers", i, field, j), name, "task type")
        for r, rule in enumerate(p.rules):
            _check_rule(diag, ("providers", i, "rules", r), rule, declared[p.group], groups, labels)

    if diag.items:
        return
    store = _state_store(sf)
    report = validate_registry([_provider_spec(p, store) for p in sf.providers], store)
    for issue in report.issues:
        if issue.kind not in _REGISTRY_KINDS:
            continue
        index = next(i for i, p in enumerate(sf.providers) if p.group == issue.subject)
        diag.error(("providers", index, "group"), issue.detail)


def _check_script(diag: _Diagnostics, sf: ScenarioFile, labels: Dict[str, List[str]]) -> None:
    groups = set(sf.group_names)
    roots: Set[str] = set()
    previous = 0
    for i, event in enumerate(sf.script):
        if event.at < previous:
            diag.non_monotone(("script", i, "at"), f"script time {event.at} comes after time {previous}")
        previous = max(previous, event.at)
        if event.submit_root is not None:
            if event.submit_root.task not in groups:
                diag.unresolved(("script", i, "submit_root", "task"), event.submit_root.task, "task type")
            roots.add(event.submit_root.label or event.submit_root.task)
        elif event.remove_root is not None:
            if event.remove_root.label not in roots:
                diag.unresolved(("script", i, "remove_root", "label"), event.remove_root.label, "root label")
        elif event.set_state is not None:
            for var, value in event.set_state.items():
                if var not in labels:
                    diag.unresolved(("script", i, "set_state"), var, "state variable")
                elif value not in labels[var]:
                    diag.unresolved(("script", i, "set_state", var), value, f"value of '{var}'")
        elif event.trigger is not None and event.trigger.group not in groups:
            diag.unresolved(("script", i, "trigger", "group"), event.trigger.group, "task type")


def parse_scenario(text: str) -> ScenarioFile:
    """
    Parse and fully validate scenario text.

    Raises:
        ScenarioSyntaxError: malformed text or shape, at its line/column.
        UnresolvedReference: a name that does not resolve.
        NonMonotoneScript: a script time that goes backwards.
        ScenarioValidationError: when there is more than one diagnostic;
            ``diagnostics`` holds all of them ordered by position.
    """
    root = _compose(text)
    diag = _Diagnostics(root)
    data = yaml.load(text, Loader=_ScenarioLoader)
    try:
        sf = ScenarioFile.model_validate(data)
    except ValidationError as exc:
        _shape_errors(diag, exc)
        diag.raise_if_any()
        raise

    labels = _check_states(diag, sf)
    _check_providers(diag, sf, labels)
    _check_script(diag, sf, labels)
    diag.raise_if_any()
    return sf


def load_scenario(path: Union[str, Path]) -> ScenarioFile:
    """Read and parse a scenario file; OSError is left to the caller."""
    return parse_scenario(Path(path).read_text(encoding="utf-8"))


def serialize_scenario(sf: ScenarioFile) -> str:
    """JSON text that parses back to an equal ScenarioFile."""
    return json.dumps(sf.model_dump(mode="json", exclude_none=True), indent=2, ensure_ascii=False) + "\n"


# BEHAVIOUR ADAPTER
def _bundle(entries: Sequence[Union[Marker, RequestDecl]]) -> SubtaskBundle:
    return SubtaskBundle(requests=[
        entry if isinstance(entry, Marker)
        else TaskRequest(task_type=entry.task, data=entry.data, priority=entry.priority, optional=entry.optional)
        for entry in entries
    ])


def _uses_match(guard: UsesGuard, ctx: ProviderContext) -> bool:
    info = ctx.uses.get(guard.task)
    if info is None:
        return False
    if guard.run_state and info.run_state not in guard.run_state:
        return False
    return guard.done is None or info.done == guard.done


def scripted_behaviour(rules: Sequence[BehaviourRule], ctx: ProviderContext) -> SubtaskBundle:
    """First rule matching the invocation decides the bundle; no match emits nothing."""
    for rule in rules:
        if rule.on and ctx.reason not in rule.on:
            continue
        if not all(c.comparator.apply(ctx.state[c.state_var], c.value) for c in rule.guard):
            continue
        if rule.min_triggers is not None and ctx.triggers < rule.min_triggers:
            continue
        if all(_uses_match(guard, ctx) for guard in rule.uses):
            return rule.bundle
    return SubtaskBundle()


def rule_behaviour(rules: Sequence[BehaviourRule]):
    return partial(scripted_behaviour, list(rules))


def compile_rule(rule: RuleDecl, store: StateStore, min_triggers: Optional[int] = None) -> BehaviourRule:
    return BehaviourRule(
        on=list(rule.on),
        guard=[compile_condition(text, store) for text in rule.if_state],
        uses=list(rule.if_uses),
        min_triggers=min_triggers if min_triggers is not None and rule.min_triggers is not None else rule.min_triggers,
        bundle=_bundle(rule.emit),
    )


# BUILDING AND RUNNING
def _state_store(sf: ScenarioFile) -> StateStore:
    store = StateStore()
    for state in sf.states:
        store.register(state.name, state.values, state.initial)
    return store


def _provider_spec(decl: ProviderDecl, store: StateStore) -> ProviderSpec:
    return ProviderSpec(
        id=decl.id,
        group=decl.group,
        kind=decl.kind,
        when=[compile_condition(text, store) for text in decl.when],
        causing=[compile_condition(text, store, kind=StateAssertion) for text in decl.causing],
        needs=list(decl.needs),
        uses=list(decl.uses),
        layer=decl.layer,
    )


def build_director(sf: ScenarioFile, trace_cap: Optional[int] = None,
                   motor_done_after: Optional[int] = None) -> Director:
    """
    Register the scenario's states and providers (file order) and start the engine.

    ``motor_done_after`` overrides the trigger threshold of every rule that
    has one on actuation-layer providers.
    """
    director = Director(trace_cap=trace_cap)
    for state in sf.states:
        director.register_state(state.name, state.values, state.initial)
    store = director.graph.state
    for decl in sf.providers:
        override = motor_done_after if decl.layer == ACTUATION_LAYER else None
        rules = [compile_rule(rule, store, override) for rule in decl.rules]
        director.register_provider(_provider_spec(decl, store), rule_behaviour(rules))
    director.start()
    return director


def _inject(director: Director, event: ScriptEvent, roots: Dict[str, RootTicket]) -> None:
    if event.submit_root is not None:
        req = event.submit_root
        roots[req.label or req.task] = director.submit_root_task(req.task, data=req.data, priority=req.priority,
                                                                optional=req.optional)
    elif event.remove_root is not None:
        try:
            director.remove_root_task(roots[event.remove_root.label])
        except UnknownUid as exc:
            logger.debug(f"remove_root '{event.remove_root.label}' skipped: {exc.detail}")
    elif event.set_state is not None:
        for var, value in event.set_state.items():
            director.state_update(var, value)
    else:
        director.external_trigger(event.trigger.group, event.trigger.payload)


def run_scenario(sf: ScenarioFile, max_steps: int = DEFAULT_MAX_STEPS, snapshot_at: Iterable[int] = (),
                 motor_done_after: Optional[int] = MOTOR_DONE_AFTER,
                 trace_cap: Optional[int] = None,
                 observer: Optional[Callable[[Director], None]] = None) -> SimulationResult:
    """
    Replay a scenario's script against a fresh engine.

    Events of one script time are injected together, then step() is called
    until the queue is empty before the next time is injected. Script times
    are logical; snapshots are keyed by engine step (0 = before the first step);
    requested steps past the end get the final, quiescent graph. ``observer`` is
    called with the engine after every step.

    Raises:
        StepLimitExceeded: after ``max_steps`` engine steps; ``partial`` holds
            the result so far.
    """
    director = build_director(sf, trace_cap=trace_cap, motor_done_after=motor_done_after)
    wanted = set(snapshot_at)
    snapshots = {0: snapshot(director)} if 0 in wanted else {}
    roots: Dict[str, RootTicket] = {}

    def result() -> SimulationResult:
        final = snapshot(director)
        steps = director.graph.step_counter
        extra = {s: final for s in wanted if s > steps}
        return SimulationResult(steps=steps, trace_offset=director.graph.trace_offset,
                                trace=list(director.graph.trace), final=final,
                                snapshots={**snapshots, **extra})

    index = 0
    script = sf.script
    while index < len(script):
        at = script[index].at
        while index < len(script) and script[index].at == at:
            _inject(director, script[index], roots)
            index += 1
        while director.pending_events():
            if director.graph.step_counter >= max_steps:
                raise StepLimitExceeded(max_steps, partial=result())
            director.step()
            if observer is not None:
                observer(director)
            if director.graph.step_counter in wanted:
                snapshots[director.graph.step_counter] = snapshot(director)

    logger.info(f"scenario '{sf.name or 'unnamed'}' settled after {director.graph.step_counter} steps")
    return result()


def run_scenario_text(text: str, **kwargs) -> SimulationResult:
    return run_scenario(parse_scenario(text), **kwargs)
