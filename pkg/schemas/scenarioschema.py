"""
Pydantic schemas for scenario files and simulation results.

A scenario file declares state variables, rule-scripted providers and a
timed script of external events. These models only check shape; name
resolution (state variables, labels, task types) and script ordering are
checked by services/scenario_service.py, which knows where each value sits
in the source text.
"""
# pylint: disable=too-few-public-methods,missing-class-docstring

from typing import Dict, List, Optional, Union
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from models.models import Condition, SubtaskBundle
from schemas.snapshotschema import GraphSnapshot
from schemas.traceschema import TraceEvent
from utils.enums import Marker, ProviderKind, RunReason, RunState


class _Decl(BaseModel):
    model_config = ConfigDict(extra="forbid")


def _as_list(value):
    if value is None:
        return []
    return value if isinstance(value, list) else [value]


class StateDecl(_Decl):
    name: str = Field(min_length=1)
    values: List[str] = Field(min_length=1)
    initial: str


class RequestDecl(_Decl):
    """One task request in a rule's emit list."""

    task: str = Field(min_length=1)
    priority: int = 0
    optional: bool = False
    data: str = ""


class UsesGuard(_Decl):
    """Matches the run state / done flag of one declared subtask type."""

    task: str = Field(min_length=1)
    run_state: List[RunState] = Field(default_factory=list)
    done: Optional[bool] = None

    @field_validator("run_state", mode="before")
    @classmethod
    def _listify(cls, value):
        return _as_list(value)


class RuleDecl(_Decl):
    """
    One row of a provider's decision table.

    Empty ``on`` matches every RunReason. All ``if_state`` conditions and all
    ``if_uses`` guards must match. ``min_triggers`` requires that many
    external triggers since the group last gained control.
    """

    on: List[RunReason] = Field(default_factory=list)
    if_state: List[str] = Field(default_factory=list)
    if_uses: List[UsesGuard] = Field(default_factory=list)
    min_triggers: Optional[int] = Field(default=None, ge=0)
    emit: List[Union[Marker, RequestDecl]] = Field(default_factory=list)

    @field_validator("on", "if_state", "if_uses", mode="before")
    @classmethod
    def _listify(cls, value):
        return _as_list(value)


class ProviderDecl(_Decl):
    id: str = Field(min_length=1)
    group: str = Field(min_length=1)
    kind: ProviderKind = ProviderKind.PROVIDE
    when: List[str] = Field(default_factory=list)
    causing: List[str] = Field(default_factory=list)
    needs: List[str] = Field(default_factory=list)
    uses: List[str] = Field(default_factory=list)
    layer: Optional[str] = None
    rules: List[RuleDecl] = Field(default_factory=list)

    @model_validator(mode="after")
    def _lifecycle_hooks_are_unconditional(self):
        if self.kind is not ProviderKind.PROVIDE and (self.when or self.causing or self.needs):
            raise ValueError(f"{self.kind.value} provider '{self.id}' cannot carry when/causing/needs")
        return self


class SubmitRoot(_Decl):
    task: str = Field(min_length=1)
    priority: int = 0
    optional: bool = False
    data: str = ""
    label: Optional[str] = None


class RemoveRoot(_Decl):
    label: str = Field(min_length=1)


class TriggerDecl(_Decl):
    group: str = Field(min_length=1)
    payload: Optional[str] = None


class ScriptEvent(_Decl):
    """One timed script entry; exactly one action key is set."""

    at: int = Field(ge=0)
    submit_root: Optional[SubmitRoot] = None
    remove_root: Optional[RemoveRoot] = None
    set_state: Optional[Dict[str, str]] = None
    trigger: Optional[TriggerDecl] = None

    @model_validator(mode="after")
    def _one_action(self):
        actions = [a for a in (self.submit_root, self.remove_root, self.set_state, self.trigger) if a is not None]
        if len(actions) != 1:
            raise ValueError("a script event needs exactly one of submit_root, remove_root, set_state, trigger")
        return self


class ScenarioFile(_Decl):
    name: Optional[str] = None
    description: Optional[str] = None
    states: List[StateDecl] = Field(default_factory=list)
    providers: List[ProviderDecl] = Field(default_factory=list)
    script: List[ScriptEvent] = Field(default_factory=list)

    @property
    def group_names(self) -> List[str]:
        seen: Dict[str, None] = {}
        for p in self.providers:
            seen.setdefault(p.group, None)
        return list(seen)


# COMPILED FORM
class BehaviourRule(BaseModel):
    """A RuleDecl with its names resolved against the state store."""

    model_config = ConfigDict(frozen=True)

    on: List[RunReason] = Field(default_factory=list)
    guard: List[Condition] = Field(default_factory=list)
    uses: List[UsesGuard] = Field(default_factory=list)
    min_triggers: Optional[int] = None
    bundle: SubtaskBundle = Field(default_factory=SubtaskBundle)


class SimulationResult(BaseModel):
    """Outcome of one scenario run."""

    steps: int = 0
    trace_offset: int = 0
    trace: List[TraceEvent] = Field(default_factory=list)
    final: GraphSnapshot = Field(default_factory=GraphSnapshot)
    snapshots: Dict[int, GraphSnapshot] = Field(default_factory=dict)

    def trace_text(self) -> str:
        return "".join(event.to_line() + "\n" for event in self.trace)


class FuzzOutcome(BaseModel):
    """What one generated scenario did to the runtime."""

    seed: int
    violations: List[str] = Field(default_factory=list)
    # observations of optional subtasks while every required sibling ran
    optional_running: int = 0
    optional_blocked: int = 0
