"""
Director domain models.

This module defines the value types the engine works with: tasks, providers,
provider groups, subtask bundles, conditions and the state store they are
evaluated against, plus the live DirectorGraph container. It holds no
arbitration logic; see services/arbitration_service.py and
services/director_service.py for that.
"""

# pylint: disable=too-few-public-methods
from typing import Annotated, Callable, Dict, List, Optional, Sequence, Union
from pydantic import BaseModel, ConfigDict, Field, StringConstraints, model_validator

from schemas.traceschema import TraceEvent
from utils.enums import (
    BlockReason,
    Comparator,
    Marker,
    ProviderKind,
    RunReason,
    RunState,
    TaskStatus,
)
from utils.exceptions import DirectorException, InvalidState, UnknownStateVar


TaskType = Annotated[str, StringConstraints(min_length=1, strip_whitespace=True)]

# Parent / ancestor reference: a provider group's task type, or None for Root.
AncestorRef = Optional[str]
ROOT: AncestorRef = None


# CONDITIONS
class Condition(BaseModel):
    """(state variable, comparator, value) triple used by When."""

    model_config = ConfigDict(frozen=True)

    state_var: str
    comparator: Comparator
    value: int

    def __str__(self):
        return f"{self.state_var} {self.comparator.value} {self.value}"


class StateAssertion(Condition):
    """Same shape as a Condition; declares the state a provider brings about (Causing)."""


# TASKS
class TaskRequest(BaseModel):
    """One entry of a subtask bundle: a request for a task of some type."""

    model_config = ConfigDict(frozen=True)

    task_type: TaskType
    data: str = ""
    priority: int = 0
    optional: bool = False


BundleEntry = Union[TaskRequest, Marker]


class SubtaskBundle(BaseModel):
    """What a provider emits on each run."""

    model_config = ConfigDict(frozen=True)

    requests: List[BundleEntry] = Field(default_factory=list)

    @model_validator(mode="after")
    def _check_markers(self):
        markers = [r for r in self.requests if isinstance(r, Marker)]
        if markers.count(Marker.DONE) > 1 or markers.count(Marker.IDLE) > 1:
            raise ValueError("a bundle carries at most one DONE and one IDLE")
        if Marker.DONE in markers and Marker.IDLE in markers:
            raise ValueError("DONE and IDLE cannot be emitted together")
        if Marker.IDLE in markers and len(markers) != len(self.requests):
            raise ValueError("IDLE cannot be combined with task requests")
        types = [r.task_type for r in self.requests if isinstance(r, TaskRequest)]
        if len(types) != len(set(types)):
            raise ValueError("at most one request per task type in a bundle")
        return self

    @classmethod
    def of(cls, *entries: BundleEntry) -> "SubtaskBundle":
        return cls(requests=list(entries))

    @classmethod
    def done(cls) -> "SubtaskBundle":
        return cls(requests=[Marker.DONE])

    @classmethod
    def idle(cls) -> "SubtaskBundle":
        return cls(requests=[Marker.IDLE])

    @property
    def is_idle(self) -> bool:
        return Marker.IDLE in self.requests

    @property
    def is_done(self) -> bool:
        return Marker.DONE in self.requests

    @property
    def task_requests(self) -> List[TaskRequest]:
        return [r for r in self.requests if isinstance(r, TaskRequest)]


_ALLOWED_TRANSITIONS = {
    (TaskStatus.QUEUED, TaskStatus.RUNNING),
    (TaskStatus.QUEUED, TaskStatus.RETIRED),
    (TaskStatus.RUNNING, TaskStatus.QUEUED),
    (TaskStatus.RUNNING, TaskStatus.RETIRED),
}


class TaskInstance(BaseModel):
    """A live request for one piece of functionality."""

    uid: int
    task_type: TaskType
    data: str = ""
    priority: int = 0
    optional: bool = False
    parent: AncestorRef = ROOT
    status: TaskStatus = TaskStatus.QUEUED
    blocked_reason: Optional[BlockReason] = None

    @property
    def is_root(self) -> bool:
        return self.parent is ROOT

    @property
    def live(self) -> bool:
        return self.status is not TaskStatus.RETIRED

    def move_to(self, status: TaskStatus) -> None:
        if status is self.status:
            return
        if (self.status, status) not in _ALLOWED_TRANSITIONS:
            raise DirectorException(
                f"task {self.uid} cannot move from {self.status.value} to {status.value}",
                code="invalid_transition",
            )
        self.status = status


class RootTicket(BaseModel):
    """
    Handle for a submitted root task.

    Uids are handed out when a task enters the graph, so a queued submission
    has none yet; ``uid`` is filled in when step() applies it.
    """

    ticket: int
    task_type: TaskType
    uid: Optional[int] = None


# PROVIDERS
class UsesInfo(BaseModel):
    """Run state and done flag of one subtask type, as seen by its requester."""

    model_config = ConfigDict(frozen=True)

    run_state: RunState = RunState.NO_TASK
    done: bool = False


class ProviderContext(BaseModel):
    """Everything a behaviour callback may look at when it runs."""

    model_config = ConfigDict(frozen=True)

    reason: RunReason
    group: str
    provider: str
    task_uid: Optional[int] = None
    data: str = ""
    payload: Optional[str] = None
    uses: Dict[str, UsesInfo] = Field(default_factory=dict)
    state: Dict[str, int] = Field(default_factory=dict)
    triggers: int = 0


Behaviour = Callable[[ProviderContext], Optional[SubtaskBundle]]


class ProviderSpec(BaseModel):
    """A behaviour implementation registered against one task type."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    id: TaskType
    group: TaskType
    kind: ProviderKind = ProviderKind.PROVIDE
    when: List[Condition] = Field(default_factory=list)
    causing: List[StateAssertion] = Field(default_factory=list)
    needs: List[TaskType] = Field(default_factory=list)
    uses: List[TaskType] = Field(default_factory=list)
    decl_index: int = -1
    layer: Optional[str] = None
    behaviour: Optional[Behaviour] = Field(default=None, exclude=True, repr=False)

    @model_validator(mode="after")
    def _lifecycle_hooks_are_unconditional(self):
        if self.kind is not ProviderKind.PROVIDE and (self.when or self.causing or self.needs):
            raise ValueError(f"{self.kind.value} provider '{self.id}' cannot carry when/causing/needs")
        return self


class PushRecord(BaseModel):
    """Marks a group redirected to a Causing provider on behalf of a blocked task."""

    model_config = ConfigDict(frozen=True)

    pusher: int
    condition: Condition
    provider: str


class ProviderGroup(BaseModel):
    """All providers for one task type, plus the group's live arbitration state."""

    task_type: TaskType
    providers: List[ProviderSpec] = Field(default_factory=list)
    active_provider: Optional[str] = None
    assigned_task: Optional[int] = None
    watchers: List[int] = Field(default_factory=list)
    pushed_by: Optional[PushRecord] = None
    started: bool = False
    last_subtasks: SubtaskBundle = Field(default_factory=SubtaskBundle)
    # task type -> uid of the subtask this group currently requests
    subtasks: Dict[str, int] = Field(default_factory=dict)
    done_flags: Dict[str, bool] = Field(default_factory=dict)
    triggers: int = 0

    @property
    def active(self) -> bool:
        return self.assigned_task is not None

    def provider(self, provider_id: str) -> ProviderSpec:
        for spec in self.providers:
            if spec.id == provider_id:
                return spec
        raise KeyError(provider_id)

    def current_provider(self) -> Optional[ProviderSpec]:
        return self.provider(self.active_provider) if self.active_provider else None

    def of_kind(self, kind: ProviderKind) -> List[ProviderSpec]:
        return [p for p in self.providers if p.kind is kind]

    def declared_types(self) -> List[str]:
        seen: Dict[str, None] = {}
        for spec in self.providers:
            for task_type in [*spec.needs, *spec.uses]:
                seen.setdefault(task_type, None)
        return list(seen)


# STATE
class StateStore(BaseModel):
    """Named discrete state variables, each an enumeration of labels mapped to ints."""

    enums: Dict[str, Dict[str, int]] = Field(default_factory=dict)
    values: Dict[str, int] = Field(default_factory=dict)

    def register(self, name: str, labels: Union[Sequence[str], Dict[str, int]], initial: Union[str, int]) -> None:
        if not name:
            raise InvalidState("state variable name must be non-empty")
        mapping = dict(labels) if isinstance(labels, dict) else {label: i for i, label in enumerate(labels)}
        if not mapping:
            raise InvalidState(f"state variable '{name}' has no values")
        self.enums[name] = mapping
        self.values[name] = self._coerce(name, initial)

    def is_registered(self, name: str) -> bool:
        return name in self.values

    def get(self, name: str) -> int:
        try:
            return self.values[name]
        except KeyError:
            raise UnknownStateVar(name) from None

    def set(self, name: str, value: Union[str, int]) -> int:
        if name not in self.values:
            raise UnknownStateVar(name)
        self.values[name] = self._coerce(name, value)
        return self.values[name]

    def domain(self, name: str) -> List[int]:
        if name not in self.enums:
            raise UnknownStateVar(name)
        return sorted(self.enums[name].values())

    def resolve(self, name: str, value: Union[str, int]) -> int:
        if name not in self.enums:
            raise UnknownStateVar(name)
        return self._coerce(name, value)

    def label_of(self, name: str, value: int) -> str:
        for label, number in self.enums.get(name, {}).items():
            if number == value:
                return label
        return str(value)

    def snapshot(self) -> Dict[str, int]:
        return dict(self.values)

    def _coerce(self, name: str, value: Union[str, int]) -> int:
        mapping = self.enums[name]
        if isinstance(value, bool):
            raise InvalidState(f"invalid value for '{name}'")
        if isinstance(value, int):
            if value not in mapping.values():
                raise InvalidState(f"{value} is not a value of '{name}'")
            return value
        if value in mapping:
            return mapping[value]
        raise InvalidState(f"'{value}' is not a value of '{name}'")


# ARBITRATION RESULTS
class BranchDescriptor(BaseModel):
    model_config = ConfigDict(frozen=True)

    branch_priority: int
    any_optional: bool


class NoneEligible(BaseModel):
    """select_provider result when no Provide provider has all When conditions true."""

    model_config = ConfigDict(frozen=True)

    unmet: List[Condition]
    provider: Optional[str] = None


class ValidationIssue(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: str
    subject: str
    detail: str


class ValidationReport(BaseModel):
    issues: List[ValidationIssue] = Field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.issues

    def kinds(self) -> List[str]:
        return [issue.kind for issue in self.issues]


# LIVE GRAPH
class DirectorGraph(BaseModel):
    """The live tree the engine mutates: groups, tasks, roots, state and trace."""

    groups: Dict[str, ProviderGroup] = Field(default_factory=dict)
    tasks: Dict[int, TaskInstance] = Field(default_factory=dict)
    root_tasks: List[int] = Field(default_factory=list)
    state: StateStore = Field(default_factory=StateStore)
    trace: List[TraceEvent] = Field(default_factory=list)
    trace_offset: int = 0
    step_counter: int = 0

    def task(self, uid: int) -> TaskInstance:
        return self.tasks[uid]

    def live_task(self, uid: Optional[int]) -> Optional[TaskInstance]:
        if uid is None:
            return None
        task = self.tasks.get(uid)
        return task if task is not None and task.live else None

    def group_for(self, task: TaskInstance) -> ProviderGroup:
        return self.groups[task.task_type]

    def parent_group(self, task: TaskInstance) -> Optional[ProviderGroup]:
        return None if task.parent is ROOT else self.groups.get(task.parent)

