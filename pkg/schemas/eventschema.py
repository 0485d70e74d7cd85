"""
Director event and step report schemas.

External callers enqueue events through the Director API; the engine also
enqueues ProviderRunRequested internally when a subtask reports DONE or a
running subtask's data changes.
"""

from typing import List, Optional, Union
from pydantic import BaseModel, ConfigDict, Field

from schemas.traceschema import TraceEvent
from utils.enums import RunReason


class _Event(BaseModel):
    model_config = ConfigDict(frozen=True)


class RootTaskSubmitted(_Event):
    ticket: int
    task_type: str
    data: str = ""
    priority: int = 0
    optional: bool = False


class RootTaskRemoved(_Event):
    # a live root uid, or the ticket of a submission not yet applied
    uid: Optional[int] = None
    ticket: Optional[int] = None


class StateChanged(_Event):
    state_var: str
    value: int


class ExternalTrigger(_Event):
    group: str
    payload: Optional[str] = None


class ProviderRunRequested(_Event):
    group: str
    reason: RunReason


DirectorEvent = Union[RootTaskSubmitted, RootTaskRemoved, StateChanged, ExternalTrigger, ProviderRunRequested]


class StepReport(BaseModel):
    """Outcome of one Director.step() call."""

    events_processed: int = 0
    providers_run: List[str] = Field(default_factory=list)
    trace: List[TraceEvent] = Field(default_factory=list)
