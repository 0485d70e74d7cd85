"""
Pydantic schemas for read-only graph snapshots.

A GraphSnapshot is a detached, frozen copy of the live DirectorGraph with
every arbitration-relevant field of every group, task and state variable.
It is what the DOT export and the CLI render; nothing in it points back into
the engine.
"""
# pylint: disable=too-few-public-methods,missing-class-docstring

from typing import Dict, List, Optional
from pydantic import BaseModel, ConfigDict, Field

from utils.enums import BlockReason, ProviderKind, TaskStatus


class _Frozen(BaseModel):
    model_config = ConfigDict(frozen=True)


class ProviderView(_Frozen):
    id: str
    kind: ProviderKind
    when: List[str] = Field(default_factory=list)
    causing: List[str] = Field(default_factory=list)
    needs: List[str] = Field(default_factory=list)
    uses: List[str] = Field(default_factory=list)
    layer: Optional[str] = None


class PushView(_Frozen):
    pusher: int
    condition: str
    provider: str


class TaskView(_Frozen):
    uid: int
    task_type: str
    data: str = ""
    priority: int = 0
    optional: bool = False
    parent: Optional[str] = None
    status: TaskStatus
    blocked_reason: Optional[BlockReason] = None


class GroupView(_Frozen):
    task_type: str
    providers: List[ProviderView] = Field(default_factory=list)
    active_provider: Optional[str] = None
    assigned_task: Optional[int] = None
    watchers: List[int] = Field(default_factory=list)
    pushed_by: Optional[PushView] = None
    subtasks: Dict[str, int] = Field(default_factory=dict)
    done_flags: Dict[str, bool] = Field(default_factory=dict)


class GraphSnapshot(_Frozen):
    """
    Consistent copy of the engine graph at one step.

    Only live tasks are listed; every uid referenced by a group or by the
    root list is a key of ``tasks``.
    """

    step: int = 0
    groups: List[GroupView] = Field(default_factory=list)
    tasks: Dict[int, TaskView] = Field(default_factory=dict)
    root_tasks: List[int] = Field(default_factory=list)
    state: Dict[str, str] = Field(default_factory=dict)

    def group(self, task_type: str) -> GroupView:
        for view in self.groups:
            if view.task_type == task_type:
                return view
        raise KeyError(task_type)

    @property
    def active_groups(self) -> List[str]:
        return [g.task_type for g in self.groups if g.assigned_task is not None]
