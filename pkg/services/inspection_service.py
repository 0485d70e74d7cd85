"""
Read-only views over a running Director: snapshots, DOT export, trace
export and the runtime invariant checker used by tests and the fuzz command.
"""

from collections import Counter
from typing import Dict, List, Optional, Sequence, Tuple

from models.models import DirectorGraph, ProviderGroup, ProviderSpec
from schemas.snapshotschema import GraphSnapshot, GroupView, ProviderView, PushView, TaskView
from schemas.traceschema import TraceEvent
from services.arbitration_service import lineage
from services.condition_service import all_hold, describe_condition
from services.director_service import Director
from utils.enums import NodeStyle, ProviderKind, RunReason, TaskStatus, TraceKind
from utils.exceptions import DetachedTask, RangeOutOfBounds

_COLOURS = {
    NodeStyle.ACTIVE: "blue",
    NodeStyle.BLOCKED: "red",
    NodeStyle.INACTIVE: "black",
}
ROOT_NODE = "Root"


def _provider_view(spec: ProviderSpec, g: DirectorGraph) -> ProviderView:
    return ProviderView(
        id=spec.id,
        kind=spec.kind,
        when=[describe_condition(c, g.state) for c in spec.when],
        causing=[describe_condition(c, g.state) for c in spec.causing],
        needs=list(spec.needs),
        uses=list(spec.uses),
        layer=spec.layer,
    )


def _group_view(group: ProviderGroup, g: DirectorGraph) -> GroupView:
    push = None
    if group.pushed_by is not None:
        push = PushView(
            pusher=group.pushed_by.pusher,
            condition=describe_condition(group.pushed_by.condition, g.state),
            provider=group.pushed_by.provider,
        )
    return GroupView(
        task_type=group.task_type,
        providers=[_provider_view(p, g) for p in group.providers],
        active_provider=group.active_provider,
        assigned_task=group.assigned_task,
        watchers=list(group.watchers),
        pushed_by=push,
        subtasks=dict(group.subtasks),
        done_flags=dict(group.done_flags),
    )


def snapshot(engine: Director) -> GraphSnapshot:
    """Detached, frozen copy of the engine graph; equal for equal graphs."""
    g = engine.graph
    tasks = {
        uid: TaskView(
            uid=t.uid,
            task_type=t.task_type,
            data=t.data,
            priority=t.priority,
            optional=t.optional,
            parent=t.parent,
            status=t.status,
            blocked_reason=t.blocked_reason,
        )
        for uid, t in sorted(g.tasks.items())
        if t.live
    }
    return GraphSnapshot(
        step=g.step_counter,
        groups=[_group_view(group, g) for group in g.groups.values()],
        tasks=tasks,
        root_tasks=list(g.root_tasks),
        state={name: g.state.label_of(name, value) for name, value in sorted(g.state.values.items())},
    )


# DOT
def _quote(text: str) -> str:
    return '"' + text.replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n") + '"'


def _attrs(**attrs: str) -> str:
    return "[" + ", ".join(f"{key}={_quote(value)}" for key, value in attrs.items()) + "]"


def _group_style(view: GroupView) -> NodeStyle:
    if view.assigned_task is not None:
        return NodeStyle.ACTIVE
    if view.watchers:
        return NodeStyle.BLOCKED
    return NodeStyle.INACTIVE


def _group_label(view: GroupView) -> str:
    lines = [view.task_type]
    layers = sorted({p.layer for p in view.providers if p.layer})
    if layers:
        lines[0] += f" ({','.join(layers)})"
    if view.active_provider:
        lines.append(f"[{view.active_provider}]")
    return "\n".join(lines)


def export_dot(s: GraphSnapshot) -> str:
    """
    Render a snapshot as a DOT digraph.

    Groups are nodes, tasks are edges from the requesting group (or Root) to
    the group serving the task type, labelled with the task priority.
    Active elements are solid blue, blocked ones dashed red and inactive
    groups dotted black. Push records add a bold edge labelled "pushed" from
    the pusher's group to the pushed group.
    """
    nodes: List[str] = []
    edges: List[str] = []

    if s.root_tasks:
        nodes.append(f"{_quote(ROOT_NODE)} {_attrs(shape='ellipse', style=NodeStyle.ACTIVE.value)};")
    for view in s.groups:
        style = _group_style(view)
        nodes.append(
            f"{_quote(view.task_type)} "
            f"{_attrs(shape='box', label=_group_label(view), style=style.value, color=_COLOURS[style])};"
        )

    for uid, task in sorted(s.tasks.items()):
        style = NodeStyle.ACTIVE if task.status is TaskStatus.RUNNING else NodeStyle.BLOCKED
        label = f"{task.priority}{' opt' if task.optional else ''}"
        source = task.parent if task.parent is not None else ROOT_NODE
        edges.append(
            f"{_quote(source)} -> {_quote(task.task_type)} "
            f"{_attrs(label=label, style=style.value, color=_COLOURS[style], tooltip=f'task {uid}')};"
        )

    for view in s.groups:
        if view.pushed_by is None:
            continue
        pusher = s.tasks.get(view.pushed_by.pusher)
        if pusher is None:
            continue
        edges.append(
            f"{_quote(pusher.task_type)} -> {_quote(view.task_type)} "
            f"{_attrs(label='pushed', style='bold', color='darkgreen', tooltip=view.pushed_by.condition)};"
        )

    body = [f"\t{line}" for line in nodes + edges]
    return "\n".join(["digraph director {", "\trankdir=TB;", *body, "}"]) + "\n"


# TRACE
def render_trace(events: Sequence[TraceEvent], seq_range: Optional[Tuple[int, int]] = None, offset: int = 0) -> str:
    """
    Serialize trace records ``[start, end)`` one JSON object per line.

    ``offset`` is the sequence number of ``events[0]``.

    Raises:
        RangeOutOfBounds: if the range is reversed or reaches outside the held trace.
    """
    low, high = offset, offset + len(events)
    start, end = seq_range if seq_range is not None else (low, high)
    if start > end or start < low or end > high:
        raise RangeOutOfBounds(f"range {start}:{end} is outside the trace bounds {low}:{high}")
    return "".join(event.to_line() + "\n" for event in events[start - low:end - low])


def export_trace(engine: Director, seq_range: Optional[Tuple[int, int]] = None) -> str:
    return render_trace(engine.graph.trace, seq_range, offset=engine.graph.trace_offset)


# INVARIANTS
def _check_exclusion(g: DirectorGraph, problems: List[str]) -> None:
    running = Counter(t.task_type for t in g.tasks.values() if t.status is TaskStatus.RUNNING)
    for task_type, count in running.items():
        if count > 1:
            problems.append(f"mutual exclusion: {count} running tasks of type '{task_type}'")
    for group in g.groups.values():
        holder = g.live_task(group.assigned_task)
        if group.assigned_task is not None and (holder is None or holder.status is not TaskStatus.RUNNING):
            problems.append(f"group '{group.task_type}' is assigned a task that is not running")
        if (group.active_provider is None) != (group.assigned_task is None):
            problems.append(f"group '{group.task_type}' has an active provider without a task or vice versa")
        if group.active != group.started:
            problems.append(f"group '{group.task_type}' lifecycle flag out of step with its assignment")
        if group.pushed_by is not None and not group.active:
            problems.append(f"inactive group '{group.task_type}' carries a push record")
        spec = group.current_provider()
        if spec is not None and not all_hold(spec.when, g.state):
            problems.append(f"group '{group.task_type}' runs '{spec.id}' while its When fails")


def _check_tree(g: DirectorGraph, problems: List[str]) -> None:
    for task in g.tasks.values():
        if not task.live:
            continue
        if task.status is TaskStatus.RUNNING and g.groups[task.task_type].assigned_task != task.uid:
            problems.append(f"task {task.uid} is running but not assigned to '{task.task_type}'")
        if task.is_root:
            continue
        parent = g.groups.get(task.parent)
        if parent is None or not parent.active:
            problems.append(f"task {task.uid} outlives its requester '{task.parent}'")
        elif parent.subtasks.get(task.task_type) != task.uid:
            problems.append(f"task {task.uid} is not listed by its requester '{task.parent}'")
        try:
            lineage(task, g)
        except DetachedTask as exc:
            problems.append(f"task {task.uid}: {exc.detail}")


def _check_all_or_nothing(g: DirectorGraph, problems: List[str]) -> None:
    for group in g.groups.values():
        required = [
            t for t in (g.live_task(uid) for uid in group.subtasks.values())
            if t is not None and not t.optional
        ]
        running = [t for t in required if t.status is TaskStatus.RUNNING]
        if running and len(running) != len(required):
            problems.append(
                f"all-or-nothing: '{group.task_type}' runs {len(running)} of {len(required)} required subtasks"
            )


def optional_subtask_states(engine: Director) -> Tuple[int, int]:
    """
    Optional subtasks (running, queued) under groups whose required subtasks all run.

    Groups without a running required subtask are not counted.
    """
    g = engine.graph
    running = queued = 0
    for group in g.groups.values():
        if not group.active:
            continue
        subtasks = [t for t in (g.live_task(uid) for uid in group.subtasks.values()) if t is not None]
        required = [t for t in subtasks if not t.optional]
        if not required or any(t.status is not TaskStatus.RUNNING for t in required):
            continue
        for task in subtasks:
            if task.optional:
                running += task.status is TaskStatus.RUNNING
                queued += task.status is TaskStatus.QUEUED
    return running, queued


def _check_lifecycle_trace(g: DirectorGraph, problems: List[str]) -> None:
    """Start runs right after acquisition and before Provide; Stop only closes an acquisition."""
    if g.trace_offset:
        return
    last: Dict[str, str] = {}
    for event in g.trace:
        group = event.group
        if group is None or group not in g.groups:
            continue
        if event.kind is TraceKind.TASK_ASSIGNED:
            last[group] = "assigned"
            continue
        if event.kind is not TraceKind.PROVIDER_RUN:
            continue
        previous = last.get(group)
        has_start = bool(g.groups[group].of_kind(ProviderKind.START))
        if event.reason is RunReason.STARTED:
            if previous not in ("assigned", "started"):
                problems.append(f"lifecycle: Start outside an acquisition for '{group}' at seq {event.seq}")
            last[group] = "started"
        elif event.reason is RunReason.STOPPED:
            if previous is None:
                problems.append(f"lifecycle: Stop without prior Start/Provide for '{group}' at seq {event.seq}")
            last[group] = "stopped"
        else:
            if previous == "assigned" and has_start:
                problems.append(f"lifecycle: Provide ran before Start for '{group}' at seq {event.seq}")
            if previous == "stopped":
                problems.append(f"lifecycle: Provide ran after Stop without reacquisition for '{group}'")
            last[group] = "provide"


def check_invariants(engine: Director) -> List[str]:
    """
    Every runtime invariant violated by the engine's current graph.

    Covers mutual exclusion, When-safety of active providers, tree
    consistency (running subtasks have an active requester, no parent
    cycles), all-or-nothing over required subtasks and Start/Stop pairing
    in the trace. An empty list means the graph is consistent.
    """
    g = engine.graph
    problems: List[str] = []
    _check_exclusion(g, problems)
    _check_tree(g, problems)
    _check_all_or_nothing(g, problems)
    _check_lifecycle_trace(g, problems)
    return problems
