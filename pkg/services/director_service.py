"""
The Director runtime.

Providers are registered against task types before start(). After that the
engine is driven by events: root tasks submitted or removed, state changes
and external triggers. step() takes one external event off the queue and
runs every consequence (provider runs, subtask reconciliation, evictions,
pushes, watcher takeovers) until nothing changes any more.

Event submission is safe from any thread; step() must be serialized by the
caller.
"""

import threading
from collections import deque
from functools import cmp_to_key
from typing import Deque, Dict, List, NamedTuple, Optional, Sequence, Set, Tuple, Union

from loguru import logger

from models.models import (
    ROOT,
    Behaviour,
    Condition,
    DirectorGraph,
    NoneEligible,
    ProviderContext,
    ProviderGroup,
    ProviderSpec,
    PushRecord,
    RootTicket,
    SubtaskBundle,
    TaskInstance,
    UsesInfo,
)
from schemas.eventschema import (
    DirectorEvent,
    ExternalTrigger,
    ProviderRunRequested,
    RootTaskRemoved,
    RootTaskSubmitted,
    StateChanged,
    StepReport,
)
from schemas.traceschema import TraceEvent
from services.arbitration_service import (
    can_acquire_needs,
    challenge,
    claimed_groups,
    compare_strength,
    find_push_target,
    held_for_ancestor,
    push_blockers,
    select_provider,
    watcher_order_key,
)
from services.condition_service import all_hold, describe_condition, eval_condition, validate_registry
from utils.director_config import MAX_CASCADE, get_trace_cap
from utils.enums import (
    BlockReason,
    ChallengeOutcome,
    ProviderKind,
    RunReason,
    RunState,
    TaskStatus,
    TraceKind,
)
from utils.exceptions import (
    CascadeLimitExceeded,
    DuplicateId,
    EmptyGroup,
    EngineAlreadyStarted,
    EngineNotStarted,
    EngineStopped,
    NotARootTask,
    RegistryInvalid,
    UndeclaredSubtaskType,
    UnknownStateVar,
    UnknownTaskType,
    UnknownUid,
)


class PushPlan(NamedTuple):
    """A Causing provider of ``target`` that would make ``condition`` true."""

    target: ProviderGroup
    provider: ProviderSpec
    condition: Condition


class Decision(NamedTuple):
    """What arbitration says should happen to one waiting task."""

    action: str  # "assign" | "push" | "block" | "noop"
    provider: Optional[ProviderSpec] = None
    reason: Optional[BlockReason] = None
    # set on a push, and on an assignment that enters the task's own group through a push
    plan: Optional[PushPlan] = None


class Director:
    """Owns a DirectorGraph and applies events to it."""

    def __init__(self, trace_cap: Optional[int] = None, max_cascade: int = MAX_CASCADE):
        self.graph = DirectorGraph()
        self._trace_cap = trace_cap if trace_cap is not None else get_trace_cap()
        self._max_cascade = max_cascade
        self._events: Deque[DirectorEvent] = deque()
        self._internal: Deque[ProviderRunRequested] = deque()
        self._lock = threading.Lock()
        self._providers: List[ProviderSpec] = []
        self._next_uid = 0
        self._tickets: List[RootTicket] = []
        # requester group -> graph signatures at which its required subtasks could not all run
        self._yielded: Dict[str, Set[Tuple]] = {}
        self._started = False
        self._stopped = False
        self._runs: List[str] = []

    # REGISTRATION
    def register_state(self, name: str, values, initial) -> None:
        """Declare a discrete state variable (labels in order, or a label->int map)."""
        if self._started:
            raise EngineAlreadyStarted("state variables must be registered before start()")
        self.graph.state.register(name, values, initial)

    def register_provider(self, spec: ProviderSpec, behaviour: Optional[Behaviour] = None) -> str:
        """
        Append a provider to its group in declaration order.

        Returns:
            str: the provider id, used as its reference in traces and snapshots.

        Raises:
            EngineAlreadyStarted: after start().
            DuplicateId: if the id is already registered.
            UnknownStateVar: if a When/Causing names an unregistered variable.
        """
        if self._started:
            raise EngineAlreadyStarted("providers cannot be registered after start()")
        if any(p.id == spec.id for p in self._providers):
            raise DuplicateId(f"provider id '{spec.id}' is already registered")
        for cond in [*spec.when, *spec.causing]:
            if not self.graph.state.is_registered(cond.state_var):
                raise UnknownStateVar(cond.state_var)

        group = self.graph.groups.setdefault(spec.group, ProviderGroup(task_type=spec.group))
        update = {"decl_index": len(group.providers)}
        if behaviour is not None:
            update["behaviour"] = behaviour
        registered = spec.model_copy(update=update)
        group.providers.append(registered)
        self._providers.append(registered)
        logger.debug(f"registered {registered.kind.value} provider {registered.id} for {registered.group}")
        return registered.id

    def start(self) -> None:
        """Validate the registry and open the engine for events."""
        if self._started:
            raise EngineAlreadyStarted("engine already started")
        report = validate_registry(self._providers, self.graph.state)
        if not report.ok:
            raise RegistryInvalid(report)
        self._started = True
        logger.info(f"director started with {len(self.graph.groups)} groups")

    def stop(self) -> None:
        self._stopped = True

    @property
    def started(self) -> bool:
        return self._started

    @property
    def providers(self) -> List[ProviderSpec]:
        return list(self._providers)

    # EVENT SUBMISSION
    def _require_started(self) -> None:
        if not self._started:
            raise EngineNotStarted("start() the engine before submitting events")
        if self._stopped:
            raise EngineStopped("engine has been stopped")

    def _enqueue(self, event: DirectorEvent) -> None:
        with self._lock:
            self._events.append(event)

    def submit_root_task(self, task_type: str, data: str = "", priority: int = 0,
                         optional: bool = False) -> RootTicket:
        """
        Request a task from outside any provider.

        Returns:
            RootTicket: handle for the submission. The task enters the graph,
            and gets its uid, when step() applies the event.
        """
        self._require_started()
        if task_type not in self.graph.groups:
            raise UnknownTaskType(task_type)
        with self._lock:
            ticket = RootTicket(ticket=len(self._tickets), task_type=task_type)
            self._tickets.append(ticket)
            self._events.append(RootTaskSubmitted(ticket=ticket.ticket, task_type=task_type, data=data,
                                                  priority=priority, optional=optional))
        return ticket

    def remove_root_task(self, root: Union[int, RootTicket]) -> None:
        """
        Flag a root task for removal, by uid or by the ticket its submission returned.

        A ticket whose submission is still queued is removed right after it is applied.
        """
        self._require_started()
        if isinstance(root, RootTicket):
            if root.uid is None:
                self._enqueue(RootTaskRemoved(ticket=root.ticket))
                return
            root = root.uid
        task = self.graph.tasks.get(root)
        if task is None:
            raise UnknownUid(f"no task with uid {root}")
        if not task.is_root:
            raise NotARootTask(f"task {root} is a subtask of '{task.parent}'")
        if not task.live:
            raise UnknownUid(f"task {root} is already retired")
        self._enqueue(RootTaskRemoved(uid=root))

    def state_update(self, state_var: str, value: Union[str, int]) -> None:
        self._require_started()
        resolved = self.graph.state.resolve(state_var, value)
        self._enqueue(StateChanged(state_var=state_var, value=resolved))

    def external_trigger(self, group: str, payload: Optional[str] = None) -> None:
        self._require_started()
        if group not in self.graph.groups:
            raise UnknownTaskType(group)
        self._enqueue(ExternalTrigger(group=group, payload=payload))

    def pending_events(self) -> int:
        with self._lock:
            return len(self._events)

    # STEPPING
    def step(self) -> StepReport:
        """
        Process exactly one queued external event and its whole cascade.

        Raises:
            EngineNotStarted / EngineStopped: when the engine is not accepting work.
            CascadeLimitExceeded: if the cascade does not settle.
        """
        self._require_started()
        with self._lock:
            event = self._events.popleft() if self._events else None
        if event is None:
            return StepReport()

        self.graph.step_counter += 1
        first_seq = self._next_seq()
        self._runs = []
        self._apply(event)
        self._settle()
        return StepReport(
            events_processed=1,
            providers_run=list(self._runs),
            trace=[e for e in self.graph.trace if e.seq >= first_seq],
        )

    def run_until_quiescent(self, max_steps: int) -> int:
        """Step until the queue is empty; returns the number of steps taken."""
        taken = 0
        while self.pending_events() and taken < max_steps:
            self.step()
            taken += 1
        return taken

    def _apply(self, event: DirectorEvent) -> None:
        if isinstance(event, RootTaskSubmitted):
            task = TaskInstance(
                uid=self._allocate_uid(),
                task_type=event.task_type,
                data=event.data,
                priority=event.priority,
                optional=event.optional,
                parent=ROOT,
            )
            self._tickets[event.ticket].uid = task.uid
            self.graph.tasks[task.uid] = task
            self.graph.root_tasks.append(task.uid)
            self._trace(TraceKind.TASK_REQUESTED, group=task.task_type, tasks=[task.uid],
                        by="root", priority=str(task.priority), optional=str(task.optional).lower())
            self._commit(task, self._decide(task))
        elif isinstance(event, RootTaskRemoved):
            uid = event.uid if event.ticket is None else self._tickets[event.ticket].uid
            task = self.graph.live_task(uid)
            if task is None:
                logger.debug(f"root task {uid} already gone")
                return
            self._retire(task.uid)
        elif isinstance(event, StateChanged):
            store = self.graph.state
            before = store.get(event.state_var)
            store.set(event.state_var, event.value)
            self._trace(TraceKind.STATE_CHANGED, var=event.state_var,
                        before=store.label_of(event.state_var, before),
                        after=store.label_of(event.state_var, event.value))
        elif isinstance(event, ExternalTrigger):
            group = self.graph.groups[event.group]
            if not group.active:
                self._trace(TraceKind.TRIGGER_SUPPRESSED, group=group.task_type, payload=event.payload or "")
                return
            group.triggers += 1
            self._run_active(group, RunReason.OTHER_TRIGGER, payload=event.payload)

    def _settle(self) -> None:
        for _ in range(self._max_cascade):
            changed = self._drain_internal()
            changed |= self._resolve_pushes()
            changed |= self._revalidate_active()
            changed |= self._rearbitrate_watchers()
            if not changed and not self._internal:
                return
        raise CascadeLimitExceeded(f"cascade did not settle within {self._max_cascade} passes")

    # PROVIDER INVOCATION
    def uses_info(self, group: str, subtask_type: str) -> UsesInfo:
        """Run state and done flag of the subtask ``group`` last requested of ``subtask_type``."""
        if group not in self.graph.groups:
            raise UnknownTaskType(group)
        grp = self.graph.groups[group]
        if subtask_type not in grp.declared_types():
            raise UndeclaredSubtaskType(f"group '{group}' does not declare '{subtask_type}' in Needs or Uses")
        return self._uses(grp, subtask_type)

    def _uses(self, group: ProviderGroup, subtask_type: str) -> UsesInfo:
        task = self.graph.live_task(group.subtasks.get(subtask_type))
        if task is None:
            run_state = RunState.NO_TASK
        elif task.status is TaskStatus.RUNNING:
            run_state = RunState.RUNNING
        else:
            run_state = RunState.QUEUED
        return UsesInfo(run_state=run_state, done=group.done_flags.get(subtask_type, False))

    def run_provider(self, group: ProviderGroup, spec: ProviderSpec, reason: RunReason,
                     payload: Optional[str] = None) -> SubtaskBundle:
        """
        Invoke one provider callback and return what it emitted.

        A callback that raises or returns something other than a bundle is
        recorded as CALLBACK_FAILURE and treated as IDLE. A callback that
        returns None emitted an empty bundle.
        """
        task = self.graph.live_task(group.assigned_task)
        context = ProviderContext(
            reason=reason,
            group=group.task_type,
            provider=spec.id,
            task_uid=task.uid if task else None,
            data=task.data if task else "",
            payload=payload,
            uses={t: self._uses(group, t) for t in group.declared_types()},
            state=self.graph.state.snapshot(),
            triggers=group.triggers,
        )
        self._runs.append(spec.id)
        self._trace(TraceKind.PROVIDER_RUN, group=group.task_type, provider=spec.id,
                    tasks=[task.uid] if task else [], reason=reason, provider_kind=spec.kind.value)
        logger.debug(f"run {spec.id} ({reason.value})")
        if spec.behaviour is None:
            return SubtaskBundle()
        try:
            emitted = spec.behaviour(context)
            if emitted is None:
                return SubtaskBundle()
            if not isinstance(emitted, SubtaskBundle):
                raise TypeError(f"expected SubtaskBundle, got {type(emitted).__name__}")
            return emitted
        except Exception as exc:  # pylint: disable=broad-except
            logger.warning(f"provider {spec.id} failed: {exc}")
            self._trace(TraceKind.CALLBACK_FAILURE, group=group.task_type, provider=spec.id,
                        tasks=[task.uid] if task else [], reason=reason,
                        error=f"{type(exc).__name__}: {exc}")
            return SubtaskBundle.idle()

    def _run_active(self, group: ProviderGroup, reason: RunReason, payload: Optional[str] = None) -> None:
        spec = group.current_provider()
        if spec is None:
            return
        if not all_hold(spec.when, self.graph.state):
            self._reselect(group)
            return
        self.reconcile_subtasks(group, self.run_provider(group, spec, reason, payload))

    # ARBITRATION
    def _decide(self, task: TaskInstance) -> Decision:
        group = self.graph.groups[task.task_type]
        if group.assigned_task == task.uid:
            return Decision("noop")
        holder = self.graph.live_task(group.assigned_task)
        if holder is not None:
            if held_for_ancestor(holder, task, self.graph):
                return Decision("block", reason=BlockReason.NEEDS_BLOCKED)
            if challenge(holder, task, self.graph) is not ChallengeOutcome.CHALLENGER_WINS:
                return Decision("block", reason=BlockReason.OUTRANKED)
        try:
            picked = select_provider(group, self.graph.state)
        except EmptyGroup:
            return Decision("block", reason=BlockReason.NO_PROVIDER)
        if isinstance(picked, NoneEligible):
            first = group.provider(picked.provider)
            plan = None
            if can_acquire_needs(first, task, self.graph):
                plan = self._plan_push(task, picked.unmet, first)
            if plan is None:
                return Decision("block", reason=BlockReason.WHEN_FAILED)
            if plan.target is group:
                return Decision("assign", provider=plan.provider, plan=plan)
            return Decision("push", provider=first, reason=BlockReason.WHEN_FAILED, plan=plan)
        if not can_acquire_needs(picked, task, self.graph):
            return Decision("block", reason=BlockReason.NEEDS_BLOCKED)
        return Decision("assign", provider=picked)

    def _commit(self, task: TaskInstance, decision: Decision) -> bool:
        """Act on a decision; True when the graph's assignments changed."""
        group = self.graph.groups[task.task_type]
        if decision.action == "assign":
            if decision.plan is not None:
                return self._apply_push(task, decision.plan)
            self._take(task, decision.provider)
            return True
        if decision.action == "push":
            self._watch(group, task, decision.reason)
            return self._apply_push(task, decision.plan)
        if decision.action == "block":
            self._watch(group, task, decision.reason)
        return False

    def _take(self, task: TaskInstance, spec: ProviderSpec, reason: RunReason = RunReason.NEW_TASK,
              push: Optional[PushRecord] = None) -> None:
        """Evict whatever stands between ``task`` and its group, then hand it control."""
        group = self.graph.groups[task.task_type]
        evictions = []
        for need in spec.needs:
            needed = self.graph.groups[need]
            holder = self.graph.live_task(needed.assigned_task)
            if holder is not None and holder.parent != group.task_type:
                evictions.append((needed, holder))
        incumbent = self.graph.live_task(group.assigned_task)
        if incumbent is not None and incumbent.uid != task.uid:
            evictions.append((group, incumbent))

        for needed, holder in evictions:
            self._note_blocked(needed, holder, BlockReason.EVICTED)
        for needed, holder in evictions:
            if self.graph.live_task(holder.uid) is None or needed.assigned_task != holder.uid:
                continue
            requester = self.graph.parent_group(holder)
            requester_spec = requester.current_provider() if requester is not None else None
            if requester_spec is not None and needed is not group and needed.task_type in requester_spec.needs:
                self._release(requester, requeue=True, reason=BlockReason.NEEDS_LOST)
            else:
                self._release(needed, requeue=True, reason=BlockReason.EVICTED)
        if self.graph.live_task(task.uid) is None:
            logger.warning(f"task {task.uid} was retired while evicting for {group.task_type}")
            return
        for needed, holder in evictions:
            self._trace(TraceKind.CONTROL_TRANSFERRED, group=needed.task_type, tasks=[holder.uid, task.uid],
                        to_group=group.task_type)
            logger.info(f"{needed.task_type}: control moves from task {holder.uid} to task {task.uid}")

        self._acquire(group, task, spec, reason, push)

    def _acquire(self, group: ProviderGroup, task: TaskInstance, spec: ProviderSpec,
                 reason: RunReason, push: Optional[PushRecord]) -> None:
        if task.uid in group.watchers:
            group.watchers.remove(task.uid)
        task.move_to(TaskStatus.RUNNING)
        task.blocked_reason = None
        group.assigned_task = task.uid
        group.active_provider = spec.id
        group.pushed_by = push
        group.triggers = 0
        group.started = True
        self._sort_watchers(group)
        self._trace(TraceKind.TASK_ASSIGNED, group=group.task_type, provider=spec.id, tasks=[task.uid])
        for start in group.of_kind(ProviderKind.START):
            self.run_provider(group, start, RunReason.STARTED)
        self.reconcile_subtasks(group, self.run_provider(group, spec, reason))

    def _release(self, group: ProviderGroup, requeue: bool, reason: Optional[BlockReason] = None) -> None:
        """Group loses control: subtree torn down leaves first, Stop runs, task requeued or left to the caller."""
        task = self.graph.live_task(group.assigned_task)
        self._drop_subtasks(group)
        if group.started:
            group.started = False
            for stop in group.of_kind(ProviderKind.STOP):
                self.run_provider(group, stop, RunReason.STOPPED)
        group.assigned_task = None
        group.active_provider = None
        group.pushed_by = None
        group.triggers = 0
        self._yielded.pop(group.task_type, None)
        self._sort_watchers(group)
        if task is not None and requeue:
            task.move_to(TaskStatus.QUEUED)
            self._watch(group, task, reason or BlockReason.EVICTED)

    def _drop_subtasks(self, group: ProviderGroup) -> None:
        for task_type in reversed(list(group.subtasks)):
            self._retire(group.subtasks[task_type])
        group.subtasks.clear()
        group.done_flags.clear()
        group.last_subtasks = SubtaskBundle()

    def _retire(self, uid: int) -> None:
        task = self.graph.live_task(uid)
        if task is None:
            return
        group = self.graph.groups[task.task_type]
        if group.assigned_task == uid:
            self._release(group, requeue=False)
        elif uid in group.watchers:
            group.watchers.remove(uid)
        task.move_to(TaskStatus.RETIRED)
        self._trace(TraceKind.TASK_RETIRED, group=task.task_type, tasks=[uid])
        if task.is_root and uid in self.graph.root_tasks:
            self.graph.root_tasks.remove(uid)
        parent = self.graph.parent_group(task)
        if parent is not None and parent.subtasks.get(task.task_type) == uid:
            del parent.subtasks[task.task_type]
            parent.done_flags.pop(task.task_type, None)

    def _watch(self, group: ProviderGroup, task: TaskInstance, reason: BlockReason) -> None:
        if task.uid not in group.watchers:
            group.watchers.append(task.uid)
            self._sort_watchers(group)
        self._note_blocked(group, task, reason)

    def _sort_watchers(self, group: ProviderGroup) -> None:
        group.watchers.sort(key=lambda uid: watcher_order_key(self.graph.tasks[uid], group, self.graph))

    def _note_blocked(self, group: ProviderGroup, task: TaskInstance, reason: BlockReason) -> None:
        if task.blocked_reason is reason:
            return
        task.blocked_reason = reason
        self._trace(TraceKind.TASK_BLOCKED, group=group.task_type, tasks=[task.uid], reason_blocked=reason.value)

    # PUSHING
    def request_push(self, task: TaskInstance, unmet: Sequence[Condition], spec: ProviderSpec) -> bool:
        """
        Redirect a group to a Causing provider so ``task``'s When can come true.

        Unmet conditions are tried one at a time; the first with a push target
        wins. Returns True when a push was applied.
        """
        plan = self._plan_push(task, unmet, spec)
        return plan is not None and self._apply_push(task, plan)

    def _plan_push(self, task: TaskInstance, unmet: Sequence[Condition], spec: ProviderSpec) -> Optional[PushPlan]:
        blockers = push_blockers(spec, task, self.graph)
        for cond in unmet:
            hit = find_push_target(cond, blockers, self.graph)
            if hit is None:
                continue
            target, causing = hit
            if target.task_type == task.task_type:
                if target.assigned_task == task.uid:
                    return None
            elif not target.active:
                continue
            elif target.pushed_by is not None:
                if target.pushed_by.pusher == task.uid:
                    # already under way
                    return PushPlan(target, causing, cond)
                continue
            if not can_acquire_needs(causing, task, self.graph):
                continue
            return PushPlan(target, causing, cond)
        return None

    def _apply_push(self, task: TaskInstance, plan: PushPlan) -> bool:
        target = plan.target
        if target.pushed_by is not None and target.pushed_by.pusher == task.uid:
            return False
        record = PushRecord(pusher=task.uid, condition=plan.condition, provider=plan.provider.id)
        self._trace(TraceKind.GROUP_PUSHED, group=target.task_type, provider=plan.provider.id,
                    tasks=[task.uid], condition=describe_condition(plan.condition, self.graph.state))
        logger.info(f"{target.task_type} pushed to {plan.provider.id} for task {task.uid}")
        if target.task_type == task.task_type:
            self._take(task, plan.provider, reason=RunReason.PUSHED, push=record)
            return True
        target.pushed_by = record
        target.active_provider = plan.provider.id
        self.reconcile_subtasks(target, self.run_provider(target, plan.provider, RunReason.PUSHED))
        return True

    def _resolve_pushes(self) -> bool:
        changed = False
        for group in list(self.graph.groups.values()):
            record = group.pushed_by
            if record is None:
                continue
            pusher = self.graph.live_task(record.pusher)
            own_group = record.pusher == group.assigned_task
            if not group.active:
                group.pushed_by = None
                changed = True
            elif pusher is None or (not own_group and pusher.status is not TaskStatus.QUEUED):
                group.pushed_by = None
                self._reselect(group)
                changed = True
            elif eval_condition(record.condition, self.graph.state):
                group.pushed_by = None
                if own_group:
                    self._reselect(group)
                else:
                    self._offer(pusher)
                    if group.active and group.pushed_by is None:
                        self._reselect(group)
                changed = True
        return changed

    # RE-EVALUATION
    def _reselect(self, group: ProviderGroup) -> None:
        task = self.graph.live_task(group.assigned_task)
        if task is None:
            return
        picked = select_provider(group, self.graph.state)
        if isinstance(picked, NoneEligible):
            self._release(group, requeue=True, reason=BlockReason.WHEN_FAILED)
            return
        if not can_acquire_needs(picked, task, self.graph):
            self._release(group, requeue=True, reason=BlockReason.NEEDS_BLOCKED)
            return
        if picked.id == group.active_provider:
            return
        group.active_provider = picked.id
        self.reconcile_subtasks(group, self.run_provider(group, picked, RunReason.NEW_TASK))

    def _revalidate_active(self) -> bool:
        changed = False
        for group in list(self.graph.groups.values()):
            spec = group.current_provider()
            if spec is None or all_hold(spec.when, self.graph.state):
                continue
            group.pushed_by = None
            self._reselect(group)
            changed = True
        return changed

    def _drain_internal(self) -> bool:
        changed = False
        handled = 0
        while self._internal:
            handled += 1
            if handled > self._max_cascade:
                self._internal.clear()
                raise CascadeLimitExceeded(f"more than {self._max_cascade} internal runs in one step")
            event = self._internal.popleft()
            group = self.graph.groups[event.group]
            if group.active:
                self._run_active(group, event.reason)
                changed = True
        return changed

    def _offer(self, task: TaskInstance) -> bool:
        """Re-arbitrate ``task`` together with its siblings (all-or-nothing applies)."""
        if task.is_root or task.optional:
            return self._commit(task, self._decide(task))
        parent = self.graph.parent_group(task)
        if parent is None or not parent.active:
            return False
        return self._arbitrate_subtasks(parent)

    def _rearbitrate_watchers(self) -> bool:
        waiting = [
            t for t in self.graph.tasks.values()
            if t.status is TaskStatus.QUEUED and (t.is_root or self.graph.groups[t.parent].active)
        ]
        waiting.sort(key=cmp_to_key(lambda a, b: compare_strength(a, b, self.graph)))
        changed = False
        offered = set()
        for task in waiting:
            if task.status is not TaskStatus.QUEUED:
                continue
            if not task.is_root and not task.optional:
                if task.parent in offered:
                    continue
                offered.add(task.parent)
            changed |= self._offer(task)
        return changed

    # SUBTASKS
    def reconcile_subtasks(self, group: ProviderGroup, bundle: SubtaskBundle) -> None:
        """
        Apply a provider's emitted bundle to its group's subtask set.

        IDLE keeps everything. DONE alone keeps the subtasks and signals the
        parent. Otherwise the requests replace the previous set: dropped types
        are retired, repeated types are updated in place, new types enter
        arbitration, then DONE (if present) is signalled.
        """
        if not group.active:
            return
        if bundle.is_idle:
            self._trace(TraceKind.IDLE_EMITTED, group=group.task_type, provider=group.active_provider,
                        tasks=[group.assigned_task])
            return
        requests = bundle.task_requests
        if bundle.is_done and not requests:
            self._signal_done(group)
            return

        wanted = {r.task_type for r in requests}
        for task_type in reversed(list(group.subtasks)):
            if task_type not in wanted:
                self._retire(group.subtasks[task_type])

        for request in requests:
            existing = self.graph.live_task(group.subtasks.get(request.task_type))
            if existing is not None:
                data_changed = existing.data != request.data
                existing.data = request.data
                existing.priority = request.priority
                existing.optional = request.optional
                if data_changed and existing.status is TaskStatus.RUNNING:
                    self._internal.append(ProviderRunRequested(group=existing.task_type, reason=RunReason.NEW_TASK))
            else:
                if request.task_type not in self.graph.groups:
                    raise UnknownTaskType(request.task_type)
                task = TaskInstance(
                    uid=self._allocate_uid(),
                    task_type=request.task_type,
                    data=request.data,
                    priority=request.priority,
                    optional=request.optional,
                    parent=group.task_type,
                )
                self.graph.tasks[task.uid] = task
                group.subtasks[request.task_type] = task.uid
                self._trace(TraceKind.TASK_REQUESTED, group=task.task_type, tasks=[task.uid],
                            by=group.task_type, priority=str(task.priority), optional=str(task.optional).lower())
            group.done_flags[request.task_type] = False

        group.last_subtasks = bundle
        self._arbitrate_subtasks(group)
        if bundle.is_done and group.active:
            self._signal_done(group)

    def _arbitrate_subtasks(self, group: ProviderGroup) -> bool:
        """All-or-nothing for required subtasks, independent attempts for optional ones."""
        if not group.active:
            return False
        changed = False
        tasks = [t for t in (self.graph.live_task(uid) for uid in list(group.subtasks.values())) if t]
        required = [t for t in tasks if not t.optional]
        if any(t.status is TaskStatus.QUEUED for t in required):
            changed |= self._arbitrate_required(group, required)

        for task in tasks:
            if task.optional and task.live and task.status is TaskStatus.QUEUED and group.active:
                changed |= self._commit(task, self._decide(task))
        return changed

    def _arbitrate_required(self, group: ProviderGroup, required: List[TaskInstance]) -> bool:
        """
        Run every required subtask of ``group`` or none of them.

        The whole set is decided before anything is committed. A set that
        still ends up partly running is yielded, and is not offered again
        until the graph looks different from when it was tried.
        """
        pending = [t for t in required if t.status is TaskStatus.QUEUED]
        decisions = {t.uid: self._decide(t) for t in pending}
        signature = self._signature()
        runnable = (
            all(d.action == "assign" for d in decisions.values())
            and not self._claims_overlap(required, decisions)
            and signature not in self._yielded.get(group.task_type, ())
        )
        changed = False
        if runnable:
            for task in pending:
                if task.status is TaskStatus.QUEUED:
                    changed |= self._commit(task, self._decide(task))
            if not group.active or all(t.status is TaskStatus.RUNNING for t in required if t.live):
                self._yielded.pop(group.task_type, None)
                return changed
            self._yielded.setdefault(group.task_type, set()).add(signature)
            logger.debug(f"{group.task_type}: required subtasks could not all run, yielding")
        else:
            for task in pending:
                decision = decisions[task.uid]
                if decision.action == "assign":
                    self._watch(self.graph.groups[task.task_type], task, BlockReason.ALL_OR_NOTHING)
                else:
                    changed |= self._commit(task, decision)
        return self._yield_required(group, required) or changed

    def _claims_overlap(self, required: List[TaskInstance], decisions: Dict[int, Decision]) -> bool:
        """True when two required siblings would need the same group."""
        owners: Dict[str, int] = {}
        for task in required:
            if task.status is TaskStatus.RUNNING:
                spec = self.graph.groups[task.task_type].current_provider()
            else:
                spec = decisions[task.uid].provider if task.uid in decisions else None
            if spec is None:
                continue
            for name in claimed_groups(spec, self.graph):
                if owners.setdefault(name, task.uid) != task.uid:
                    return True
        return False

    def _yield_required(self, group: ProviderGroup, required: List[TaskInstance]) -> bool:
        changed = False
        for task in required:
            if task.live and task.status is TaskStatus.RUNNING and group.active:
                self._release(self.graph.groups[task.task_type], requeue=True, reason=BlockReason.ALL_OR_NOTHING)
                changed = True
        return changed

    def _signature(self) -> Tuple:
        """Everything arbitration looks at, described without uids."""

        def shape(uid: Optional[int]) -> Optional[Tuple]:
            task = self.graph.live_task(uid)
            if task is None:
                return None
            return task.task_type, task.parent, task.priority, task.optional, task.data, task.status.value

        groups = tuple(
            (
                group.active_provider,
                shape(group.assigned_task),
                group.pushed_by.provider if group.pushed_by else None,
                group.triggers,
                tuple(sorted(group.done_flags.items())),
                tuple(shape(uid) for uid in group.watchers),
            )
            for group in self.graph.groups.values()
        )
        return tuple(self.graph.state.snapshot().items()), groups

    def _signal_done(self, group: ProviderGroup) -> None:
        task = self.graph.live_task(group.assigned_task)
        self._trace(TraceKind.DONE_EMITTED, group=group.task_type, provider=group.active_provider,
                    tasks=[task.uid] if task else [])
        if task is None:
            return
        if task.is_root:
            self._retire(task.uid)
            return
        parent = self.graph.groups[task.parent]
        parent.done_flags[group.task_type] = True
        self._internal.append(ProviderRunRequested(group=parent.task_type, reason=RunReason.SUBTASK_DONE))

    # TRACE
    def _next_seq(self) -> int:
        return self.graph.trace_offset + len(self.graph.trace)

    def _allocate_uid(self) -> int:
        uid = self._next_uid
        self._next_uid += 1
        return uid

    def _trace(self, kind: TraceKind, group: Optional[str] = None, provider: Optional[str] = None,
               tasks: Sequence[Optional[int]] = (), reason: Optional[RunReason] = None, **detail: str) -> None:
        event = TraceEvent(
            seq=self._next_seq(),
            step=self.graph.step_counter,
            kind=kind,
            group=group,
            provider=provider,
            tasks=[uid for uid in tasks if uid is not None],
            reason=reason,
            detail={key: str(value) for key, value in detail.items()},
        )
        self.graph.trace.append(event)
        if self._trace_cap and len(self.graph.trace) > self._trace_cap:
            del self.graph.trace[0]
            self.graph.trace_offset += 1
