"""
Arbitration decisions over a DirectorGraph.

Everything here is a pure function of the graph: which provider a group
should run, whether a challenger outranks the task holding a group, whether
a provider can take all of its Needs, and which group a blocked task should
push. Nothing is mutated; services/director_service.py acts on the answers.

Priority is decided at the closest common ancestor of two tasks. A task's
lineage is the chain task -> task served by its parent group -> ... -> a
root task. A group that has been pushed is walked through its pusher
instead of its own task, so the subtree it runs while preparing the soft
transition carries the pusher's branch priority.
"""

from typing import List, NamedTuple, Optional, Set, Tuple, Union

from models.models import (
    ROOT,
    AncestorRef,
    BranchDescriptor,
    Condition,
    DirectorGraph,
    NoneEligible,
    ProviderGroup,
    ProviderSpec,
    StateStore,
    TaskInstance,
)
from services.condition_service import all_hold, assertion_satisfies, unmet_conditions
from utils.enums import ChallengeOutcome, ProviderKind
from utils.exceptions import DetachedTask, EmptyGroup, NotAnAncestor, UnknownNeed


class Link(NamedTuple):
    """One task on a lineage, reduced to what priority comparison needs."""

    uid: Optional[int]
    priority: int
    optional: bool
    parent: AncestorRef


def _link(task: TaskInstance) -> Link:
    return Link(task.uid, task.priority, task.optional, task.parent)


def _plain_refs(task: TaskInstance, g: DirectorGraph) -> Set[AncestorRef]:
    """Parent refs walking only assigned tasks (no push substitution)."""
    refs: Set[AncestorRef] = set()
    current: Optional[TaskInstance] = task
    while current is not None and current.parent is not ROOT and current.parent not in refs:
        refs.add(current.parent)
        group = g.groups.get(current.parent)
        current = g.live_task(group.assigned_task) if group else None
    return refs


def acting_task(group: ProviderGroup, g: DirectorGraph) -> Optional[TaskInstance]:
    """The task a group's subtasks answer to: its pusher while pushed, else its own task."""
    record = group.pushed_by
    if record is not None and record.pusher != group.assigned_task:
        pusher = g.live_task(record.pusher)
        if pusher is not None and group.task_type not in _plain_refs(pusher, g):
            return pusher
    return g.live_task(group.assigned_task)


def lineage(task: TaskInstance, g: DirectorGraph) -> List[Link]:
    """
    Walk a task up to its root task.

    Raises:
        DetachedTask: if a parent group is unknown, serves no task, or the walk loops.
    """
    links = [_link(task)]
    visited: Set[str] = set()
    current = task
    while current.parent is not ROOT:
        group = g.groups.get(current.parent)
        if group is None or group.task_type in visited:
            raise DetachedTask(f"task {task.uid} has a broken parent chain at '{current.parent}'")
        visited.add(group.task_type)
        nxt = acting_task(group, g)
        if nxt is None:
            raise DetachedTask(f"group '{group.task_type}' above task {task.uid} serves no task")
        links.append(_link(nxt))
        current = nxt
    return links


def _common_ref(a: List[Link], b: List[Link]) -> AncestorRef:
    b_refs = {link.parent for link in b}
    for link in a:
        if link.parent in b_refs:
            return link.parent
    return ROOT


def _descriptor(links: List[Link], ancestor: AncestorRef) -> BranchDescriptor:
    for i, link in enumerate(links):
        if link.parent == ancestor:
            return BranchDescriptor(
                branch_priority=link.priority,
                any_optional=any(l.optional for l in links[: i + 1]),
            )
    raise NotAnAncestor(f"'{ancestor}' is not on the lineage of task {links[0].uid}")


def challenge_lineages(incumbent: List[Link], challenger: List[Link]) -> ChallengeOutcome:
    if incumbent[0].uid is not None and incumbent[0].uid == challenger[0].uid:
        return ChallengeOutcome.INCUMBENT_HOLDS
    ancestor = _common_ref(incumbent, challenger)
    held = _descriptor(incumbent, ancestor)
    wanted = _descriptor(challenger, ancestor)
    if held.any_optional != wanted.any_optional:
        return ChallengeOutcome.CHALLENGER_WINS if held.any_optional else ChallengeOutcome.INCUMBENT_HOLDS
    if wanted.branch_priority > held.branch_priority:
        return ChallengeOutcome.CHALLENGER_WINS
    return ChallengeOutcome.INCUMBENT_HOLDS


def closest_common_ancestor(a: TaskInstance, b: TaskInstance, g: DirectorGraph) -> AncestorRef:
    """Nearest group on both lineages, or ROOT (None) when only the root is shared."""
    return _common_ref(lineage(a, g), lineage(b, g))


def branch_descriptor(t: TaskInstance, ancestor: AncestorRef, g: DirectorGraph) -> BranchDescriptor:
    return _descriptor(lineage(t, g), ancestor)


def challenge(incumbent: TaskInstance, challenger: TaskInstance, g: DirectorGraph) -> ChallengeOutcome:
    """
    Decide whether ``challenger`` may take what ``incumbent`` holds.

    Optional parentage loses to non-optional parentage outright; otherwise
    the higher branch priority at the closest common ancestor wins and a tie
    keeps the incumbent.
    """
    if incumbent.uid == challenger.uid:
        return ChallengeOutcome.INCUMBENT_HOLDS
    return challenge_lineages(lineage(incumbent, g), lineage(challenger, g))


def select_provider(group: ProviderGroup, s: StateStore) -> Union[ProviderSpec, NoneEligible]:
    """
    Pick the first Provide provider (declaration order) whose When conditions all hold.

    Providers with a Causing are transition providers: they are only entered
    through a push, unless the group has no other Provide provider. Returns
    NoneEligible carrying the unmet conditions of the first declared ordinary
    provider when nothing is eligible.

    Raises:
        EmptyGroup: if the group has no Provide provider.
    """
    candidates = sorted(group.of_kind(ProviderKind.PROVIDE), key=lambda p: p.decl_index)
    if not candidates:
        raise EmptyGroup(f"group '{group.task_type}' has no Provide provider")
    candidates = [p for p in candidates if not p.causing] or candidates
    for spec in candidates:
        if all_hold(spec.when, s):
            return spec
    first = candidates[0]
    return NoneEligible(unmet=unmet_conditions(first.when, s), provider=first.id)


def _needs_acquirable(p: ProviderSpec, chain: List[Link], g: DirectorGraph, visited: Set[str],
                      ancestry: Set[str]) -> bool:
    requester = p.group
    wanted = [Link(None, 0, False, requester), *chain]
    for need in p.needs:
        group = g.groups.get(need)
        if group is None:
            raise UnknownNeed(f"provider '{p.id}' needs unregistered task type '{need}'")
        holder = g.live_task(group.assigned_task)
        if holder is not None and holder.parent != requester:
            if _held_for_ancestor(holder, ancestry, g):
                return False
            if challenge_lineages(lineage(holder, g), wanted) is not ChallengeOutcome.CHALLENGER_WINS:
                return False
        if need in visited:
            continue
        downstream = _downstream_provider(group, holder, g)
        if downstream is not None and downstream.needs:
            if not _needs_acquirable(downstream, wanted, g, visited | {need}, ancestry | {requester}):
                return False
    return True


def _downstream_provider(group: ProviderGroup, holder: Optional[TaskInstance],
                         g: DirectorGraph) -> Optional[ProviderSpec]:
    """The provider a needed group runs now, or would run once taken."""
    if holder is not None:
        return group.current_provider()
    try:
        picked = select_provider(group, g.state)
    except EmptyGroup:
        return None
    return picked if isinstance(picked, ProviderSpec) else None


def _held_for_ancestor(holder: TaskInstance, ancestry: Set[str], g: DirectorGraph) -> bool:
    if holder.parent is ROOT or holder.parent not in ancestry:
        return False
    spec = g.groups[holder.parent].current_provider()
    return spec is not None and holder.task_type in spec.needs


def held_for_ancestor(holder: TaskInstance, challenger: TaskInstance, g: DirectorGraph) -> bool:
    """
    True when ``holder`` keeps a Needs of a group above ``challenger``.

    Taking that group would cost the requester its control and tear down the
    subtree ``challenger`` belongs to, so such a holder is never evicted by it.
    """
    return _held_for_ancestor(holder, _plain_refs(challenger, g), g)


def can_acquire_needs(p: ProviderSpec, t: TaskInstance, g: DirectorGraph) -> bool:
    """
    All-or-nothing check that ``t``, run by ``p``, could take every group ``p`` Needs.

    A needed group is acquirable when it is free, already held by a subtask
    of ``p``'s own group, or held by a task ``t``'s request would outrank. A
    group held to satisfy the Needs of a group above ``t`` is never acquirable.
    The check recurses through each needed group's provider Needs.

    Raises:
        UnknownNeed: if a Needs entry has no registered group.
    """
    return _needs_acquirable(p, lineage(t, g), g, {p.group}, _plain_refs(t, g))


def claimed_groups(p: ProviderSpec, g: DirectorGraph) -> Set[str]:
    """Groups a task run by ``p`` would hold: ``p``'s own group plus its Needs, transitively."""
    claimed = {p.group}
    pending = [p]
    while pending:
        spec = pending.pop()
        for need in spec.needs:
            if need in claimed or need not in g.groups:
                continue
            claimed.add(need)
            group = g.groups[need]
            downstream = _downstream_provider(group, g.live_task(group.assigned_task), g)
            if downstream is not None:
                pending.append(downstream)
    return claimed


def push_blockers(p: ProviderSpec, t: TaskInstance, g: DirectorGraph) -> List[ProviderGroup]:
    """Groups to scan for a push: holders of ``p``'s Needs first, then ``t``'s own group."""
    ordered: List[ProviderGroup] = []
    for need in p.needs:
        group = g.groups.get(need)
        holder = g.live_task(group.assigned_task) if group else None
        if holder is None or holder.parent is ROOT or holder.parent == p.group:
            continue
        holding = g.groups[holder.parent]
        if holding not in ordered:
            ordered.append(holding)
    own = g.groups[t.task_type]
    if own not in ordered:
        ordered.append(own)
    return ordered


def find_push_target(
    unmet: Condition, blockers: List[ProviderGroup], g: DirectorGraph
) -> Optional[Tuple[ProviderGroup, ProviderSpec]]:
    """
    First Provide provider, scanning ``blockers`` in order then declaration
    order, whose Causing guarantees ``unmet`` and whose own When holds.
    Returns None when there is no such provider.
    """
    for group in blockers:
        for spec in sorted(group.of_kind(ProviderKind.PROVIDE), key=lambda p: p.decl_index):
            if not spec.causing or not all_hold(spec.when, g.state):
                continue
            if any(assertion_satisfies(a, unmet, g.state) for a in spec.causing):
                return group, spec
    return None


def watcher_order_key(task: TaskInstance, group: ProviderGroup, g: DirectorGraph) -> Tuple[int, int]:
    """
    Watcher queues sort by branch priority (desc), then uid.

    The branch priority is taken at the closest common ancestor with the
    group's current holder, or at the root while the group is free.
    """
    holder = g.live_task(group.assigned_task)
    try:
        links = lineage(task, g)
        ancestor = _common_ref(links, lineage(holder, g)) if holder is not None else ROOT
        priority = _descriptor(links, ancestor).branch_priority
    except (DetachedTask, NotAnAncestor):
        priority = task.priority
    return (-priority, task.uid)


def compare_strength(a: TaskInstance, b: TaskInstance, g: DirectorGraph) -> int:
    """
    Sort comparator, strongest first: -1 when ``a`` would beat ``b``, 1 when
    ``b`` would beat ``a``, otherwise by uid. Used to offer waiting tasks in
    an order that avoids handing a resource to a task that is about to lose it.
    """
    try:
        la, lb = lineage(a, g), lineage(b, g)
    except DetachedTask:
        return (a.uid > b.uid) - (a.uid < b.uid)
    if challenge_lineages(lb, la) is ChallengeOutcome.CHALLENGER_WINS:
        return -1
    if challenge_lineages(la, lb) is ChallengeOutcome.CHALLENGER_WINS:
        return 1
    return (a.uid > b.uid) - (a.uid < b.uid)
