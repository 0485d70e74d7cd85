import itertools
from concurrent.futures import ThreadPoolExecutor

import pytest

from models.models import Condition, ProviderSpec, SubtaskBundle, UsesInfo
from schemas.eventschema import StepReport
from services.inspection_service import check_invariants, snapshot
from tests.conftest import Rig, req
from utils.enums import BlockReason, Comparator, ProviderKind, RunReason, RunState, TaskStatus, TraceKind
from utils.exceptions import (
    CascadeLimitExceeded,
    DuplicateId,
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

START, STOP = ProviderKind.START, ProviderKind.STOP


def of_kind(director, kind):
    return [e for e in director.graph.trace if e.kind is kind]


# REGISTRATION
def test_providers_keep_declaration_order(rig):
    rig.provider("Striker", "striker_playing").provider("Striker", "striker_ready")
    assert [p.decl_index for p in rig.director.graph.groups["Striker"].providers] == [0, 1]


def test_duplicate_provider_id(rig):
    rig.provider("Walk")
    with pytest.raises(DuplicateId):
        rig.provider("Walk")


def test_condition_on_unregistered_state(rig):
    when = [Condition(state_var="stability", comparator=Comparator.EQ, value=0)]
    with pytest.raises(UnknownStateVar):
        rig.director.register_provider(ProviderSpec(id="kick", group="Kick", when=when))


def test_start_rejects_invalid_registry(rig):
    rig.provider("Walk", kind=STOP)
    with pytest.raises(RegistryInvalid) as exc:
        rig.start()
    assert "StopWithoutStart" in exc.value.report.kinds()


def test_engine_lifecycle_guards(rig):
    rig.provider("Walk")
    with pytest.raises(EngineNotStarted):
        rig.director.submit_root_task("Walk")
    director = rig.start()
    with pytest.raises(EngineAlreadyStarted):
        rig.provider("Kick")
    director.stop()
    with pytest.raises(EngineStopped):
        director.step()


# STEPPING
def test_empty_queue_step_is_a_noop(rig):
    director = rig.provider("Walk").start()
    assert director.step() == StepReport()
    assert director.graph.step_counter == 0
    assert director.graph.trace == []


def test_start_runs_before_provide(rig):
    director = rig.provider("Striker", kind=START).provider("Striker").start()
    director.submit_root_task("Striker", priority=1)
    report = director.step()
    assert report.events_processed == 1
    assert report.providers_run == ["striker_start", "striker"]
    assert [e.kind for e in report.trace] == [
        TraceKind.TASK_REQUESTED, TraceKind.TASK_ASSIGNED, TraceKind.PROVIDER_RUN, TraceKind.PROVIDER_RUN,
    ]


def test_provider_runs_record_their_kind(rig):
    director = rig.provider("Walk", kind=START).provider("Walk").start()
    director.submit_root_task("Walk")
    report = director.step()
    runs = [e for e in report.trace if e.kind is TraceKind.PROVIDER_RUN]
    assert [(e.provider, e.reason, e.detail) for e in runs] == [
        ("walk_start", RunReason.STARTED, {"provider_kind": "start"}),
        ("walk", RunReason.NEW_TASK, {"provider_kind": "provide"}),
    ]


def test_uids_follow_creation_order(rig):
    director = rig.provider("Walk", emit=[req("Legs", 1)]).provider("Legs").start()
    first, second = director.submit_root_task("Walk"), director.submit_root_task("Walk")
    assert (first.ticket, second.ticket) == (0, 1)
    assert first.uid is None and director.pending_events() == 2
    rig.settle()
    assert (first.uid, second.uid) == (0, 2)
    assert director.graph.task(1).task_type == "Legs"
    assert [e.tasks for e in of_kind(director, TraceKind.TASK_REQUESTED)] == [[0], [1], [2]]


@pytest.mark.parametrize("priorities", [(3, 5), (5, 3)])
def test_higher_root_priority_wins_in_either_order(rig, priorities):
    director = rig.provider("Legs").start()
    for priority in priorities:
        director.submit_root_task("Legs", priority=priority)
    rig.settle()
    winner = priorities.index(5)
    group = director.graph.groups["Legs"]
    assert group.assigned_task == winner
    assert group.watchers == [1 - winner]
    assert director.graph.task(1 - winner).blocked_reason is BlockReason.OUTRANKED


def test_remove_root_tears_down_with_stop(rig):
    director = rig.provider("Walk", kind=START).provider("Walk").provider("Walk", kind=STOP).start()
    ticket = director.submit_root_task("Walk")
    rig.settle()
    director.remove_root_task(ticket)
    rig.settle()
    assert rig.reasons("walk_stop") == [RunReason.STOPPED]
    assert director.graph.root_tasks == []
    assert director.graph.task(ticket.uid).status is TaskStatus.RETIRED
    assert not director.graph.groups["Walk"].active
    with pytest.raises(UnknownUid):
        director.remove_root_task(ticket)
    with pytest.raises(UnknownUid):
        director.remove_root_task(ticket.uid)


def test_remove_root_before_it_was_stepped(rig):
    director = rig.provider("Walk").start()
    ticket = director.submit_root_task("Walk")
    director.remove_root_task(ticket)
    rig.settle()
    assert ticket.uid == 0
    assert director.graph.root_tasks == []
    assert [e.tasks for e in of_kind(director, TraceKind.TASK_RETIRED)] == [[0]]


def test_remove_rejects_subtasks_and_unknown_uids(rig):
    director = rig.provider("Walk", emit=[req("LeftLeg", 1)]).provider("LeftLeg").start()
    director.submit_root_task("Walk")
    rig.settle()
    with pytest.raises(NotARootTask):
        director.remove_root_task(1)
    with pytest.raises(UnknownUid):
        director.remove_root_task(99)


# SUBTASKS
def test_optional_subtask_waits_while_required_runs(rig):
    rig.provider("Wave", emit=[req("Arms", 1)])
    rig.provider("Walk", emit=[req("Legs", 1), req("Arms", optional=True)])
    director = rig.provider("Arms").provider("Legs").start()
    wave = director.submit_root_task("Wave", priority=5)
    director.submit_root_task("Walk", priority=1)
    rig.settle()
    groups = director.graph.groups
    assert groups["Legs"].assigned_task == 3
    assert groups["Arms"].assigned_task == 1
    assert groups["Arms"].watchers == [4]
    assert director.graph.task(4).blocked_reason is BlockReason.OUTRANKED

    director.remove_root_task(wave)
    rig.settle()
    assert groups["Arms"].assigned_task == 4
    assert groups["Walk"].assigned_task == 2


def test_one_blocked_required_subtask_blocks_both(rig):
    rig.provider("Hold", emit=[req("RightArm", 1)])
    rig.provider("Wave", emit=[req("LeftArm", 1), req("RightArm", 1)])
    director = rig.provider("LeftArm").provider("RightArm").start()
    director.submit_root_task("Hold", priority=5)
    director.submit_root_task("Wave", priority=1)
    rig.settle()
    groups = director.graph.groups
    assert groups["LeftArm"].assigned_task is None
    assert groups["LeftArm"].watchers == [3]
    assert director.graph.task(3).blocked_reason is BlockReason.ALL_OR_NOTHING
    assert groups["RightArm"].assigned_task == 1
    assert groups["RightArm"].watchers == [4]


def test_watchers_sort_by_branch_priority(rig):
    director = rig.provider("Walk", emit=[req("Legs", 9)]).provider("Legs").start()
    director.submit_root_task("Legs", priority=5)
    director.submit_root_task("Walk", priority=1)
    director.submit_root_task("Legs", priority=3)
    rig.settle()
    legs = director.graph.groups["Legs"]
    assert legs.assigned_task == 0
    # the subtask asks with 9 but its branch only carries the Walk root's 1
    assert legs.watchers == [3, 2]


def test_required_sibling_cannot_take_a_group_its_requester_needs(rig):
    rig.provider("Plan", needs=["Motor"], emit=[req("Motor", 1), req("Arm", 2)])
    rig.provider("Arm", needs=["Motor"], emit=[req("Motor")])
    director = rig.provider("Motor").start()
    director.submit_root_task("Plan")
    rig.settle()
    groups = director.graph.groups
    assert groups["Plan"].assigned_task == 0
    assert groups["Motor"].assigned_task is None
    assert groups["Arm"].assigned_task is None
    assert director.graph.task(1).blocked_reason is BlockReason.ALL_OR_NOTHING
    assert director.graph.task(2).blocked_reason is BlockReason.ALL_OR_NOTHING
    assert check_invariants(director) == []


def test_grandchild_cannot_evict_a_need_held_for_its_ancestor(rig):
    rig.provider("Plan", needs=["Motor"], emit=[req("Motor", 1), req("Arm", 2)])
    rig.provider("Arm", emit=[req("Motor")])
    director = rig.provider("Motor").start()
    director.submit_root_task("Plan")
    rig.settle()
    groups = director.graph.groups
    assert (groups["Motor"].assigned_task, groups["Arm"].assigned_task) == (1, 2)
    assert groups["Motor"].watchers == [3]
    assert director.graph.task(3).blocked_reason is BlockReason.NEEDS_BLOCKED
    assert check_invariants(director) == []


def test_colliding_required_siblings_settle_queued():
    rig = Rig(max_cascade=20)
    rig.provider("Plan", emit=[req("A", 2), req("B", 1)])
    rig.provider("A", emit=[req("X", 5)])
    rig.provider("B", needs=["X"], emit=[req("X")])
    director = rig.provider("X").start()
    director.submit_root_task("Plan")
    rig.settle()
    groups = director.graph.groups
    assert groups["A"].assigned_task is None and groups["B"].assigned_task is None
    assert rig.reasons("a") == [RunReason.NEW_TASK, RunReason.NEW_TASK]
    assert rig.reasons("b") == []
    assert director.graph.task(2).blocked_reason is BlockReason.ALL_OR_NOTHING
    assert check_invariants(director) == []
    trace_length = len(director.graph.trace)
    assert director.step() == StepReport()
    assert len(director.graph.trace) == trace_length


def test_required_subtask_enters_its_group_through_a_push(rig):
    rig.state("door", ["closed", "open"])
    rig.provider("Leave", emit=[req("Door", 1), req("Legs", 1)])
    rig.provider("Door", "pass_through", when=["door == open"])
    director = rig.provider("Door", "open_door", causing=["door == open"]).provider("Legs").start()
    director.submit_root_task("Leave")
    rig.settle()
    groups = director.graph.groups
    assert (groups["Door"].assigned_task, groups["Door"].active_provider) == (1, "open_door")
    assert groups["Door"].pushed_by.pusher == 1
    assert groups["Legs"].assigned_task == 2
    assert of_kind(director, TraceKind.TASK_BLOCKED) == []


def _idle_on_trigger(ctx):
    if ctx.reason is RunReason.OTHER_TRIGGER:
        return SubtaskBundle.idle()
    return SubtaskBundle.of(req("Legs", 1))


def test_idle_leaves_the_subtree_untouched(rig):
    director = rig.provider("Walk", behaviour=_idle_on_trigger).provider("Legs").start()
    director.submit_root_task("Walk")
    rig.settle()
    before = snapshot(director)
    director.external_trigger("Walk")
    report = director.step()
    after = snapshot(director)
    assert after.groups == before.groups
    assert after.tasks == before.tasks
    assert report.providers_run == ["walk"]
    assert [e.kind for e in report.trace][-1] is TraceKind.IDLE_EMITTED


def test_running_subtask_with_new_data_reruns_in_place(rig):
    rig.provider("Walk", behaviour=lambda ctx: SubtaskBundle.of(req("Legs", 1, data=f"target={ctx.triggers}")))
    director = rig.provider("Legs", kind=START).provider("Legs").start()
    director.submit_root_task("Walk")
    rig.settle()
    director.external_trigger("Walk")
    rig.settle()
    assert director.graph.task(1).data == "target=1"
    assert rig.reasons("legs_start") == [RunReason.STARTED]
    assert rig.reasons("legs") == [RunReason.NEW_TASK, RunReason.NEW_TASK]


def test_priority_only_change_does_not_rerun(rig):
    rig.provider("Walk", behaviour=lambda ctx: SubtaskBundle.of(req("Legs", priority=ctx.triggers)))
    director = rig.provider("Legs").start()
    director.submit_root_task("Walk")
    rig.settle()
    director.external_trigger("Walk")
    rig.settle()
    assert director.graph.task(1).priority == 1
    assert rig.reasons("legs") == [RunReason.NEW_TASK]


# STATE CHANGES
def test_state_change_nobody_watches_runs_nothing(rig):
    rig.state("light", ["red", "green"])
    director = rig.provider("Lamp").start()
    director.submit_root_task("Lamp")
    rig.settle()
    director.state_update("light", "green")
    report = director.step()
    assert report.providers_run == []
    assert [e.kind for e in report.trace] == [TraceKind.STATE_CHANGED]
    assert report.trace[0].detail == {"var": "light", "before": "red", "after": "green"}


def test_phase_switch_swaps_provider_in_one_step(rig):
    rig.state("phase", ["playing", "ready"])
    rig.provider("Striker", "striker_playing", when=["phase == playing"], emit=[req("WalkToBall", 1)])
    rig.provider("Striker", "striker_ready", when=["phase == ready"], emit=[req("Stand", 1)])
    director = rig.provider("WalkToBall").provider("Stand").start()
    director.submit_root_task("Striker", priority=1)
    rig.settle()
    director.state_update("phase", "ready")
    report = director.step()
    groups = director.graph.groups
    assert report.providers_run == ["striker_ready", "stand"]
    assert groups["Striker"].active_provider == "striker_ready"
    assert groups["Stand"].active
    assert not groups["WalkToBall"].active


# TRIGGERS
def test_trigger_reaches_active_provider_with_payload(rig):
    director = rig.provider("Radio").start()
    director.submit_root_task("Radio")
    rig.settle()
    director.external_trigger("Radio", "ping")
    director.step()
    last = rig.calls[-1]
    assert (last.reason, last.payload, last.triggers) == (RunReason.OTHER_TRIGGER, "ping", 1)


def test_trigger_to_inactive_group_is_suppressed(rig):
    director = rig.provider("Radio").start()
    director.external_trigger("Radio", "ping")
    report = director.step()
    assert report.providers_run == []
    assert [(e.kind, e.detail) for e in report.trace] == [(TraceKind.TRIGGER_SUPPRESSED, {"payload": "ping"})]
    with pytest.raises(UnknownTaskType):
        director.external_trigger("Beacon")


# USES
def test_uses_info_follows_the_requested_subtask(rig):
    rig.provider("Blocker", emit=[req("Legs", 1)])
    rig.provider("Guard", uses=["GetUp"], emit=[req("GetUp", 1)])
    director = rig.provider("GetUp", needs=["Legs"]).provider("Legs").start()
    assert director.uses_info("Guard", "GetUp") == UsesInfo()

    blocker = director.submit_root_task("Blocker", priority=5)
    director.submit_root_task("Guard", priority=1)
    rig.settle()
    assert director.uses_info("Guard", "GetUp") == UsesInfo(run_state=RunState.QUEUED)
    assert director.graph.task(3).blocked_reason is BlockReason.NEEDS_BLOCKED

    director.remove_root_task(blocker)
    rig.settle()
    assert director.uses_info("Guard", "GetUp").run_state is RunState.RUNNING

    with pytest.raises(UndeclaredSubtaskType):
        director.uses_info("Guard", "Legs")
    with pytest.raises(UnknownTaskType):
        director.uses_info("Nobody", "GetUp")


def _body(ctx):
    return SubtaskBundle.done() if ctx.reason is RunReason.SUBTASK_DONE else SubtaskBundle.of(req("Leg", 1))


def _leg(ctx):
    if ctx.reason is RunReason.SUBTASK_DONE:
        finished = ctx.uses["Hip"].done and ctx.uses["Knee"].done
        return SubtaskBundle.done() if finished else SubtaskBundle.idle()
    return SubtaskBundle.of(req("Hip", 1), req("Knee", 1))


def _motor(ctx):
    return SubtaskBundle.done() if ctx.reason is RunReason.OTHER_TRIGGER else None


def test_done_from_every_motor_aggregates_upwards(rig):
    rig.provider("Body", uses=["Leg"], behaviour=_body)
    rig.provider("Leg", needs=["Hip", "Knee"], behaviour=_leg)
    director = rig.provider("Hip", behaviour=_motor).provider("Knee", behaviour=_motor).start()
    director.submit_root_task("Body")
    rig.settle()

    director.external_trigger("Hip")
    rig.settle()
    assert director.uses_info("Leg", "Hip") == UsesInfo(run_state=RunState.RUNNING, done=True)
    assert not director.uses_info("Leg", "Knee").done
    assert director.graph.task(2).live

    director.external_trigger("Knee")
    rig.settle()
    assert rig.reasons("leg") == [RunReason.NEW_TASK, RunReason.SUBTASK_DONE, RunReason.SUBTASK_DONE]
    assert rig.reasons("body") == [RunReason.NEW_TASK, RunReason.SUBTASK_DONE]
    assert director.graph.root_tasks == []
    assert [e.tasks for e in of_kind(director, TraceKind.TASK_RETIRED)] == [[3], [2], [1], [0]]


# CALLBACK FAILURES
def _raises(ctx):
    raise RuntimeError("boom")


@pytest.mark.parametrize(
    "behaviour, error",
    [
        (_raises, "RuntimeError: boom"),
        (lambda ctx: "LeftLeg", "TypeError: expected SubtaskBundle, got str"),
    ],
)
def test_callback_failure_is_contained_as_idle(rig, behaviour, error):
    director = rig.provider("Walk", behaviour=behaviour).start()
    director.submit_root_task("Walk")
    report = director.step()
    kinds = [e.kind for e in report.trace]
    assert kinds[-2:] == [TraceKind.CALLBACK_FAILURE, TraceKind.IDLE_EMITTED]
    assert report.trace[-2].detail["error"] == error
    assert director.graph.groups["Walk"].assigned_task == 0


# PUSHING
def _kick_rig(with_causing: bool = True) -> Rig:
    rig = Rig().state("stability", ["standing", "walking"], "walking")
    rig.provider("Walk", "walk", needs=["Legs"], emit=[req("Legs", 1)])
    if with_causing:
        rig.provider("Walk", "walk_standing", needs=["Legs"], causing=["stability == standing"],
                     emit=[req("Legs", 1)])
    rig.provider("Kick", "kick", needs=["Legs"], when=["stability == standing"], emit=[req("Legs", 2)])
    rig.provider("Legs")
    rig.start()
    rig.director.submit_root_task("Walk", priority=1)
    rig.settle()
    rig.director.submit_root_task("Kick", priority=2)
    rig.settle()
    return rig


def test_blocked_kick_pushes_walk_to_its_causing_provider():
    rig = _kick_rig()
    walk = rig.director.graph.groups["Walk"]
    assert walk.active_provider == "walk_standing"
    assert walk.pushed_by.pusher == 2
    assert rig.reasons("walk_standing") == [RunReason.PUSHED]
    assert rig.director.graph.task(2).blocked_reason is BlockReason.WHEN_FAILED
    pushed = of_kind(rig.director, TraceKind.GROUP_PUSHED)
    assert [(e.group, e.provider, e.detail["condition"]) for e in pushed] == [
        ("Walk", "walk_standing", "stability == standing")
    ]


@pytest.mark.parametrize("with_causing", [True, False])
def test_condition_coming_true_transfers_the_legs(with_causing):
    rig = _kick_rig(with_causing)
    director = rig.director
    if not with_causing:
        assert of_kind(director, TraceKind.GROUP_PUSHED) == []
        assert director.graph.groups["Walk"].active_provider == "walk"
    director.state_update("stability", "standing")
    rig.settle()
    groups = director.graph.groups
    assert groups["Kick"].assigned_task == 2
    assert groups["Legs"].assigned_task == 3
    assert groups["Walk"].pushed_by is None
    assert not groups["Walk"].active
    assert groups["Walk"].watchers == [0]
    assert director.graph.task(0).blocked_reason is BlockReason.NEEDS_BLOCKED
    transfer = of_kind(director, TraceKind.CONTROL_TRANSFERRED)
    assert [(e.group, e.tasks, e.detail["to_group"]) for e in transfer] == [("Legs", [1, 2], "Kick")]


def test_push_within_own_group(rig):
    rig.state("door", ["closed", "open"])
    rig.provider("Door", "pass_through", when=["door == open"])
    director = rig.provider("Door", "open_door", causing=["door == open"]).start()
    director.submit_root_task("Door")
    rig.settle()
    door = director.graph.groups["Door"]
    assert (door.assigned_task, door.active_provider) == (0, "open_door")
    assert rig.reasons("open_door") == [RunReason.PUSHED]

    director.state_update("door", "open")
    rig.settle()
    assert door.active_provider == "pass_through"
    assert door.pushed_by is None
    assert rig.reasons("pass_through") == [RunReason.NEW_TASK]


# LIMITS AND BOOKKEEPING
def test_endless_done_cascade_is_bounded():
    rig = Rig(max_cascade=50)
    counter = itertools.count()
    rig.provider("Loop", uses=["Child"],
                 behaviour=lambda ctx: SubtaskBundle.of(req("Child", data=str(next(counter)))))
    director = rig.provider("Child", behaviour=lambda ctx: SubtaskBundle.done()).start()
    director.submit_root_task("Loop")
    with pytest.raises(CascadeLimitExceeded):
        director.step()


def test_concurrent_submissions_get_unique_gapless_uids(rig):
    director = rig.provider("Ping").start()
    with ThreadPoolExecutor(max_workers=8) as pool:
        tickets = list(pool.map(lambda _: director.submit_root_task("Ping"), range(200)))
    assert sorted(t.ticket for t in tickets) == list(range(200))
    assert director.pending_events() == 200
    rig.settle(max_steps=200)
    assert sorted(t.uid for t in tickets) == list(range(200))


def test_quiescent_engine_stays_put():
    director = _kick_rig().director
    before = snapshot(director)
    trace_length = len(director.graph.trace)
    for _ in range(3):
        assert director.step() == StepReport()
    assert snapshot(director) == before
    assert len(director.graph.trace) == trace_length


def test_trace_sequence_is_gapless():
    director = _kick_rig().director
    director.state_update("stability", "standing")
    director.run_until_quiescent(10)
    assert [e.seq for e in director.graph.trace] == list(range(len(director.graph.trace)))
    steps = [e.step for e in director.graph.trace]
    assert steps == sorted(steps)


def test_trace_cap_keeps_the_newest_records():
    rig = Rig(trace_cap=5)
    director = rig.provider("Radio").start()
    director.submit_root_task("Radio")
    for _ in range(4):
        director.external_trigger("Radio")
    rig.settle()
    trace = director.graph.trace
    assert len(trace) == 5
    assert director.graph.trace_offset > 0
    assert [e.seq for e in trace] == list(range(director.graph.trace_offset, director.graph.trace_offset + 5))
