import pytest
from pydantic import ValidationError

from models.models import Condition, ProviderSpec, StateStore, SubtaskBundle, TaskInstance, TaskRequest
from utils.enums import Comparator, Marker, ProviderKind, TaskStatus
from utils.exceptions import DirectorException, InvalidState


def test_bundle_flags():
    assert SubtaskBundle.idle().is_idle
    assert SubtaskBundle.done().is_done
    bundle = SubtaskBundle.of(TaskRequest(task_type="Walk"), Marker.DONE)
    assert bundle.is_done and not bundle.is_idle
    assert [r.task_type for r in bundle.task_requests] == ["Walk"]


@pytest.mark.parametrize(
    "entries",
    [
        [Marker.DONE, Marker.IDLE],
        [Marker.IDLE, TaskRequest(task_type="Walk")],
        [Marker.DONE, Marker.DONE],
        [TaskRequest(task_type="Walk"), TaskRequest(task_type="Walk", priority=2)],
    ],
)
def test_bundle_rejects_invalid_combinations(entries):
    with pytest.raises(ValidationError):
        SubtaskBundle(requests=entries)


def test_task_status_transitions():
    task = TaskInstance(uid=0, task_type="Walk")
    task.move_to(TaskStatus.RUNNING)
    task.move_to(TaskStatus.QUEUED)
    task.move_to(TaskStatus.RETIRED)
    assert not task.live
    with pytest.raises(DirectorException):
        task.move_to(TaskStatus.RUNNING)


def test_task_status_same_state_is_noop():
    task = TaskInstance(uid=0, task_type="Walk")
    task.move_to(TaskStatus.QUEUED)
    assert task.status is TaskStatus.QUEUED


def test_lifecycle_providers_cannot_be_conditional():
    when = [Condition(state_var="phase", comparator=Comparator.EQ, value=0)]
    with pytest.raises(ValidationError):
        ProviderSpec(id="walk_start", group="Walk", kind=ProviderKind.START, when=when)
    with pytest.raises(ValidationError):
        ProviderSpec(id="walk_stop", group="Walk", kind=ProviderKind.STOP, needs=["LeftLeg"])


def test_state_store_labels_map_to_positions():
    store = StateStore()
    store.register("posture", ["upright", "falling", "fallen"], "upright")
    assert store.get("posture") == 0
    assert store.set("posture", "fallen") == 2
    assert store.label_of("posture", 1) == "falling"
    assert store.domain("posture") == [0, 1, 2]
    assert store.snapshot() == {"posture": 2}


def test_state_store_rejects_empty_and_bool_values():
    store = StateStore()
    with pytest.raises(InvalidState):
        store.register("empty", [], "x")
    store.register("flag", ["off", "on"], "off")
    with pytest.raises(InvalidState):
        store.set("flag", True)
    with pytest.raises(InvalidState):
        store.set("flag", 7)
