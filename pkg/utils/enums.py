"""
Enumerations shared by the Director engine, the inspection exports and the
scenario simulator.

Values are the lowercase/uppercase spellings used on the wire (scenario files
and trace records), so every enum round-trips through JSON by value.
"""

from enum import Enum


class ProviderKind(str, Enum):
    """Lifecycle role of a provider inside its group."""

    START = "start"
    PROVIDE = "provide"
    STOP = "stop"


class Comparator(str, Enum):
    """Comparison operators for When conditions and Causing assertions."""

    EQ = "=="
    NE = "!="
    LT = "<"
    LE = "<="
    GT = ">"
    GE = ">="

    def apply(self, left: int, right: int) -> bool:
        if self is Comparator.EQ:
            return left == right
        if self is Comparator.NE:
            return left != right
        if self is Comparator.LT:
            return left < right
        if self is Comparator.LE:
            return left <= right
        if self is Comparator.GT:
            return left > right
        return left >= right

    @classmethod
    def parse(cls, token: str) -> "Comparator":
        """Accept either the symbol ("==") or the name ("EQ")."""
        token = token.strip()
        for member in cls:
            if token == member.value or token.upper() == member.name:
                return member
        raise ValueError(f"unknown comparator '{token}'")


class TaskStatus(str, Enum):
    QUEUED = "QUEUED"
    RUNNING = "RUNNING"
    RETIRED = "RETIRED"


class RunReason(str, Enum):
    """Why a provider callback is being invoked."""

    NEW_TASK = "NEW_TASK"
    STARTED = "STARTED"
    STOPPED = "STOPPED"
    SUBTASK_DONE = "SUBTASK_DONE"
    PUSHED = "PUSHED"
    OTHER_TRIGGER = "OTHER_TRIGGER"


class RunState(str, Enum):
    """Run state of a subtask as seen through Uses."""

    NO_TASK = "NO_TASK"
    QUEUED = "QUEUED"
    RUNNING = "RUNNING"


class Marker(str, Enum):
    """Special bundle entries."""

    DONE = "DONE"
    IDLE = "IDLE"


class ChallengeOutcome(str, Enum):
    CHALLENGER_WINS = "CHALLENGER_WINS"
    INCUMBENT_HOLDS = "INCUMBENT_HOLDS"


class BlockReason(str, Enum):
    """Why a task ended up watching instead of running."""

    OUTRANKED = "outranked"
    WHEN_FAILED = "when_failed"
    NEEDS_BLOCKED = "needs_blocked"
    EVICTED = "evicted"
    NEEDS_LOST = "needs_lost"
    ALL_OR_NOTHING = "all_or_nothing"
    NO_PROVIDER = "no_provider"


class TraceKind(str, Enum):
    PROVIDER_RUN = "PROVIDER_RUN"
    TASK_REQUESTED = "TASK_REQUESTED"
    TASK_ASSIGNED = "TASK_ASSIGNED"
    TASK_BLOCKED = "TASK_BLOCKED"
    TASK_RETIRED = "TASK_RETIRED"
    GROUP_PUSHED = "GROUP_PUSHED"
    CONTROL_TRANSFERRED = "CONTROL_TRANSFERRED"
    DONE_EMITTED = "DONE_EMITTED"
    IDLE_EMITTED = "IDLE_EMITTED"
    STATE_CHANGED = "STATE_CHANGED"
    TRIGGER_SUPPRESSED = "TRIGGER_SUPPRESSED"
    CALLBACK_FAILURE = "CALLBACK_FAILURE"


class NodeStyle(str, Enum):
    """DOT line styles for active / blocked / inactive elements."""

    ACTIVE = "solid"
    BLOCKED = "dashed"
    INACTIVE = "dotted"


class CliCommand(str, Enum):
    VALIDATE = "validate"
    RUN = "run"
    EXPORT_DOT = "export-dot"
    TRACE = "trace"
    FUZZ = "fuzz"


class ExitCode(int, Enum):
    OK = 0
    VALIDATION_FAILED = 1
    IO_ERROR = 2
    STEP_LIMIT = 3
