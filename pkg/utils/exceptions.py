"""
Director exception hierarchy.

Every error carries a stable machine ``code`` and a human readable
``detail``, the same pair an HTTP error carries as status + detail. The CLI
maps these to exit codes; library callers can match on the class or on
``code``.
"""

from typing import Any, List, Optional


class DirectorException(Exception):
    """Base class for every error raised by the engine and the simulator."""

    code = "director_error"

    def __init__(self, detail: str, code: Optional[str] = None):
        super().__init__(detail)
        self.detail = detail
        if code is not None:
            self.code = code

    def __str__(self):
        return self.detail


class ConfigError(DirectorException):
    code = "config_error"


# CORE MODEL
class UnknownStateVar(DirectorException):
    code = "unknown_state_var"

    def __init__(self, name: str):
        super().__init__(f"State variable '{name}' is not registered")
        self.name = name


class DuplicateId(DirectorException):
    code = "duplicate_id"


class InvalidState(DirectorException):
    code = "invalid_state"


# RUNTIME
class EngineAlreadyStarted(DirectorException):
    code = "engine_already_started"


class EngineNotStarted(DirectorException):
    code = "engine_not_started"


class EngineStopped(DirectorException):
    code = "engine_stopped"


class UnknownTaskType(DirectorException):
    code = "unknown_task_type"

    def __init__(self, task_type: str):
        super().__init__(f"No provider group registered for task type '{task_type}'")
        self.task_type = task_type


class UnknownUid(DirectorException):
    code = "unknown_uid"


class NotARootTask(DirectorException):
    code = "not_a_root_task"


class UndeclaredSubtaskType(DirectorException):
    code = "undeclared_subtask_type"


class CascadeLimitExceeded(DirectorException):
    code = "cascade_limit_exceeded"


# ARBITRATION
class DetachedTask(DirectorException):
    code = "detached_task"


class NotAnAncestor(DirectorException):
    code = "not_an_ancestor"


class EmptyGroup(DirectorException):
    code = "empty_group"


class UnknownNeed(DirectorException):
    code = "unknown_need"


# INSPECTION
class RangeOutOfBounds(DirectorException):
    code = "range_out_of_bounds"


# SCENARIO
class ScenarioSyntaxError(DirectorException):
    """Malformed scenario text, positioned at a 1-based line/column."""

    code = "syntax_error"

    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"{line}:{col}: {message}")
        self.message = message
        self.line = line
        self.col = col


class UnresolvedReference(ScenarioSyntaxError):
    code = "unresolved_reference"

    def __init__(self, name: str, line: int, col: int, what: str = "name"):
        super().__init__(f"unresolved {what} '{name}'", line, col)
        self.name = name


class NonMonotoneScript(ScenarioSyntaxError):
    code = "non_monotone_script"


class ScenarioValidationError(DirectorException):
    """Aggregates every diagnostic found while validating a scenario."""

    code = "scenario_invalid"

    def __init__(self, diagnostics: List[ScenarioSyntaxError]):
        self.diagnostics = diagnostics
        super().__init__("\n".join(str(d) for d in diagnostics))


class StepLimitExceeded(DirectorException):
    code = "step_limit_exceeded"

    def __init__(self, max_steps: int, partial: Any = None):
        super().__init__(f"Scenario did not finish within {max_steps} steps")
        self.max_steps = max_steps
        self.partial = partial


class RegistryInvalid(DirectorException):
    """Raised by Director.start() when validate_registry reports problems."""

    code = "registry_invalid"

    def __init__(self, report: Any):
        self.report = report
        super().__init__("; ".join(issue.detail for issue in report.issues))
