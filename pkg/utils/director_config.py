"""
Runtime settings for the Director engine and simulator.

Values come from the environment (a local ``.env`` file is loaded first),
with defaults suitable for running the bundled scenarios.
"""

import os
from dotenv import load_dotenv

from utils.exceptions import ConfigError

load_dotenv()


def _int_setting(name: str, default: int, minimum: int = 0) -> int:
    raw = os.getenv(name)
    if raw is None or raw.strip() == "":
        return default
    try:
        value = int(raw)
    except ValueError as exc:
        raise ConfigError(f"{name} must be an integer, got '{raw}'") from exc
    if value < minimum:
        raise ConfigError(f"{name} must be >= {minimum}, got {value}")
    return value


DEFAULT_MAX_STEPS = _int_setting("DIRECTOR_MAX_STEPS", 10_000, minimum=1)
TRACE_CAP = _int_setting("DIRECTOR_TRACE_CAP", 0)
MAX_CASCADE = _int_setting("DIRECTOR_MAX_CASCADE", 10_000, minimum=1)
MOTOR_DONE_AFTER = _int_setting("DIRECTOR_MOTOR_DONE_AFTER", 1, minimum=1)
LOG_LEVEL = os.getenv("DIRECTOR_LOG_LEVEL", "WARNING").upper()


def plain_output() -> bool:
    """True when diagnostics must be rendered without colour (NO_COLOR convention)."""
    return bool(os.getenv("NO_COLOR"))


def get_trace_cap() -> int | None:
    return TRACE_CAP or None
