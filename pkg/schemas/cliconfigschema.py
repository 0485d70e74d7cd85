"""
Validated command-line configuration.

argparse produces raw strings; CliConfig turns them into checked values so
command handlers never see a malformed range or a non-positive step limit.
"""

from pathlib import Path
from typing import List, Optional, Tuple
from pydantic import BaseModel, field_validator

from utils.director_config import DEFAULT_MAX_STEPS
from utils.enums import CliCommand


class CliConfig(BaseModel):
    command: CliCommand
    scenario_path: Optional[Path] = None
    max_steps: int = DEFAULT_MAX_STEPS
    snapshot_at: List[int] = []
    output_path: Optional[Path] = None
    at_step: Optional[int] = None
    trace_range: Optional[Tuple[int, int]] = None
    seed: int = 0
    count: int = 1

    @field_validator("max_steps", "count")
    @classmethod
    def positive(cls, value: int) -> int:
        if value <= 0:
            raise ValueError("must be greater than 0")
        return value

    @field_validator("at_step")
    @classmethod
    def non_negative(cls, value: Optional[int]) -> Optional[int]:
        if value is not None and value < 0:
            raise ValueError("must be 0 or greater")
        return value

    @field_validator("snapshot_at", mode="before")
    @classmethod
    def parse_steps(cls, value):
        """Accept "3,7,12" as well as a list."""
        if value is None:
            return []
        if isinstance(value, str):
            parts = [p.strip() for p in value.split(",") if p.strip()]
            try:
                steps = [int(p) for p in parts]
            except ValueError as exc:
                raise ValueError(f"snapshot steps must be integers, got '{value}'") from exc
            value = steps
        if any(step < 0 for step in value):
            raise ValueError("snapshot steps must be 0 or greater")
        return sorted(set(value))

    @field_validator("trace_range", mode="before")
    @classmethod
    def parse_range(cls, value):
        """Accept "A:B" (half-open sequence range)."""
        if value is None or not isinstance(value, str):
            return value
        start, sep, end = value.partition(":")
        if not sep:
            raise ValueError(f"range must look like A:B, got '{value}'")
        try:
            return int(start), int(end)
        except ValueError as exc:
            raise ValueError(f"range bounds must be integers, got '{value}'") from exc
