"""
Trace record schema.

Every arbitration decision the engine takes is appended to the graph trace
as a TraceEvent. Records serialize to one JSON object per line with a fixed
key order so runs can be compared byte-for-byte against golden files.
"""

import json
from typing import Dict, List, Optional
from pydantic import BaseModel, ConfigDict, Field

from utils.enums import RunReason, TraceKind


class TraceEvent(BaseModel):
    """One append-only trace record."""

    model_config = ConfigDict(frozen=True)

    seq: int
    step: int
    kind: TraceKind
    group: Optional[str] = None
    provider: Optional[str] = None
    tasks: List[int] = Field(default_factory=list)
    reason: Optional[RunReason] = None
    detail: Dict[str, str] = Field(default_factory=dict)

    def to_line(self) -> str:
        record = {
            "seq": self.seq,
            "step": self.step,
            "kind": self.kind.value,
            "group": self.group,
            "provider": self.provider,
            "tasks": list(self.tasks),
            "reason": self.reason.value if self.reason else None,
            "detail": {k: self.detail[k] for k in sorted(self.detail)},
        }
        return json.dumps(record, separators=(",", ":"), ensure_ascii=False)

    @classmethod
    def from_line(cls, line: str) -> "TraceEvent":
        return cls.model_validate(json.loads(line))
