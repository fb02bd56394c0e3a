"""
Metrics collection for pipeline stages.

Tracks rows read and rejected, pairs computed or skipped, and throughput.
Metrics are logged and shown on the console, never written into artifacts.
"""
from dataclasses import asdict, dataclass, field
from datetime import datetime
from typing import Any, Dict, Optional
import json
import time


@dataclass
class StageMetrics:
    """Metrics for a single stage run."""

    stage: str
    start_time: datetime = field(default_factory=datetime.now)
    end_time: Optional[datetime] = None
    duration_seconds: float = 0.0

    # Inputs
    rows_read: int = 0
    rows_rejected: int = 0

    # Work
    pairs_computed: int = 0
    pairs_skipped: int = 0
    files_written: int = 0

    metadata: Dict[str, Any] = field(default_factory=dict)

    _t0: float = field(default_factory=time.perf_counter, repr=False, compare=False)

    def finish(self) -> "StageMetrics":
        self.end_time = datetime.now()
        self.duration_seconds = round(time.perf_counter() - self._t0, 3)
        return self

    @property
    def throughput(self) -> float:
        """Pairs per second (0 when nothing was computed)."""
        if self.duration_seconds <= 0 or not self.pairs_computed:
            return 0.0
        return self.pairs_computed / self.duration_seconds

    def to_dict(self) -> dict:
        """Convert to dictionary for logging."""
        data = asdict(self)
        data.pop("_t0")
        data["start_time"] = self.start_time.isoformat()
        data["end_time"] = self.end_time.isoformat() if self.end_time else None
        data["throughput"] = round(self.throughput, 3)
        return data

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), default=str)

    @classmethod
    def from_dict(cls, data: dict) -> "StageMetrics":
        data = dict(data)
        data.pop("throughput", None)
        data["start_time"] = datetime.fromisoformat(data["start_time"])
        if data.get("end_time"):
            data["end_time"] = datetime.fromisoformat(data["end_time"])
        return cls(**data)
