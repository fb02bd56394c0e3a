"""
Exception hierarchy for the simulator.

Every error raised on purpose by the toolkit derives from SatsimError so the
CLI can map it to an exit status and a readable message.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import List


class SatsimError(Exception):
    """Base class for all simulator errors."""


class GeoError(SatsimError, ValueError):
    """Invalid geographic input (coordinates out of range)."""


class InvalidElementsError(SatsimError, ValueError):
    """Orbital elements that cannot be propagated."""


@dataclass
class TleDiagnostic:
    record_index: int
    line_no: int
    message: str

    def __str__(self) -> str:
        return f"record {self.record_index} (line {self.line_no}): {self.message}"


class TleParseError(SatsimError):
    """One or more TLE records were rejected or truncated."""

    def __init__(self, diagnostics: List[TleDiagnostic], source: str = "<text>"):
        self.diagnostics = diagnostics
        self.source = source
        lines = "; ".join(str(d) for d in diagnostics)
        super().__init__(f"TLE parse failed for {source}: {lines}")


class DatasetError(SatsimError):
    """Missing or malformed input file."""

    def __init__(self, path: str, message: str, line_no: int | None = None):
        self.path = path
        self.line_no = line_no
        where = f"{path}:{line_no}" if line_no is not None else path
        super().__init__(f"{where}: {message}")


class InsufficientDataError(SatsimError):
    """Not enough valid samples for the requested statistic."""


class NoRouteError(SatsimError):
    """No path exists between two graph nodes."""


class DomainError(SatsimError, ValueError):
    """Argument outside the mathematical domain of an operation."""


class EmptyModelError(SatsimError):
    """Error model with no usable circuits or an empty percentile."""


class UndefinedConditionalError(SatsimError):
    """Conditioning event never occurs, so the conditional probability is undefined."""


class ConfigError(SatsimError):
    """Invalid experiment configuration."""


class StageError(SatsimError):
    """An upstream artifact is missing or was produced under another config."""

    def __init__(self, stage: str, message: str):
        self.stage = stage
        super().__init__(f"[{stage}] {message}")
