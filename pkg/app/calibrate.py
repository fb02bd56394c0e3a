"""
Percentile-wise error models and bootstrap calibration.

For percentile i the relative error of one calibration circuit is
e = (P_i(measured) − P_i(simulated)) / P_i(measured). A simulated value s is
calibrated by resampling errors and inverting the definition, s / (1 − e).
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Dict, List, Mapping, Sequence, Tuple

import numpy as np

from .errors import DomainError, EmptyModelError, InsufficientDataError
from .logger import get_logger
from .models import Interface
from .sim import DEFAULT_MIN_SAMPLES, LatencySeries, percentile

logger = get_logger(__name__)

MAX_ERROR = 0.99
MIN_CANDIDATE_MS = 0.1
DEFAULT_DRAWS = 10000
DEFAULT_PERCENTILES = tuple(range(1, 100))


@dataclass
class ErrorModel:
    errors: Dict[int, np.ndarray]
    circuits_used: int = 0
    skipped: int = 0
    clamped: int = 0

    @property
    def percentiles(self) -> List[int]:
        return sorted(self.errors)

    def nearest_percentile(self, p: float) -> int:
        """Closest stored percentile; ties go to the lower one."""
        if not self.errors:
            raise EmptyModelError("error model has no percentiles")
        return min(self.percentiles, key=lambda q: (abs(q - p), q))

    def errors_for(self, p: float) -> np.ndarray:
        values = self.errors[self.nearest_percentile(p)]
        if values.size == 0:
            raise EmptyModelError(f"error model has no samples at percentile {p}")
        return values

    def to_dict(self) -> dict:
        return {
            "percentiles": {str(p): self.errors[p].tolist() for p in self.percentiles},
            "circuits_used": self.circuits_used,
            "skipped": self.skipped,
            "clamped": self.clamped,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "ErrorModel":
        return cls(
            errors={int(p): np.asarray(v, dtype=float) for p, v in data["percentiles"].items()},
            circuits_used=data.get("circuits_used", 0),
            skipped=data.get("skipped", 0),
            clamped=data.get("clamped", 0),
        )


@dataclass(frozen=True)
class CalibratedEstimate:
    mean_ms: float
    ci_low_ms: float
    ci_high_ms: float
    draws: int

    def to_dict(self) -> dict:
        return {"mean_ms": self.mean_ms, "ci_low_ms": self.ci_low_ms, "ci_high_ms": self.ci_high_ms, "draws": self.draws}


def build_error_model(
    sim_store: Mapping[str, LatencySeries],
    meas_store: Mapping[str, LatencySeries],
    percentiles: Sequence[int] = DEFAULT_PERCENTILES,
    min_samples: int = DEFAULT_MIN_SAMPLES,
) -> ErrorModel:
    """
    Relative errors per percentile over every id present in both stores.

    Ids missing on either side, or with too few valid samples, are skipped
    and counted. Errors above 0.99 are clamped and counted.

    Raises:
        EmptyModelError: no id could be used
    """
    shared = sorted(set(sim_store) & set(meas_store))
    skipped = len(set(sim_store) ^ set(meas_store))
    collected: Dict[int, List[float]] = {int(p): [] for p in percentiles}
    clamped = 0
    used = 0

    for cid in shared:
        try:
            pairs = [
                (p, percentile(meas_store[cid], p, min_samples), percentile(sim_store[cid], p, min_samples))
                for p in percentiles
            ]
        except InsufficientDataError:
            skipped += 1
            continue
        used += 1
        for p, measured, simulated in pairs:
            e = (measured - simulated) / measured
            if e > MAX_ERROR:
                e = MAX_ERROR
                clamped += 1
            collected[int(p)].append(e)

    if not used:
        raise EmptyModelError(
            f"no usable calibration ids ({len(shared)} shared, {skipped} skipped); "
            "check that measured ids match simulated circuit or pair ids"
        )
    if skipped:
        logger.info(f"error model: skipped {skipped} id(s) missing a side or short on samples")
    if clamped:
        logger.warning(f"error model: clamped {clamped} error value(s) to {MAX_ERROR}")
    return ErrorModel(
        errors={p: np.asarray(v, dtype=float) for p, v in collected.items()},
        circuits_used=used,
        skipped=skipped,
        clamped=clamped,
    )


def calibrate_estimate(
    raw_ms: float,
    model: ErrorModel,
    p: float,
    draws: int = DEFAULT_DRAWS,
    seed=0,
) -> CalibratedEstimate:
    """
    Calibrate one simulated percentile value.

    Draws ``draws`` errors with replacement, forms candidates raw / (1 − e)
    floored at 0.1 ms, and reports their mean with a 5th–95th percentile
    interval. The interval is widened to contain the mean when the candidate
    distribution is too lumpy for it to fall inside.
    """
    if not raw_ms > 0:
        raise DomainError(f"raw latency must be > 0 (got {raw_ms})")
    if draws < 1:
        raise DomainError(f"draws must be >= 1 (got {draws})")
    errors = model.errors_for(p)
    rng = np.random.default_rng(seed)
    sampled = rng.choice(errors, size=draws, replace=True)
    candidates = np.maximum(raw_ms / (1.0 - sampled), min(MIN_CANDIDATE_MS, raw_ms))

    if np.ptp(candidates) == 0:
        mean = float(candidates[0])
    else:
        mean = float(candidates.mean())
    low, high = (float(v) for v in np.percentile(candidates, [5, 95]))
    return CalibratedEstimate(mean_ms=mean, ci_low_ms=min(low, mean), ci_high_ms=max(high, mean), draws=draws)


def _estimate_seed(seed: int, sid: str, p: float, interface: Interface) -> List[int]:
    key = int(hashlib.sha256(f"{interface.value}|{sid}".encode("utf-8")).hexdigest()[:16], 16)
    return [int(seed), key, int(round(p * 100))]


def calibrate_estimates(
    values: Mapping[str, Mapping[float, Tuple[float, float]]],
    models: Mapping[Interface, ErrorModel],
    draws: int = DEFAULT_DRAWS,
    seed: int = 0,
) -> List[dict]:
    """
    Calibrated estimate with its interval for every id, percentile and
    interface that has a model. Each estimate draws from its own seeded
    stream, so rows do not depend on iteration order.
    """
    rows = []
    for sid in sorted(values):
        for p in sorted(values[sid]):
            ter, sat = values[sid][p]
            for interface, raw in ((Interface.TERRESTRIAL, ter), (Interface.SATELLITE, sat)):
                model = models.get(interface)
                if model is None:
                    continue
                est = calibrate_estimate(raw, model, p, draws, _estimate_seed(seed, sid, p, interface))
                rows.append({"id": sid, "percentile": p, "interface": interface.value, "raw_ms": raw, **est.to_dict()})
    return rows


def calibrate_values(
    values: Mapping[str, Mapping[float, Tuple[float, float]]],
    models: Mapping[Interface, ErrorModel],
    draws: int = DEFAULT_DRAWS,
    seed: int = 0,
) -> Dict[str, Dict[float, Tuple[float, float]]]:
    """
    Replace (terrestrial, satellite) percentile values by their calibrated
    means. An interface without a model passes through unchanged.
    """
    calibrated = {sid: {p: list(pair) for p, pair in values[sid].items()} for sid in values}
    for row in calibrate_estimates(values, models, draws, seed):
        slot = 0 if row["interface"] == Interface.TERRESTRIAL.value else 1
        calibrated[row["id"]][row["percentile"]][slot] = row["mean_ms"]
    return {sid: {p: (pair[0], pair[1]) for p, pair in row.items()} for sid, row in calibrated.items()}
