"""
Empirical traffic-speed distributions.

Speeds are derived from baseline RTT datasets as route length / RTT and
stored as ECDFs over ``n`` equally spaced delimiters. Terrestrial speeds are
bucketed by one-way distance; satellite speeds are pooled into one ECDF.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import DomainError, InsufficientDataError
from .geo import SPEED_OF_LIGHT_KM_S, GeoCoord, haversine_km
from .logger import get_logger

logger = get_logger(__name__)

DEFAULT_ALTITUDE_KM = 550.0
DEFAULT_N_DELIMITERS = 1000
DEFAULT_BUCKET_KM = 1000.0


def satellite_path_length_km(d_cg: float, h: float = DEFAULT_ALTITUDE_KM) -> float:
    """
    Round-trip bent-pipe path length between a dish and its ground station.

    ``d_cg`` is the client/ground-station great-circle distance and ``h`` the
    orbit altitude; the satellite is assumed midway between them.
    """
    if d_cg < 0 or h <= 0 or not (math.isfinite(d_cg) and math.isfinite(h)):
        raise DomainError(f"satellite_path_length_km needs d_cg >= 0 and h > 0 (got {d_cg}, {h})")
    return 4.0 * math.sqrt((d_cg / 2.0) ** 2 + h ** 2)


def speed_km_s(route_len_km: float, rtt_ms: float) -> float:
    return route_len_km / rtt_ms * 1000.0


class SampleKind(str, Enum):
    TERRESTRIAL = "terrestrial"
    SATELLITE = "satellite"


@dataclass(frozen=True)
class BaselineSample:
    route_len_km: float
    rtt_ms: float
    kind: SampleKind = SampleKind.SATELLITE
    one_way_km: Optional[float] = None

    @property
    def speed_km_s(self) -> float:
        return speed_km_s(self.route_len_km, self.rtt_ms)

    def reject_reason(self) -> Optional[str]:
        if not (math.isfinite(self.route_len_km) and self.route_len_km > 0):
            return "route length must be > 0"
        if not (math.isfinite(self.rtt_ms) and self.rtt_ms > 0):
            return "rtt must be > 0"
        if self.speed_km_s > SPEED_OF_LIGHT_KM_S:
            return "implied speed exceeds c"
        return None


@dataclass(frozen=True)
class TerrestrialProbe:
    """One probe-pair RTT row; route length is twice the great-circle distance."""

    src: GeoCoord
    dst: GeoCoord
    rtt_ms: float

    def to_sample(self) -> BaselineSample:
        one_way = haversine_km(self.src, self.dst)
        return BaselineSample(
            route_len_km=2.0 * one_way,
            rtt_ms=self.rtt_ms,
            kind=SampleKind.TERRESTRIAL,
            one_way_km=one_way,
        )


class SpeedEcdf:
    """
    Speed ECDF over delimiters δ_1 < ... < δ_n with cumulative frequencies f.

    Instances are immutable; the arrays are read-only.
    """

    def __init__(
        self,
        delimiters: Sequence[float],
        cum_freq: Sequence[float],
        sample_count: int = 0,
        rejected: int = 0,
    ):
        delims = np.array(delimiters, dtype=float)
        freq = np.array(cum_freq, dtype=float)
        if delims.ndim != 1 or delims.shape != freq.shape or delims.size == 0:
            raise DomainError("delimiters and cum_freq must be equal-length non-empty sequences")
        if np.any(np.diff(delims) <= 0):
            raise DomainError("delimiters must be strictly increasing")
        if delims[0] <= 0 or delims[-1] > SPEED_OF_LIGHT_KM_S:
            raise DomainError("delimiters must lie in (0, c]")
        if np.any(np.diff(freq) < 0) or freq[0] < 0:
            raise DomainError("cumulative frequencies must be non-decreasing in [0, 1]")
        if freq[-1] != 1.0:
            raise DomainError(f"last cumulative frequency must be 1.0 (got {freq[-1]})")
        delims.setflags(write=False)
        freq.setflags(write=False)
        self.delimiters = delims
        self.cum_freq = freq
        self.sample_count = int(sample_count)
        self.rejected = int(rejected)
        # first index of each plateau, for the lower-index tie rule
        first = np.searchsorted(freq, freq, side="left")
        first.setflags(write=False)
        self._first = first

    @classmethod
    def degenerate(cls, speed: float, sample_count: int = 0, rejected: int = 0) -> "SpeedEcdf":
        """Point mass at ``speed``."""
        return cls([speed], [1.0], sample_count=sample_count, rejected=rejected)

    @property
    def is_degenerate(self) -> bool:
        return self.delimiters.size == 1

    def __len__(self) -> int:
        return int(self.delimiters.size)

    def __eq__(self, other) -> bool:
        if not isinstance(other, SpeedEcdf):
            return NotImplemented
        return np.array_equal(self.delimiters, other.delimiters) and np.array_equal(
            self.cum_freq, other.cum_freq
        )

    def __repr__(self) -> str:
        return (
            f"SpeedEcdf(n={len(self)}, range=[{self.delimiters[0]:.1f}, {self.delimiters[-1]:.1f}] km/s, "
            f"samples={self.sample_count})"
        )

    def cdf(self, speeds) -> np.ndarray:
        """Step-function value of the ECDF at ``speeds``."""
        idx = np.searchsorted(self.delimiters, np.asarray(speeds, dtype=float), side="right")
        padded = np.concatenate(([0.0], self.cum_freq))
        return padded[idx]

    def to_dict(self) -> dict:
        return {
            "delimiters": self.delimiters.tolist(),
            "cum_freq": self.cum_freq.tolist(),
            "sample_count": self.sample_count,
            "rejected": self.rejected,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, data: dict) -> "SpeedEcdf":
        return cls(
            data["delimiters"],
            data["cum_freq"],
            sample_count=data.get("sample_count", 0),
            rejected=data.get("rejected", 0),
        )


def build_ecdf(speeds: Iterable[float], n_delimiters: int = DEFAULT_N_DELIMITERS, rejected: int = 0) -> SpeedEcdf:
    """
    Build an ECDF with ``n_delimiters`` equally spaced delimiters over [min, max].

    f_i is the fraction of samples <= δ_i. When every sample is equal the
    result is a degenerate single-delimiter ECDF.

    Raises:
        InsufficientDataError: fewer than 2 samples
        DomainError: non-finite or non-positive speeds, n_delimiters < 2
    """
    values = np.sort(np.asarray(list(speeds), dtype=float))
    if values.size < 2:
        raise InsufficientDataError(f"ECDF needs at least 2 speed samples (got {values.size})")
    if n_delimiters < 2:
        raise DomainError(f"n_delimiters must be >= 2 (got {n_delimiters})")
    if not np.all(np.isfinite(values)) or values[0] <= 0:
        raise DomainError("speeds must be finite and positive")

    low, high = values[0], values[-1]
    if low == high:
        return SpeedEcdf.degenerate(float(low), sample_count=values.size, rejected=rejected)

    delimiters = np.unique(np.linspace(low, high, n_delimiters))
    cum_freq = np.searchsorted(values, delimiters, side="right") / values.size
    cum_freq[-1] = 1.0
    return SpeedEcdf(delimiters, cum_freq, sample_count=values.size, rejected=rejected)


def sample_speeds(ecdf: SpeedEcdf, u) -> np.ndarray:
    """
    Vectorised inverse-transform sampling.

    Each u picks the delimiter whose cumulative frequency is nearest to u;
    ties go to the lower index.
    """
    u = np.asarray(u, dtype=float)
    if np.any((u < 0) | (u > 1)) or np.any(np.isnan(u)):
        raise DomainError("uniform draws must lie in [0, 1]")
    freq = ecdf.cum_freq
    last = freq.size - 1
    upper = np.minimum(np.searchsorted(freq, u, side="left"), last)
    lower = np.maximum(upper - 1, 0)
    take_lower = (upper > 0) & (u - freq[lower] <= freq[upper] - u)
    idx = np.where(take_lower, ecdf._first[lower], upper)
    return ecdf.delimiters[idx]


def sample_speed(ecdf: SpeedEcdf, u: float) -> float:
    return float(sample_speeds(ecdf, u))


def ks_distance(ecdf: SpeedEcdf, speeds) -> float:
    """Largest gap between the empirical CDF of ``speeds`` and ``ecdf``."""
    values = np.sort(np.asarray(speeds, dtype=float))
    grid = np.union1d(ecdf.delimiters, values)
    empirical = np.searchsorted(values, grid, side="right") / values.size
    return float(np.max(np.abs(empirical - ecdf.cdf(grid))))


class BucketedSpeedModel:
    """
    Terrestrial speed ECDFs keyed by one-way distance bucket.

    Bucket ``k`` covers [k·bucket_km, (k+1)·bucket_km). Lookups for an empty
    bucket use the nearest populated bucket (ties toward the larger
    distance), so distances beyond the last populated bucket use that
    bucket. ``fallback`` serves only a model without buckets.
    """

    def __init__(
        self,
        bucket_km: float,
        buckets: Dict[int, SpeedEcdf],
        fallback: SpeedEcdf,
        sample_count: int = 0,
        rejected: int = 0,
    ):
        if not bucket_km > 0:
            raise DomainError(f"bucket_km must be > 0 (got {bucket_km})")
        self.bucket_km = float(bucket_km)
        self.buckets = dict(sorted(buckets.items()))
        self.fallback = fallback
        self.sample_count = int(sample_count)
        self.rejected = int(rejected)
        self._populated = np.array(list(self.buckets), dtype=int)

    def bucket_index(self, distance_km: float) -> int:
        if distance_km < 0:
            raise DomainError(f"distance must be >= 0 (got {distance_km})")
        return int(distance_km // self.bucket_km)

    def ecdf_for(self, distance_km: float) -> SpeedEcdf:
        k = self.bucket_index(distance_km)
        found = self.buckets.get(k)
        if found is not None:
            return found
        if self._populated.size == 0:
            return self.fallback
        if k > self._populated[-1]:
            return self.buckets[int(self._populated[-1])]
        gaps = np.abs(self._populated - k)
        nearest = self._populated[gaps == gaps.min()].max()
        return self.buckets[int(nearest)]

    def sample(self, distance_km: float, u: float) -> float:
        return sample_speed(self.ecdf_for(distance_km), u)

    def to_dict(self) -> dict:
        return {
            "bucket_km": self.bucket_km,
            "buckets": {str(k): ecdf.to_dict() for k, ecdf in self.buckets.items()},
            "fallback": self.fallback.to_dict(),
            "sample_count": self.sample_count,
            "rejected": self.rejected,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, data: dict) -> "BucketedSpeedModel":
        return cls(
            bucket_km=data["bucket_km"],
            buckets={int(k): SpeedEcdf.from_dict(v) for k, v in data["buckets"].items()},
            fallback=SpeedEcdf.from_dict(data["fallback"]),
            sample_count=data.get("sample_count", 0),
            rejected=data.get("rejected", 0),
        )


@dataclass(frozen=True)
class SpeedModels:
    terrestrial: BucketedSpeedModel
    satellite: SpeedEcdf


def idealized_speeds(bucket_km: float = DEFAULT_BUCKET_KM) -> SpeedModels:
    """Satellite links at c, terrestrial fiber at 2c/3."""
    return SpeedModels(
        terrestrial=BucketedSpeedModel(bucket_km, {}, SpeedEcdf.degenerate(2.0 * SPEED_OF_LIGHT_KM_S / 3.0)),
        satellite=SpeedEcdf.degenerate(SPEED_OF_LIGHT_KM_S),
    )


def _accept(samples: Iterable[BaselineSample], label: str) -> Tuple[List[BaselineSample], int]:
    accepted: List[BaselineSample] = []
    rejected = 0
    for sample in samples:
        reason = sample.reject_reason()
        if reason:
            rejected += 1
            logger.debug(f"{label} sample rejected: {reason}", extra={"context": {"sample": repr(sample)}})
            continue
        accepted.append(sample)
    if rejected:
        logger.warning(f"{label}: rejected {rejected} sample(s), kept {len(accepted)}")
    return accepted, rejected


def _ecdf_or_point(speeds: List[float], n_delimiters: int) -> SpeedEcdf:
    if len(speeds) == 1:
        return SpeedEcdf.degenerate(speeds[0], sample_count=1)
    return build_ecdf(speeds, n_delimiters)


def ingest_terrestrial(
    rows: Iterable[TerrestrialProbe | BaselineSample],
    bucket_km: float = DEFAULT_BUCKET_KM,
    n_delimiters: int = DEFAULT_N_DELIMITERS,
) -> BucketedSpeedModel:
    """
    Build the bucketed terrestrial model from probe-pair RTTs.

    Rows implying a speed above c, or a zero route length, are dropped and
    counted in ``rejected``.
    """
    if not bucket_km > 0:
        raise DomainError(f"bucket_km must be > 0 (got {bucket_km})")
    samples = [row.to_sample() if isinstance(row, TerrestrialProbe) else row for row in rows]
    accepted, rejected = _accept(samples, "terrestrial baseline")
    if len(accepted) < 2:
        raise InsufficientDataError(f"terrestrial baseline has {len(accepted)} usable rows, need >= 2")

    grouped: Dict[int, List[float]] = {}
    for sample in accepted:
        one_way = sample.one_way_km if sample.one_way_km is not None else sample.route_len_km / 2.0
        grouped.setdefault(int(one_way // bucket_km), []).append(sample.speed_km_s)

    buckets = {k: _ecdf_or_point(speeds, n_delimiters) for k, speeds in grouped.items()}
    fallback = buckets[max(buckets)]
    logger.info(
        f"terrestrial model: {len(accepted)} samples in {len(buckets)} bucket(s) of {bucket_km:g} km"
    )
    return BucketedSpeedModel(bucket_km, buckets, fallback, sample_count=len(accepted), rejected=rejected)


def ingest_satellite(
    samples: Iterable[BaselineSample], n_delimiters: int = DEFAULT_N_DELIMITERS
) -> SpeedEcdf:
    """
    Pool satellite baseline rows into one ECDF.

    Route lengths are taken as given; the ground-station to PoP leg stays
    inside the RTT, which keeps the estimate conservative.
    """
    accepted, rejected = _accept(samples, "satellite baseline")
    if len(accepted) < 2:
        raise InsufficientDataError(f"satellite baseline has {len(accepted)} usable rows, need >= 2")
    ecdf = build_ecdf([s.speed_km_s for s in accepted], n_delimiters, rejected=rejected)
    logger.info(f"satellite model: {ecdf.sample_count} samples, {rejected} rejected")
    return ecdf
