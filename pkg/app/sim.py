"""
Time-stepped latency simulation and percentile analysis.

Every (pair, step) draws from its own random stream derived from the global
seed, the pair id and the step index, so results do not depend on the order
in which pairs are scheduled or on the number of workers.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .errors import DomainError, InsufficientDataError
from .geo import EARTH_RADIUS_KM, Constellation, GeoCoord, SatState, haversine_km
from .graph import (
    GraphConfig,
    RoutingStrategy,
    build_graph,
    k_shortest_paths,
    refresh_graph,
    topk_latency_ms,
)
from .logger import ContextLogger, get_logger
from .models import GroundSite, Interface, Relay, pair_id
from .speeds import SpeedModels, idealized_speeds

logger = get_logger(__name__)

MAX_MISSING_FRACTION = 0.5
ALIGN_TOLERANCE_S = 1e-3
DEFAULT_MIN_SAMPLES = 20
DEFAULT_REDUCTION_BINS = (20.0, 40.0, 60.0, 80.0)


@dataclass(frozen=True)
class Timeline:
    start: float
    step_s: float = 300.0
    duration_s: float = 86400.0

    def __post_init__(self):
        if not self.step_s > 0:
            raise DomainError(f"step_s must be > 0 (got {self.step_s})")
        if not self.duration_s > 0:
            raise DomainError(f"duration_s must be > 0 (got {self.duration_s})")
        ratio = self.duration_s / self.step_s
        if abs(ratio - round(ratio)) > 1e-9:
            raise DomainError(f"duration_s {self.duration_s} is not a multiple of step_s {self.step_s}")

    @property
    def n_steps(self) -> int:
        return int(round(self.duration_s / self.step_s))

    def times(self) -> np.ndarray:
        return self.start + self.step_s * np.arange(self.n_steps, dtype=float)


def aligned_times(a: np.ndarray, b: np.ndarray) -> bool:
    return a.shape == b.shape and bool(np.allclose(a, b, rtol=0, atol=ALIGN_TOLERANCE_S))


@dataclass
class LatencySeries:
    """
    Time-ordered RTT samples (ms) of one pair or circuit on one interface.

    Missing samples are NaN.
    """

    series_id: str
    interface: Interface
    times: np.ndarray
    samples: np.ndarray

    def __post_init__(self):
        self.interface = Interface(self.interface)
        self.times = np.asarray(self.times, dtype=float)
        self.samples = np.asarray(self.samples, dtype=float)
        if self.times.shape != self.samples.shape or self.times.ndim != 1:
            raise DomainError(f"{self.series_id}: times and samples must be 1-D arrays of equal length")
        if np.any(np.diff(self.times) <= 0):
            raise DomainError(f"{self.series_id}: times must be strictly increasing")
        present = self.samples[~np.isnan(self.samples)]
        if np.any(present <= 0):
            raise DomainError(f"{self.series_id}: RTT samples must be > 0")

    def __len__(self) -> int:
        return int(self.samples.size)

    @property
    def missing_mask(self) -> np.ndarray:
        return np.isnan(self.samples)

    @property
    def missing_count(self) -> int:
        return int(self.missing_mask.sum())

    @property
    def missing_fraction(self) -> float:
        return self.missing_count / len(self) if len(self) else 1.0

    @property
    def is_valid(self) -> bool:
        return self.missing_fraction <= MAX_MISSING_FRACTION

    def valid_samples(self) -> np.ndarray:
        return self.samples[~self.missing_mask]

    def mean(self) -> float:
        values = self.valid_samples()
        return float(values.mean()) if values.size else float("nan")

    def aligned_with(self, other: "LatencySeries") -> bool:
        return aligned_times(self.times, other.times)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "id": self.series_id,
                "interface": self.interface.value,
                "t": self.times,
                "rtt_ms": self.samples,
            }
        )


@dataclass
class GroundSegment:
    """Satellites, stations and PoPs shared by every simulated pair."""

    constellation: Optional[Constellation] = None
    stations: List[GroundSite] = field(default_factory=list)
    pops: List[GroundSite] = field(default_factory=list)
    graph_config: GraphConfig = field(default_factory=GraphConfig)


def _pair_key(pid: str, strategy: RoutingStrategy) -> int:
    digest = hashlib.sha256(f"{strategy.value}|{pid}".encode("utf-8")).hexdigest()
    return int(digest[:16], 16)


def step_rng(seed: int, pid: str, step: int, strategy: RoutingStrategy) -> np.random.Generator:
    """Random stream of one (pair, step); independent of scheduling order."""
    return np.random.default_rng([int(seed), _pair_key(pid, strategy), int(step)])


def simulate_pair_multi_k(
    pair: Tuple[Relay, Relay],
    timeline: Timeline,
    strategy: RoutingStrategy,
    k_values: Sequence[int],
    speeds: SpeedModels,
    seed: int,
    ground: Optional[GroundSegment] = None,
) -> Dict[int, LatencySeries]:
    """
    Simulate one directed pair once per step and average the top-K paths for
    each K in ``k_values`` from a single enumeration of ``max(k_values)`` paths.
    """
    if not k_values or min(k_values) < 1:
        raise DomainError(f"K values must be >= 1 (got {list(k_values)})")
    ground = ground or GroundSegment()
    strategy = RoutingStrategy.from_name(strategy)
    source, target = pair
    pid = pair_id(source.fingerprint, target.fingerprint)
    interface = Interface.SATELLITE if strategy.uses_satellites else Interface.TERRESTRIAL
    log = ContextLogger(stage="simulate", pair_id=pid, seed=seed)

    times = timeline.times()
    k_max = max(k_values)
    rtts = {k: np.full(times.size, np.nan) for k in k_values}
    constellation = ground.constellation if strategy.uses_satellites else None

    graph = None
    for step, t in enumerate(times):
        rng = step_rng(seed, pid, step, strategy)
        if graph is None:
            sats = constellation.positions_at(float(t)) if constellation is not None else []
            graph = build_graph(
                sats,
                ground.stations if strategy.uses_satellites else [],
                ground.pops if strategy.uses_satellites else [],
                (source, target),
                strategy,
                speeds,
                rng,
                config=ground.graph_config,
                constellation=constellation,
                snapshot_time=float(t),
            )
        else:
            graph = refresh_graph(graph, float(t), rng)

        paths = k_shortest_paths(graph, k=k_max)
        if not paths:
            continue
        for k in k_values:
            rtts[k][step] = 2.0 * topk_latency_ms(paths, k)

    result = {k: LatencySeries(pid, interface, times, rtts[k]) for k in k_values}
    sample = result[k_values[0]]
    if not sample.is_valid:
        log.warning(
            f"series invalid: {sample.missing_count}/{len(sample)} steps without a route",
            context={"interface": interface.value},
        )
    else:
        log.debug(f"simulated {len(sample)} steps", context={"interface": interface.value})
    return result


def simulate_pair(
    pair: Tuple[Relay, Relay],
    timeline: Timeline,
    strategy: RoutingStrategy,
    k: int,
    speeds: SpeedModels,
    seed: int,
    ground: Optional[GroundSegment] = None,
) -> LatencySeries:
    """
    RTT series of one directed pair: 2 × mean of the top-K path latencies.

    Steps without a route are NaN; more than half missing marks the series
    invalid.
    """
    return simulate_pair_multi_k(pair, timeline, strategy, [k], speeds, seed, ground)[k]


def circuit_latency(hop1_ms: float, hop2_ms: float) -> float:
    """Transmission latency of a circuit step: sum of its two hops."""
    if hop1_ms is None or hop2_ms is None or math.isnan(hop1_ms) or math.isnan(hop2_ms):
        return float("nan")
    if hop1_ms < 0 or hop2_ms < 0:
        raise DomainError("hop latencies must be >= 0")
    return hop1_ms + hop2_ms


def circuit_series(circuit_id: str, hop1: LatencySeries, hop2: LatencySeries) -> LatencySeries:
    if not hop1.aligned_with(hop2):
        raise DomainError(f"{circuit_id}: hop series are not aligned")
    if hop1.interface is not hop2.interface:
        raise DomainError(f"{circuit_id}: hop series use different interfaces")
    return LatencySeries(circuit_id, hop1.interface, hop1.times, hop1.samples + hop2.samples)


def _values(series) -> np.ndarray:
    values = series.valid_samples() if isinstance(series, LatencySeries) else np.asarray(series, dtype=float)
    return values[~np.isnan(values)]


def percentile(series, p: float, min_samples: int = DEFAULT_MIN_SAMPLES) -> float:
    """
    Nearest-rank percentile over the valid samples.

    Raises:
        InsufficientDataError: fewer than ``min_samples`` valid samples
    """
    if not 0 < p <= 100:
        raise DomainError(f"percentile must be in (0, 100] (got {p})")
    values = np.sort(_values(series))
    if values.size < max(1, min_samples):
        raise InsufficientDataError(f"percentile needs {min_samples} valid samples (got {values.size})")
    rank = max(1, math.ceil(round(p * values.size / 100.0, 9)))
    return float(values[rank - 1])


def percentile_curve(series, percentiles: Sequence[float], min_samples: int = DEFAULT_MIN_SAMPLES) -> Dict[float, float]:
    return {p: percentile(series, p, min_samples) for p in percentiles}


def relative_reduction(l_ter: float, l_sat: float) -> float:
    """(l_ter − l_sat) / l_ter in percent; negative when satellite is slower."""
    if not l_ter > 0:
        raise DomainError(f"terrestrial latency must be > 0 (got {l_ter})")
    return (l_ter - l_sat) / l_ter * 100.0


def bin_labels(bins: Sequence[float]) -> List[str]:
    edges = list(bins)
    labels = [f"<{edges[0]:g}"]
    labels += [f"{lo:g}-{hi:g}" for lo, hi in zip(edges, edges[1:])]
    labels.append(f"{edges[-1]:g}-100")
    return labels


@dataclass
class ReductionTable:
    """Share of ids per relative-reduction bin, one row per percentile."""

    bins: List[float]
    rows: List[dict] = field(default_factory=list)
    skipped: int = 0

    def to_frame(self) -> pd.DataFrame:
        columns = ["percentile", "count", *bin_labels(self.bins), f">{self.bins[0]:g}", f"mean_reduction_gt{self.bins[0]:g}"]
        return pd.DataFrame(self.rows, columns=columns)

    def row(self, p: float) -> dict:
        for row in self.rows:
            if row["percentile"] == p:
                return row
        raise KeyError(p)


def reduction_rows(
    reductions_by_percentile: Mapping[float, Sequence[float]],
    bins: Sequence[float] = DEFAULT_REDUCTION_BINS,
) -> List[dict]:
    """
    Bin relative reductions (percent) into table rows.

    Bins are [lo, hi); the last bin also holds 100. The summary column
    counts reductions >= the first edge and averages them.
    """
    edges = sorted(float(b) for b in bins)
    labels = bin_labels(edges)
    threshold = edges[0]
    rows = []
    for p, values in reductions_by_percentile.items():
        arr = np.asarray(list(values), dtype=float)
        n = arr.size
        row = {"percentile": p, "count": n}
        if n:
            index = np.searchsorted(edges, arr, side="right")
            counts = np.bincount(index, minlength=len(labels))
            for label, count in zip(labels, counts):
                row[label] = 100.0 * count / n
            above = arr[arr >= threshold]
            row[f">{threshold:g}"] = 100.0 * above.size / n
            row[f"mean_reduction_gt{threshold:g}"] = float(above.mean()) if above.size else None
        else:
            for label in labels:
                row[label] = 0.0
            row[f">{threshold:g}"] = 0.0
            row[f"mean_reduction_gt{threshold:g}"] = None
        rows.append(row)
    return rows


SeriesPairs = Mapping[str, Tuple[LatencySeries, LatencySeries]]


def percentile_values(
    pairs: SeriesPairs, percentiles: Sequence[float], min_samples: int = DEFAULT_MIN_SAMPLES
) -> Tuple[Dict[str, Dict[float, Tuple[float, float]]], int]:
    """
    Per id and percentile: (terrestrial, satellite) values.

    Ids whose series are invalid or too short are skipped and counted.
    """
    values: Dict[str, Dict[float, Tuple[float, float]]] = {}
    skipped = 0
    for sid in sorted(pairs):
        sat, ter = pairs[sid]
        if not (sat.is_valid and ter.is_valid):
            skipped += 1
            continue
        try:
            values[sid] = {
                p: (percentile(ter, p, min_samples), percentile(sat, p, min_samples)) for p in percentiles
            }
        except InsufficientDataError:
            skipped += 1
    return values, skipped


def reductions_from_values(
    values: Mapping[str, Mapping[float, Tuple[float, float]]], percentiles: Sequence[float]
) -> Dict[float, List[float]]:
    return {p: [relative_reduction(*values[sid][p]) for sid in sorted(values)] for p in percentiles}


def reduction_table(
    pairs: SeriesPairs,
    percentiles: Sequence[float],
    bins: Sequence[float] = DEFAULT_REDUCTION_BINS,
    min_samples: int = DEFAULT_MIN_SAMPLES,
) -> ReductionTable:
    """
    Table of relative-reduction bins per percentile.

    Args:
        pairs: id -> (satellite series, terrestrial series)
        percentiles: Table rows
        bins: Bin edges in percent, e.g. [20, 40, 60, 80]
    """
    edges = sorted(float(b) for b in bins)
    if not pairs:
        return ReductionTable(bins=edges)
    values, skipped = percentile_values(pairs, percentiles, min_samples)
    if skipped:
        logger.warning(f"reduction table: skipped {skipped} id(s) with invalid or short series")
    rows = reduction_rows(reductions_from_values(values, percentiles), edges)
    return ReductionTable(bins=edges, rows=rows, skipped=skipped)


@dataclass
class DistanceBucket:
    lo_km: float
    hi_km: float
    count: int
    mean_reduction: float
    negative_count: int
    mean_increase: Optional[float]

    def to_dict(self) -> dict:
        return {
            "lo_km": self.lo_km,
            "hi_km": self.hi_km,
            "count": self.count,
            "mean_reduction": self.mean_reduction,
            "negative_count": self.negative_count,
            "mean_increase": self.mean_increase,
        }


def group_reduction_by_distance(
    pairs: Mapping[str, Tuple[GeoCoord, GeoCoord]],
    reductions: Mapping[str, float],
    bucket_km: float = 1000.0,
) -> Dict[int, DistanceBucket]:
    """
    Mean reduction per one-way distance bucket [k·bucket_km, (k+1)·bucket_km).

    ``mean_increase`` averages the magnitude of negative reductions. Empty
    buckets are absent.
    """
    if not bucket_km > 0:
        raise DomainError(f"bucket_km must be > 0 (got {bucket_km})")
    grouped: Dict[int, List[float]] = {}
    for pid in sorted(reductions):
        a, b = pairs[pid]
        grouped.setdefault(int(haversine_km(a, b) // bucket_km), []).append(reductions[pid])

    histogram = {}
    for k in sorted(grouped):
        values = np.asarray(grouped[k], dtype=float)
        negative = values[values < 0]
        histogram[k] = DistanceBucket(
            lo_km=k * bucket_km,
            hi_km=(k + 1) * bucket_km,
            count=int(values.size),
            mean_reduction=float(values.mean()),
            negative_count=int(negative.size),
            mean_increase=float(-negative.mean()) if negative.size else None,
        )
    return histogram


def k_sensitivity(series_by_k: Mapping[int, Mapping[str, LatencySeries]], baseline_k: int = 10) -> Dict[int, dict]:
    """
    Mean satellite RTT over all pairs for each K, and its percentage increase
    over the baseline K (the smallest K when the baseline was not simulated).
    """
    if not series_by_k:
        return {}
    means = {}
    for k in sorted(series_by_k):
        per_pair = [s.mean() for s in series_by_k[k].values()]
        per_pair = [m for m in per_pair if not math.isnan(m)]
        means[k] = float(np.mean(per_pair)) if per_pair else float("nan")
    base_k = baseline_k if baseline_k in means else min(means)
    base = means[base_k]
    return {
        k: {
            "mean_rtt_ms": m,
            "increase_percent": (m - base) / base * 100.0 if base and not math.isnan(base) else float("nan"),
            "baseline_k": base_k,
        }
        for k, m in means.items()
    }


def _equator_scene(distance_km: float, altitude_km: float, spacing_deg: float) -> Tuple[Relay, Relay, List[SatState]]:
    lon_b = math.degrees(distance_km / EARTH_RADIUS_KM)
    a = Relay("A", GeoCoord(0.0, 0.0))
    b = Relay("B", GeoCoord(0.0, lon_b))
    lons = np.arange(-2.0, lon_b + 2.0 + spacing_deg, spacing_deg)
    sats = [SatState(f"S{i:05d}", GeoCoord(0.0, float(lon)), altitude_km, 0.0) for i, lon in enumerate(lons)]
    return a, b, sats


def crossover_distance_km(
    altitude_km: float = 550.0,
    speeds: Optional[SpeedModels] = None,
    elevation_deg: float = 25.0,
    start_km: float = 500.0,
    stop_km: float = 2000.0,
    step_km: float = 5.0,
    sat_spacing_deg: float = 0.05,
) -> Optional[float]:
    """
    Smallest endpoint separation at which a single bent pipe beats fiber.

    The scene puts both relays on the equator under a dense line of
    satellites; the ground station and PoP sit at the destination relay so
    the satellite path is source -> satellite -> destination.
    """
    speeds = speeds or idealized_speeds()
    config = GraphConfig(elevation_deg=elevation_deg, gpl_latency_ms=1e-6)
    for d in np.arange(start_km, stop_km + step_km / 2, step_km):
        a, b, sats = _equator_scene(float(d), altitude_km, sat_spacing_deg)
        station = GroundSite("gs-B", b.position)
        pop = GroundSite("pop-B", b.position)
        rng = np.random.default_rng(0)
        sat_graph = build_graph(sats, [station], [pop], (a, b), RoutingStrategy.SINGLE_BENT_PIPE, speeds, rng, config)
        ter_graph = build_graph([], [], [], (a, b), RoutingStrategy.TERRESTRIAL_ONLY, speeds, rng, config)
        sat_paths = k_shortest_paths(sat_graph, k=1)
        if not sat_paths:
            continue
        if topk_latency_ms(sat_paths, 1) < topk_latency_ms(k_shortest_paths(ter_graph, k=1), 1):
            return float(d)
    return None
