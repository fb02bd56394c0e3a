"""
Dual-homing scheduler replay, deployment scenarios and impact metrics.

A dual-homed relay probes a budget of peers every interval on both
interfaces and routes each peer over whichever interface was faster at its
latest probe. Peers are chosen by a priority mixing how unpredictable the
faster interface has been (binary entropy) with how stale the last probe is.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.stats import entropy

from .errors import DomainError, InsufficientDataError, UndefinedConditionalError
from .logger import ContextLogger, get_logger
from .models import Circuit, Interface, Relay, pair_id
from .sim import (
    DEFAULT_MIN_SAMPLES,
    LatencySeries,
    Timeline,
    aligned_times,
    circuit_series,
    percentile,
    relative_reduction,
)

logger = get_logger(__name__)

PLT_PER_RTT = 20.0
SECONDS_PER_DAY = 86400.0
DEFAULT_PROBE_BYTES = 104
ABS_THRESHOLDS_MS = (10.0, 50.0, 100.0)
REL_THRESHOLDS_PCT = (10.0, 25.0, 50.0)
_TIME_EPS = 1e-6
SCORE_DECIMALS = 9


# ---------------------------------------------------------------------------
#  Scheduler
# ---------------------------------------------------------------------------


@dataclass
class IfaceHistory:
    """Probe records (t, sat_ms, ter_ms) of one peer, oldest first."""

    records: List[Tuple[float, float, float]] = field(default_factory=list)
    last_time: Optional[float] = None

    def add(self, t: float, sat_ms: float, ter_ms: float) -> None:
        """
        Record a probe at ``t``. A probe with a missing value still counts
        as a measurement for staleness but adds no record.
        """
        if self.last_time is not None and t < self.last_time:
            raise DomainError(f"probe at {t} precedes last probe at {self.last_time}")
        self.last_time = t
        if not (math.isfinite(sat_ms) and math.isfinite(ter_ms)):
            return
        if sat_ms <= 0 or ter_ms <= 0:
            raise DomainError("probe latencies must be > 0")
        self.records.append((t, sat_ms, ter_ms))

    @property
    def p_sat(self) -> Optional[float]:
        if not self.records:
            return None
        return sum(1 for _, sat, ter in self.records if sat < ter) / len(self.records)


@dataclass(frozen=True)
class SchedulerConfig:
    interval_s: float = 300.0
    budget: int = 50
    mix: float = 0.5
    slack_percent: float = 0.0
    tie_break: str = "fingerprint"  # "fingerprint" | "random"

    def __post_init__(self):
        if not self.interval_s > 0:
            raise DomainError(f"interval_s must be > 0 (got {self.interval_s})")
        if self.budget < 0:
            raise DomainError(f"budget must be >= 0 (got {self.budget})")
        if not 0.0 <= self.mix <= 1.0:
            raise DomainError(f"mix must be in [0, 1] (got {self.mix})")
        if self.slack_percent < 0:
            raise DomainError(f"slack_percent must be >= 0 (got {self.slack_percent})")
        if self.tie_break not in ("fingerprint", "random"):
            raise DomainError(f"tie_break must be 'fingerprint' or 'random' (got {self.tie_break})")

    @classmethod
    def from_experiment(cls, cfg) -> "SchedulerConfig":
        return cls(
            interval_s=cfg.scheduler_interval_s,
            budget=cfg.scheduler_budget,
            mix=cfg.scheduler_mix,
            slack_percent=cfg.scheduler_slack_percent,
        )


def faster_iface_entropy(history: IfaceHistory) -> float:
    """Binary entropy (bits) of "satellite was faster"; 1.0 with no records."""
    p = history.p_sat
    if p is None:
        return 1.0
    return float(entropy([p, 1.0 - p], base=2))


def update_priorities(state: Mapping[str, IfaceHistory], now: float, a: float) -> Dict[str, float]:
    """
    score = a·H + (1 − a)·F per peer.

    F is the staleness divided by the largest staleness among measured peers
    (0 when every measured peer was probed at ``now``); never-measured peers
    get F = 1.
    """
    if not 0.0 <= a <= 1.0:
        raise DomainError(f"mix must be in [0, 1] (got {a})")
    staleness = {
        peer: now - hist.last_time for peer, hist in state.items() if hist.last_time is not None
    }
    longest = max(staleness.values(), default=0.0)
    scores = {}
    for peer in sorted(state):
        if peer not in staleness:
            fresh = 1.0
        else:
            fresh = staleness[peer] / longest if longest > 0 else 0.0
        scores[peer] = a * faster_iface_entropy(state[peer]) + (1.0 - a) * fresh
    return scores


def rank_peers(scores: Mapping[str, float], rng: Optional[np.random.Generator] = None) -> List[str]:
    """
    Highest score first; ties by fingerprint, or randomly when ``rng`` is given.

    Scores are compared after rounding to SCORE_DECIMALS so that float noise
    from the entropy term does not decide the order.
    """
    peers = sorted(scores)
    rounded = {p: round(float(scores[p]), SCORE_DECIMALS) for p in peers}
    if rng is None:
        return sorted(peers, key=lambda p: (-rounded[p], p))
    jitter = dict(zip(peers, rng.random(len(peers))))
    return sorted(peers, key=lambda p: (-rounded[p], jitter[p]))


def _faster(sat_ms: float, ter_ms: float, slack_percent: float) -> Interface:
    if sat_ms < ter_ms * (1.0 + slack_percent / 100.0):
        return Interface.SATELLITE
    return Interface.TERRESTRIAL


@dataclass
class DualHomingResult:
    effective: Dict[str, LatencySeries]
    uses_satellite: Dict[str, np.ndarray]
    histories: Dict[str, IfaceHistory]
    rounds: int = 0

    def satellite_share(self) -> float:
        """Fraction of peer-steps routed over the satellite interface."""
        flags = [v for v in self.uses_satellite.values()]
        total = sum(v.size for v in flags)
        return float(sum(int(v.sum()) for v in flags) / total) if total else 0.0


def replay_dual_homing(
    peers: Mapping[str, Tuple[LatencySeries, LatencySeries]],
    cfg: SchedulerConfig,
    timeline: Timeline,
    seed: int = 0,
) -> DualHomingResult:
    """
    Replay the scheduler of one source relay at timeline granularity.

    Probe rounds are due at start + k·T (k >= 1) and run at the first step
    at or after their due time. The round's probes read both series at that
    step, so the new choice already applies to it. Before its first probe a
    peer uses the terrestrial interface; a choice is frozen until the peer
    is probed again. A missing value on the chosen interface falls back to
    the other one.
    """
    times = timeline.times()
    for peer, (sat, ter) in peers.items():
        if not (aligned_times(sat.times, times) and aligned_times(ter.times, times)):
            raise DomainError(f"series of peer {peer} are not aligned to the timeline")

    names = sorted(peers)
    state = {peer: IfaceHistory() for peer in names}
    selected = {peer: Interface.TERRESTRIAL for peer in names}
    effective = {peer: np.full(times.size, np.nan) for peer in names}
    uses_sat = {peer: np.zeros(times.size, dtype=bool) for peer in names}
    rng = np.random.default_rng(seed) if cfg.tie_break == "random" else None

    next_round = timeline.start + cfg.interval_s
    rounds = 0
    for i, t in enumerate(times):
        if t + _TIME_EPS >= next_round:
            rounds += 1
            while next_round <= t + _TIME_EPS:
                next_round += cfg.interval_s
            if cfg.budget and names:
                scores = update_priorities(state, float(t), cfg.mix)
                for peer in rank_peers(scores, rng)[: cfg.budget]:
                    sat_v = float(peers[peer][0].samples[i])
                    ter_v = float(peers[peer][1].samples[i])
                    state[peer].add(float(t), sat_v, ter_v)
                    if math.isfinite(sat_v) and math.isfinite(ter_v):
                        selected[peer] = _faster(sat_v, ter_v, cfg.slack_percent)

        for peer in names:
            sat, ter = peers[peer]
            use_sat = selected[peer] is Interface.SATELLITE
            value = sat.samples[i] if use_sat else ter.samples[i]
            if math.isnan(value):
                use_sat = not use_sat
                value = sat.samples[i] if use_sat else ter.samples[i]
            effective[peer][i] = value
            uses_sat[peer][i] = use_sat and not math.isnan(value)

    series = {
        peer: LatencySeries(peers[peer][1].series_id, Interface.DUAL, times, effective[peer]) for peer in names
    }
    return DualHomingResult(effective=series, uses_satellite=uses_sat, histories=state, rounds=rounds)


def run_dual_homing(
    peers: Mapping[str, Tuple[LatencySeries, LatencySeries]],
    cfg: SchedulerConfig,
    timeline: Timeline,
    seed: int = 0,
) -> Dict[str, LatencySeries]:
    """Effective per-peer series of one dual-homed relay (see replay_dual_homing)."""
    return replay_dual_homing(peers, cfg, timeline, seed).effective


# ---------------------------------------------------------------------------
#  Deployment
# ---------------------------------------------------------------------------


class DeploymentScenario(str, Enum):
    TOP_N = "top"
    WEIGHTED_N = "weighted"
    RANDOM_N = "random"

    @classmethod
    def from_name(cls, name) -> "DeploymentScenario":
        if isinstance(name, DeploymentScenario):
            return name
        key = str(name).strip().lower().replace("_", "-")
        if key.endswith("-n"):
            key = key[:-2]
        elif key.endswith("n") and key[:-1] in ("top", "weighted", "random"):
            key = key[:-1]
        try:
            return cls(key)
        except ValueError:
            raise ValueError(
                f"unknown deployment scenario '{name}' (expected one of: top, weighted, random)"
            ) from None


@dataclass(frozen=True)
class DeploymentPlan:
    scenario: DeploymentScenario
    n: int
    members: frozenset
    seed: int
    exclude_hosting: Tuple[str, ...] = ()

    def __contains__(self, fingerprint: str) -> bool:
        return fingerprint in self.members

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario.value,
            "n": self.n,
            "seed": self.seed,
            "exclude_hosting": list(self.exclude_hosting),
            "members": sorted(self.members),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, data: dict) -> "DeploymentPlan":
        return cls(
            scenario=DeploymentScenario.from_name(data["scenario"]),
            n=int(data["n"]),
            members=frozenset(data["members"]),
            seed=int(data["seed"]),
            exclude_hosting=tuple(data.get("exclude_hosting", ())),
        )


def _weighted_order(weights: np.ndarray, n: int, rng: np.random.Generator) -> List[int]:
    """Sequential weighted sampling without replacement, one draw per pick."""
    remaining = weights.astype(float).copy()
    available = np.ones(weights.size, dtype=bool)
    picked: List[int] = []
    for _ in range(n):
        u = rng.random()
        total = remaining.sum()
        if total > 0:
            cdf = np.cumsum(remaining) / total
            idx = int(min(np.searchsorted(cdf, u, side="right"), weights.size - 1))
            while not available[idx] or remaining[idx] == 0:
                idx -= 1
        else:
            pool = np.flatnonzero(available)
            idx = int(pool[min(int(u * pool.size), pool.size - 1)])
        picked.append(idx)
        available[idx] = False
        remaining[idx] = 0.0
    return picked


def assign_deployment(
    relays: Sequence[Relay],
    scenario,
    n: int,
    seed: int,
    exclude_hosting: Iterable[str] = (),
) -> DeploymentPlan:
    """
    Choose which relays get a satellite interface.

    TopN takes the heaviest relays (ties by fingerprint); WeightedN samples
    sequentially in proportion to bandwidth weight; RandomN samples
    uniformly. Smaller plans of one scenario and seed are prefixes of larger
    ones. ``n`` above the eligible population is capped with a warning.
    """
    scenario = DeploymentScenario.from_name(scenario)
    if n < 0:
        raise DomainError(f"n must be >= 0 (got {n})")
    excluded = tuple(sorted({h.strip().lower() for h in exclude_hosting if h.strip()}))
    candidates = sorted(
        (r for r in relays if (r.hosting or "").lower() not in excluded),
        key=lambda r: r.fingerprint,
    )
    if n > len(candidates):
        logger.warning(f"deployment size {n} exceeds {len(candidates)} eligible relays; capping")
        n = len(candidates)

    if scenario is DeploymentScenario.TOP_N:
        chosen = sorted(candidates, key=lambda r: (-r.bandwidth_weight, r.fingerprint))[:n]
    else:
        rng = np.random.default_rng(seed)
        if scenario is DeploymentScenario.WEIGHTED_N:
            weights = np.array([r.bandwidth_weight for r in candidates], dtype=float)
            order = _weighted_order(weights, n, rng)
        else:
            order = list(rng.permutation(len(candidates))[:n])
        chosen = [candidates[int(i)] for i in order]

    return DeploymentPlan(
        scenario=scenario,
        n=n,
        members=frozenset(r.fingerprint for r in chosen),
        seed=seed,
        exclude_hosting=excluded,
    )


# ---------------------------------------------------------------------------
#  Evaluation
# ---------------------------------------------------------------------------


@dataclass
class ReductionReport:
    """
    Latency change of a deployment against the all-terrestrial baseline.

    ``rows`` holds one entry per level ("pairs", "circuits") and percentile,
    plus an "all" row averaging every percentile per item.
    """

    scenario: str
    n: int
    seed: int
    rows: List[dict] = field(default_factory=list)
    skipped: Dict[str, int] = field(default_factory=dict)
    exceedance: Dict[str, Dict[str, float]] = field(default_factory=dict)

    def row(self, level: str, p) -> dict:
        for row in self.rows:
            if row["level"] == level and row["percentile"] == p:
                return row
        raise KeyError((level, p))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows)

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "n": self.n,
            "seed": self.seed,
            "rows": self.rows,
            "skipped": self.skipped,
            "exceedance": self.exceedance,
        }


def _metrics(level: str, p, base: np.ndarray, eff: np.ndarray) -> dict:
    delta = base - eff
    rel = np.array([relative_reduction(b, e) for b, e in zip(base, eff)]) if base.size else np.array([])
    reduced = delta > 0
    worsened = delta < 0
    row = {
        "level": level,
        "percentile": p,
        "count": int(base.size),
        "fraction_reduced": float(reduced.mean()) if base.size else 0.0,
        "mean_abs_reduction_ms": float(delta[reduced].mean()) if reduced.any() else 0.0,
        "mean_rel_reduction_pct": float(rel[reduced].mean()) if reduced.any() else 0.0,
        "fraction_worsened": float(worsened.mean()) if base.size else 0.0,
        "mean_increase_ms": float(-delta[worsened].mean()) if worsened.any() else 0.0,
        "mean_rel_reduction_all_pct": float(rel.mean()) if base.size else 0.0,
    }
    row["plt_reduction_ms"] = rtt_to_plt_ms(row["mean_abs_reduction_ms"])
    return row


def _exceedance(base: np.ndarray, eff: np.ndarray) -> Dict[str, float]:
    if not base.size:
        return {}
    delta = base - eff
    rel = (base - eff) / base * 100.0
    out = {f"abs_gt_{t:g}ms": float((delta > t).mean()) for t in ABS_THRESHOLDS_MS}
    out.update({f"rel_gt_{t:g}pct": float((rel > t).mean()) for t in REL_THRESHOLDS_PCT})
    return out


def _level_rows(
    level: str,
    items: Mapping[str, Tuple[LatencySeries, LatencySeries]],
    percentiles: Sequence[int],
    min_samples: int,
) -> Tuple[List[dict], Dict[str, float], int]:
    """Rows for one level; ``items`` maps id -> (baseline, effective)."""
    values: Dict[str, List[Tuple[float, float]]] = {}
    skipped = 0
    for sid in sorted(items):
        base, eff = items[sid]
        try:
            values[sid] = [(percentile(base, p, min_samples), percentile(eff, p, min_samples)) for p in percentiles]
        except InsufficientDataError:
            skipped += 1
    ids = sorted(values)
    rows = []
    for j, p in enumerate(percentiles):
        base = np.array([values[sid][j][0] for sid in ids])
        eff = np.array([values[sid][j][1] for sid in ids])
        rows.append(_metrics(level, p, base, eff))
    base_avg = np.array([np.mean([b for b, _ in values[sid]]) for sid in ids])
    eff_avg = np.array([np.mean([e for _, e in values[sid]]) for sid in ids])
    rows.append(_metrics(level, "all", base_avg, eff_avg))
    return rows, _exceedance(base_avg, eff_avg), skipped


def _source_seed(seed: int, source: str) -> List[int]:
    return [int(seed), int(hashlib.sha256(source.encode("utf-8")).hexdigest()[:16], 16)]


def effective_pair_series(
    circuits: Sequence[Circuit],
    pair_store: Mapping[str, Tuple[LatencySeries, LatencySeries]],
    plan: DeploymentPlan,
    cfg: SchedulerConfig,
    timeline: Timeline,
) -> Dict[str, LatencySeries]:
    """
    Effective series of every circuit hop under a plan.

    Only hops whose source relay is a member may use the satellite; their
    source replays the scheduler over all of its outbound hops.
    """
    by_source: Dict[str, List[str]] = {}
    for circuit in circuits:
        for src, dst in circuit.hops():
            if pair_id(src, dst) in pair_store:
                by_source.setdefault(src, [])
                if dst not in by_source[src]:
                    by_source[src].append(dst)

    effective: Dict[str, LatencySeries] = {}
    for src in sorted(by_source):
        peers = {dst: pair_store[pair_id(src, dst)] for dst in sorted(by_source[src])}
        if src in plan.members:
            replay = run_dual_homing(peers, cfg, timeline, _source_seed(plan.seed, src))
            for dst, series in replay.items():
                effective[pair_id(src, dst)] = series
        else:
            for dst, (_, ter) in peers.items():
                effective[pair_id(src, dst)] = LatencySeries(ter.series_id, Interface.DUAL, ter.times, ter.samples)
    return effective


def evaluate_deployment(
    circuits: Sequence[Circuit],
    pair_store: Mapping[str, Tuple[LatencySeries, LatencySeries]],
    plan: DeploymentPlan,
    cfg: SchedulerConfig,
    timeline: Timeline,
    percentiles: Sequence[int] = (25, 50, 75, 90, 95, 99),
    min_samples: int = DEFAULT_MIN_SAMPLES,
) -> ReductionReport:
    """
    Compare a deployment against the all-terrestrial baseline.

    Args:
        circuits: Circuits whose two hops are evaluated
        pair_store: pair id -> (satellite series, terrestrial series)
        plan: Dual-homed relays
        cfg: Scheduler parameters used by every member
        timeline: Timeline the series are aligned to
        percentiles: Report rows
    """
    log = ContextLogger(stage="deploy-eval", seed=plan.seed)
    usable = [c for c in circuits if all(pid in pair_store for pid in c.hop_ids())]
    missing = len(circuits) - len(usable)
    if missing:
        log.warning(f"{missing} circuit(s) lack hop series and are skipped")

    effective = effective_pair_series(usable, pair_store, plan, cfg, timeline)

    pair_items = {}
    for pid, eff in effective.items():
        ter = pair_store[pid][1]
        pair_items[pid] = (LatencySeries(pid, Interface.DUAL, ter.times, ter.samples), eff)

    circuit_items = {}
    for circuit in usable:
        hop1, hop2 = circuit.hop_ids()
        base = circuit_series(circuit.circuit_id, *(pair_items[h][0] for h in (hop1, hop2)))
        eff = circuit_series(circuit.circuit_id, effective[hop1], effective[hop2])
        circuit_items[circuit.circuit_id] = (base, eff)

    report = ReductionReport(scenario=plan.scenario.value, n=plan.n, seed=plan.seed)
    report.skipped["circuits_without_series"] = missing
    for level, items in (("pairs", pair_items), ("circuits", circuit_items)):
        rows, exceed, skipped = _level_rows(level, items, list(percentiles), min_samples)
        report.rows.extend(rows)
        report.exceedance[level] = exceed
        report.skipped[level] = skipped
    log.info(
        f"{plan.scenario.value}-{plan.n}: "
        f"{report.row('circuits', 'all')['fraction_reduced']:.1%} of circuits reduced"
    )
    return report


# ---------------------------------------------------------------------------
#  Adversary visibility, tail correlation, user impact
# ---------------------------------------------------------------------------


def adversary_visibility(
    plan: DeploymentPlan, pairs: Sequence[Tuple[str, str]], circuits: Sequence[Circuit]
) -> Dict[str, float]:
    """
    Share of pairs whose source is dual-homed, and of circuits whose entry
    and middle both are (the provider then sees both ends of the entry hop
    and the middle hop).
    """
    members = plan.members
    pair_fraction = sum(1 for src, _ in pairs if src in members) / len(pairs) if pairs else 0.0
    circuit_fraction = (
        sum(1 for c in circuits if c.entry in members and c.middle in members) / len(circuits)
        if circuits
        else 0.0
    )
    return {"pair_fraction": pair_fraction, "circuit_fraction": circuit_fraction}


def visibility_curve(
    relays: Sequence[Relay],
    scenario,
    n_values: Sequence[int],
    seed: int,
    pairs: Sequence[Tuple[str, str]],
    circuits: Sequence[Circuit],
    exclude_hosting: Iterable[str] = (),
) -> List[dict]:
    """Visibility for each plan size; the curve always ends at every eligible relay."""
    exclude = tuple(exclude_hosting)
    eligible = sum(1 for r in relays if (r.hosting or "").lower() not in {h.lower() for h in exclude})
    sizes = sorted({min(int(n), eligible) for n in n_values} | {eligible})
    rows = []
    for n in sizes:
        plan = assign_deployment(relays, scenario, n, seed, exclude)
        rows.append({"scenario": DeploymentScenario.from_name(scenario).value, "n": n,
                     **adversary_visibility(plan, pairs, circuits)})
    return rows


def tail_correlation(
    a: LatencySeries, b: LatencySeries, q: float = 95, min_joint_samples: int = 100
) -> float:
    """
    P(b_t > P_q(b) | a_t > P_q(a)) over time indices where both are present.

    Thresholds are nearest-rank percentiles of the joint samples.

    Raises:
        InsufficientDataError: fewer than ``min_joint_samples`` joint samples
        UndefinedConditionalError: no sample of ``a`` exceeds its threshold
    """
    if not a.aligned_with(b):
        raise DomainError(f"series {a.series_id} and {b.series_id} are not aligned")
    joint = ~(a.missing_mask | b.missing_mask)
    xa, xb = a.samples[joint], b.samples[joint]
    if xa.size < min_joint_samples:
        raise InsufficientDataError(f"tail correlation needs {min_joint_samples} joint samples (got {xa.size})")
    ta = percentile(xa, q, min_samples=1)
    tb = percentile(xb, q, min_samples=1)
    condition = xa > ta
    if not condition.any():
        raise UndefinedConditionalError(f"{a.series_id} never exceeds its {q}th percentile")
    return float(np.mean(xb[condition] > tb))


def tail_correlation_table(
    series: Mapping[str, LatencySeries], q: float = 95, min_joint_samples: int = 100
) -> pd.DataFrame:
    """Matrix of conditional tail probabilities (row = condition, column = target)."""
    ids = sorted(series)
    table = pd.DataFrame(np.nan, index=pd.Index(ids, name="given"), columns=ids)
    for x in ids:
        for y in ids:
            if x == y:
                continue
            try:
                table.loc[x, y] = tail_correlation(series[x], series[y], q, min_joint_samples)
            except (InsufficientDataError, UndefinedConditionalError, DomainError):
                pass
    return table


def probe_overhead_bytes_per_day(n: int, interval_s: float, probe_exchange_bytes: int = DEFAULT_PROBE_BYTES) -> float:
    """Daily probing traffic of one relay: rounds × peers × 2 interfaces × bytes."""
    if n < 0 or not interval_s > 0 or not probe_exchange_bytes > 0:
        raise DomainError("probe overhead needs n >= 0, interval > 0 and probe size > 0")
    return SECONDS_PER_DAY / interval_s * n * 2 * probe_exchange_bytes


def rtt_to_plt_ms(rtt_reduction_ms: float) -> float:
    """Page-load-time reduction equivalent to an RTT reduction (≈20×)."""
    if rtt_reduction_ms < 0:
        raise DomainError(f"RTT reduction must be >= 0 (got {rtt_reduction_ms})")
    return PLT_PER_RTT * rtt_reduction_ms
