#!/usr/bin/env python3
"""
Tests for the dual-homing scheduler, deployment scenarios and impact metrics.

Usage:
    python test_sator.py
"""

import math
import sys
from pathlib import Path

import numpy as np
import pytest

# Add app to path
sys.path.insert(0, str(Path(__file__).parent))

from app.errors import DomainError, InsufficientDataError, UndefinedConditionalError
from app.geo import GeoCoord
from app.models import Circuit, Interface, Relay, pair_id
from app.sator import (
    DeploymentPlan,
    DeploymentScenario,
    IfaceHistory,
    SchedulerConfig,
    adversary_visibility,
    assign_deployment,
    evaluate_deployment,
    faster_iface_entropy,
    probe_overhead_bytes_per_day,
    rank_peers,
    replay_dual_homing,
    rtt_to_plt_ms,
    run_dual_homing,
    tail_correlation,
    tail_correlation_table,
    update_priorities,
    visibility_curve,
)
from app.sim import LatencySeries, Timeline


def _timeline(steps=12, step_s=300.0):
    return Timeline(start=0.0, step_s=step_s, duration_s=step_s * steps)


def _pair(sat, ter, timeline, sid="p"):
    times = timeline.times()
    return (
        LatencySeries(sid, Interface.SATELLITE, times, np.asarray(sat, dtype=float)),
        LatencySeries(sid, Interface.TERRESTRIAL, times, np.asarray(ter, dtype=float)),
    )


def _relay(fp, weight=1.0, hosting=None):
    return Relay(fp, GeoCoord(0.0, 0.0), bandwidth_weight=weight, hosting=hosting)


# ---------------------------------------------------------------------------
#  Scheduler
# ---------------------------------------------------------------------------


def test_full_budget_tracks_the_faster_interface():
    timeline = _timeline(steps=24)
    cfg = SchedulerConfig(interval_s=300.0, budget=10, mix=0.5)
    for seed in range(50):
        rng = np.random.default_rng(seed)
        peers = {
            f"peer{i}": _pair(rng.uniform(20, 120, 24), rng.uniform(20, 120, 24), timeline, f"peer{i}")
            for i in range(5)
        }
        effective = run_dual_homing(peers, cfg, timeline, seed)
        for peer, (sat, ter) in peers.items():
            out = effective[peer].samples
            assert out[0] == ter.samples[0]
            np.testing.assert_array_equal(out[1:], np.minimum(sat.samples, ter.samples)[1:])
            assert effective[peer].interface is Interface.DUAL


def test_zero_budget_stays_terrestrial():
    timeline = _timeline()
    rng = np.random.default_rng(0)
    peers = {"a": _pair(rng.uniform(10, 20, 12), rng.uniform(50, 60, 12), timeline, "a")}
    result = replay_dual_homing(peers, SchedulerConfig(budget=0), timeline)
    np.testing.assert_array_equal(result.effective["a"].samples, peers["a"][1].samples)
    assert result.satellite_share() == 0.0
    assert result.rounds == 11


def test_missing_value_falls_back_to_other_interface():
    timeline = _timeline(steps=4)
    sat = [10.0, 10.0, np.nan, np.nan]
    ter = [50.0, 50.0, 50.0, np.nan]
    result = replay_dual_homing({"a": _pair(sat, ter, timeline, "a")}, SchedulerConfig(budget=1), timeline)
    out = result.effective["a"].samples
    assert out[:3].tolist() == [50.0, 10.0, 50.0]
    assert math.isnan(out[3])
    assert result.uses_satellite["a"].tolist() == [False, True, False, False]


def test_missing_probe_updates_staleness_only():
    history = IfaceHistory()
    history.add(300.0, float("nan"), 40.0)
    assert history.last_time == 300.0
    assert history.records == []
    assert history.p_sat is None
    with pytest.raises(DomainError):
        history.add(0.0, 10.0, 20.0)


def test_slack_prefers_satellite_within_margin():
    timeline = _timeline(steps=3)
    cfg = SchedulerConfig(budget=1, slack_percent=10.0)
    out = run_dual_homing({"a": _pair([105.0] * 3, [100.0] * 3, timeline, "a")}, cfg, timeline)["a"]
    assert out.samples.tolist() == [100.0, 105.0, 105.0]


def test_entropy_of_faster_interface():
    history = IfaceHistory()
    assert faster_iface_entropy(history) == 1.0
    history.add(0.0, 10.0, 20.0)
    history.add(300.0, 10.0, 20.0)
    assert faster_iface_entropy(history) == 0.0
    history.add(600.0, 30.0, 20.0)
    history.add(900.0, 30.0, 20.0)
    assert faster_iface_entropy(history) == pytest.approx(1.0)


def test_priorities_mix_entropy_and_staleness():
    measured_long_ago = IfaceHistory()
    measured_long_ago.add(0.0, 10.0, 20.0)
    measured_recently = IfaceHistory()
    measured_recently.add(300.0, 10.0, 20.0)
    state = {"a": measured_long_ago, "b": measured_recently, "c": IfaceHistory()}

    scores = update_priorities(state, 600.0, 0.5)
    assert scores == pytest.approx({"a": 0.5, "b": 0.25, "c": 1.0})
    assert rank_peers(scores) == ["c", "a", "b"]
    assert update_priorities(state, 600.0, 1.0)["a"] == 0.0
    with pytest.raises(DomainError):
        update_priorities(state, 600.0, 1.5)


def test_rank_ties():
    scores = {"b": 1.0, "a": 1.0, "c": 0.5}
    assert rank_peers(scores) == ["a", "b", "c"]
    first = rank_peers(scores, np.random.default_rng(4))
    assert first == rank_peers(scores, np.random.default_rng(4))
    assert first[-1] == "c"


def test_rank_ignores_float_noise_in_scores():
    scores = {"b": 0.7, "a": 0.7 - 1e-12, "c": 0.7 + 1e-12, "d": 0.2}
    assert rank_peers(scores) == ["a", "b", "c", "d"]
    assert rank_peers({"b": 0.5, "a": 0.5 - 1e-6}) == ["b", "a"]


@pytest.mark.parametrize(
    "kwargs", [{"interval_s": 0.0}, {"budget": -1}, {"mix": 1.1}, {"slack_percent": -1.0}, {"tie_break": "coin"}]
)
def test_scheduler_config_validation(kwargs):
    with pytest.raises(DomainError):
        SchedulerConfig(**kwargs)


def test_unaligned_series_rejected():
    timeline = _timeline(steps=4)
    sat, ter = _pair([1.0] * 4, [2.0] * 4, timeline)
    with pytest.raises(DomainError):
        run_dual_homing({"a": (sat, ter)}, SchedulerConfig(), _timeline(steps=5))


# ---------------------------------------------------------------------------
#  Deployment
# ---------------------------------------------------------------------------


def _zipf_relays(count=200):
    return [_relay(f"{i:040X}", weight=1000.0 / (i + 1)) for i in range(count)]


def test_scenarios_order_by_captured_bandwidth():
    relays = _zipf_relays()
    total = sum(r.bandwidth_weight for r in relays)
    weight = {r.fingerprint: r.bandwidth_weight for r in relays}
    shares = {}
    for scenario in DeploymentScenario:
        captured = []
        for seed in range(20):
            plan = assign_deployment(relays, scenario, 20, seed)
            captured.append(sum(weight[fp] for fp in plan.members) / total)
        shares[scenario] = float(np.mean(captured))
    assert shares[DeploymentScenario.TOP_N] >= shares[DeploymentScenario.WEIGHTED_N]
    assert shares[DeploymentScenario.WEIGHTED_N] >= shares[DeploymentScenario.RANDOM_N]


@pytest.mark.parametrize("scenario", ["top", "weighted", "random"])
def test_smaller_plans_are_nested(scenario):
    relays = _zipf_relays(50)
    small = assign_deployment(relays, scenario, 5, seed=9)
    large = assign_deployment(relays, scenario, 15, seed=9)
    assert len(small.members) == 5 and len(large.members) == 15
    assert small.members <= large.members


def test_top_n_ties_by_fingerprint():
    relays = [_relay("C" * 40, 5.0), _relay("A" * 40, 5.0), _relay("B" * 40, 9.0)]
    plan = assign_deployment(relays, "top", 2, seed=0)
    assert plan.members == {"B" * 40, "A" * 40}


def test_excluded_hosting_and_capping():
    relays = [_relay("A" * 40, 9.0, "cloud"), _relay("B" * 40, 5.0, "isp"), _relay("C" * 40, 1.0, "isp")]
    plan = assign_deployment(relays, "top", 5, seed=0, exclude_hosting=["Cloud"])
    assert plan.n == 2
    assert plan.members == {"B" * 40, "C" * 40}
    assert plan.exclude_hosting == ("cloud",)
    with pytest.raises(DomainError):
        assign_deployment(relays, "top", -1, seed=0)


def test_zero_weight_relays_never_drawn_while_weight_remains():
    relays = [_relay("A" * 40, 0.0), _relay("B" * 40, 3.0), _relay("C" * 40, 1.0)]
    for seed in range(20):
        plan = assign_deployment(relays, "weighted", 2, seed)
        assert plan.members == {"B" * 40, "C" * 40}


def test_equal_weights_make_weighted_match_random():
    relays = [_relay(f"{i:040X}", weight=1.0) for i in range(10)]
    runs = 1000
    for scenario in ("weighted", "random"):
        counts = {r.fingerprint: 0 for r in relays}
        for seed in range(runs):
            for fp in assign_deployment(relays, scenario, 3, seed).members:
                counts[fp] += 1
        for fp, count in counts.items():
            assert count / runs == pytest.approx(0.3, abs=0.06), (scenario, fp)


@pytest.mark.parametrize(
    "name,expected",
    [("TopN", DeploymentScenario.TOP_N), ("weighted-n", DeploymentScenario.WEIGHTED_N), ("random_n", DeploymentScenario.RANDOM_N)],
)
def test_scenario_names(name, expected):
    assert DeploymentScenario.from_name(name) is expected


def test_plan_serialises():
    plan = assign_deployment(_zipf_relays(10), "weighted", 3, seed=2)
    assert DeploymentPlan.from_dict(plan.to_dict()) == plan


# ---------------------------------------------------------------------------
#  Evaluation
# ---------------------------------------------------------------------------

A, B, C, D = ("A" * 40, "B" * 40, "C" * 40, "D" * 40)


def _store(timeline):
    steps = timeline.n_steps
    store = {}
    for src, dst in [(A, B), (B, C), (B, D)]:
        pid = pair_id(src, dst)
        store[pid] = _pair([50.0] * steps, [100.0] * steps, timeline, pid)
    return store


def _plan(members):
    return DeploymentPlan(DeploymentScenario.TOP_N, len(members), frozenset(members), seed=1)


def test_full_deployment_reduces_every_circuit():
    timeline = _timeline(steps=20)
    circuits = [Circuit(A, B, C), Circuit(A, B, D)]
    report = evaluate_deployment(
        circuits, _store(timeline), _plan({A, B, C, D}), SchedulerConfig(budget=10), timeline, [50, 95], min_samples=10
    )
    row = report.row("circuits", 50)
    assert row["count"] == 2
    assert row["fraction_reduced"] == 1.0
    assert row["mean_abs_reduction_ms"] == pytest.approx(100.0)
    assert row["mean_rel_reduction_pct"] == pytest.approx(50.0)
    assert row["plt_reduction_ms"] == pytest.approx(2000.0)
    assert report.row("pairs", 50)["count"] == 3
    assert report.exceedance["circuits"]["rel_gt_25pct"] == 1.0
    assert report.skipped["circuits_without_series"] == 0


def test_partial_deployment_only_reduces_member_hops():
    timeline = _timeline(steps=20)
    circuits = [Circuit(A, B, C)]
    report = evaluate_deployment(
        circuits, _store(timeline), _plan({A}), SchedulerConfig(budget=10), timeline, [50], min_samples=10
    )
    assert report.row("pairs", 50)["fraction_reduced"] == pytest.approx(0.5)
    assert report.row("circuits", 50)["mean_rel_reduction_pct"] == pytest.approx(25.0)


def test_empty_deployment_changes_nothing():
    timeline = _timeline(steps=20)
    circuits = [Circuit(A, B, C), Circuit(C, A, D)]
    report = evaluate_deployment(
        circuits, _store(timeline), _plan(set()), SchedulerConfig(), timeline, [50], min_samples=10
    )
    assert report.skipped["circuits_without_series"] == 1
    all_row = report.row("circuits", "all")
    assert all_row["fraction_reduced"] == 0.0
    assert all_row["mean_rel_reduction_all_pct"] == 0.0
    with pytest.raises(KeyError):
        report.row("circuits", 75)


def test_reduction_follows_scenario_order_under_bandwidth_weighted_circuits():
    relays = _zipf_relays(30)
    fps = [r.fingerprint for r in relays]
    weights = np.array([r.bandwidth_weight for r in relays])
    rng = np.random.default_rng(0)
    draw = weights / weights.sum()
    circuits = [Circuit(*(fps[i] for i in rng.choice(30, 3, replace=False, p=draw))) for _ in range(200)]

    timeline = _timeline(steps=20)
    store = {}
    for circuit in circuits:
        for src, dst in circuit.hops():
            pid = pair_id(src, dst)
            if pid not in store:
                gain = 20.0 + 30.0 * rng.random()
                store[pid] = _pair([100.0 - gain] * 20, [100.0] * 20, timeline, pid)

    def reduction(scenario, seed):
        plan = assign_deployment(relays, scenario, 6, seed)
        report = evaluate_deployment(circuits, store, plan, SchedulerConfig(budget=500), timeline, [50], min_samples=10)
        return report.row("circuits", 50)["mean_abs_reduction_ms"]

    top = reduction("top", 0)
    weighted = np.mean([reduction("weighted", seed) for seed in range(8)])
    uniform = np.mean([reduction("random", seed) for seed in range(8)])
    assert top >= weighted >= uniform
    assert uniform > 0.0


# ---------------------------------------------------------------------------
#  Adversary, tails and impact
# ---------------------------------------------------------------------------


def test_adversary_visibility():
    circuits = [Circuit(A, B, C), Circuit(C, D, A)]
    pairs = [(A, B), (B, C), (C, D), (D, A)]
    seen = adversary_visibility(_plan({A, B}), pairs, circuits)
    assert seen == {"pair_fraction": 0.5, "circuit_fraction": 0.5}


def test_visibility_curve_ends_at_full_exposure():
    relays = _zipf_relays(12)
    fps = [r.fingerprint for r in relays]
    circuits = [Circuit(fps[i], fps[(i + 1) % 12], fps[(i + 2) % 12]) for i in range(12)]
    pairs = sorted({hop for c in circuits for hop in c.hops()})
    curve = visibility_curve(relays, "random", [2, 4, 40], seed=3, pairs=pairs, circuits=circuits)
    assert [row["n"] for row in curve] == [2, 4, 12]
    assert curve[-1]["pair_fraction"] == 1.0
    assert curve[-1]["circuit_fraction"] == 1.0
    fractions = [row["pair_fraction"] for row in curve]
    assert fractions == sorted(fractions)
    circuit_fractions = [row["circuit_fraction"] for row in curve]
    assert circuit_fractions == sorted(circuit_fractions)


def test_independent_series_have_base_rate_tail_correlation():
    n = 100_000
    timeline = _timeline(steps=n, step_s=1.0)
    rng = np.random.default_rng(8)
    a, b = _pair(rng.gamma(4.0, 10.0, n), rng.gamma(4.0, 10.0, n), timeline)
    assert tail_correlation(a, b, q=95, min_joint_samples=100) == pytest.approx(0.05, abs=0.015)
    assert tail_correlation(a, a, q=95, min_joint_samples=100) == 1.0


def test_tail_correlation_ignores_monotone_rescaling():
    n = 2000
    timeline = _timeline(steps=n, step_s=1.0)
    rng = np.random.default_rng(12)
    shared = rng.gamma(2.0, 5.0, n)
    a, b = _pair(shared + rng.gamma(4.0, 10.0, n), shared + rng.gamma(4.0, 10.0, n), timeline)
    expected = tail_correlation(a, b, q=90, min_joint_samples=100)
    for transform in (lambda x: 3.0 * x + 1.0, np.sqrt, np.log):
        ta, tb = _pair(transform(a.samples), transform(b.samples), timeline)
        assert tail_correlation(ta, tb, q=90, min_joint_samples=100) == expected


def test_tail_correlation_errors():
    timeline = _timeline(steps=20)
    constant, varied = _pair([10.0] * 20, np.arange(1.0, 21.0), timeline)
    with pytest.raises(UndefinedConditionalError):
        tail_correlation(constant, varied, q=95, min_joint_samples=10)
    with pytest.raises(InsufficientDataError):
        tail_correlation(varied, constant, q=95, min_joint_samples=50)


def test_tail_correlation_table():
    timeline = _timeline(steps=40)
    rng = np.random.default_rng(1)
    series = {
        name: LatencySeries(name, Interface.SATELLITE, timeline.times(), rng.uniform(10, 50, 40))
        for name in ("x", "y", "z")
    }
    table = tail_correlation_table(series, q=75, min_joint_samples=10)
    assert list(table.index) == ["x", "y", "z"]
    assert np.isnan(table.loc["x", "x"])
    assert 0.0 <= table.loc["x", "y"] <= 1.0


def test_probe_overhead():
    assert probe_overhead_bytes_per_day(50, 300, 104) == 2_995_200
    with pytest.raises(DomainError):
        probe_overhead_bytes_per_day(50, 0)


def test_rtt_to_plt():
    assert rtt_to_plt_ms(5.0) == 100.0
    with pytest.raises(DomainError):
        rtt_to_plt_ms(-1.0)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
