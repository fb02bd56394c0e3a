#!/usr/bin/env python3
"""
Tests for routing-graph construction and K-shortest paths.

Usage:
    python test_graph.py
"""

import logging
import sys
from pathlib import Path

import networkx as nx
import numpy as np
import pytest

# Add app to path
sys.path.insert(0, str(Path(__file__).parent))

from app import datasets
from app.errors import DomainError, NoRouteError
from app.geo import SPEED_OF_LIGHT_KM_S, Constellation, GeoCoord, haversine_km
from app.graph import (
    GraphConfig,
    LinkKind,
    PathResult,
    RoutingStrategy,
    build_graph,
    k_shortest_paths,
    path_latency_ms,
    refresh_graph,
    topk_latency_ms,
)
from app.models import Relay
from app.speeds import idealized_speeds

FIXTURES = Path(__file__).parent / "fixtures"

FRANKFURT = Relay("A" * 40, GeoCoord(50.1109, 8.6821))
AMSTERDAM = Relay("B" * 40, GeoCoord(52.3676, 4.9041))
LONDON = Relay("C" * 40, GeoCoord(51.5074, -0.1278))
PARIS = Relay("D" * 40, GeoCoord(48.8566, 2.3522))


@pytest.fixture(scope="module")
def scene():
    constellation = Constellation(datasets.load_tle(FIXTURES / "tle.txt"))
    stations = datasets.load_sites(FIXTURES / "stations.csv")
    pops = datasets.load_sites(FIXTURES / "pops.csv")
    return constellation, stations, pops


def _satellite_graph(scene, t, strategy=RoutingStrategy.ISL_ENABLED, seed=1):
    constellation, stations, pops = scene
    return build_graph(
        constellation.positions_at(t),
        stations,
        pops,
        (FRANKFURT, AMSTERDAM),
        strategy,
        idealized_speeds(),
        np.random.default_rng(seed),
        constellation=constellation,
        snapshot_time=t,
    )


def _routable_time(scene, strategy=RoutingStrategy.ISL_ENABLED):
    constellation = scene[0]
    start = float(np.floor(constellation.latest_epoch))
    for step in range(60):
        t = start + 60.0 * step
        if k_shortest_paths(_satellite_graph(scene, t, strategy), k=1):
            return t
    pytest.fail("no routable snapshot within an hour of the TLE epoch")


# ---------------------------------------------------------------------------
#  Path search against brute force
# ---------------------------------------------------------------------------


def _brute_force(g, src, dst):
    paths = [(path_latency_ms(g, p), tuple(p)) for p in nx.all_simple_paths(g, src, dst)]
    return sorted(paths)


def test_k_shortest_matches_exhaustive_enumeration():
    rng = np.random.default_rng(42)
    checked = 0
    for _ in range(200):
        n = int(rng.integers(2, 9))
        m = int(rng.integers(1, min(16, n * (n - 1)) + 1))
        g = nx.gnm_random_graph(n, m, seed=int(rng.integers(1 << 30)), directed=True)
        for u, v in g.edges:
            g[u][v]["latency_ms"] = float(rng.uniform(0.1, 50.0))
        expected = _brute_force(g, 0, n - 1)
        for k in range(1, 11):
            got = k_shortest_paths(g, 0, n - 1, k)
            want = expected[:k]
            assert len(got) == len(want)
            assert [p.latency_ms for p in got] == pytest.approx([w[0] for w in want])
            assert [p.hops for p in got] == [w[1] for w in want]
        checked += bool(expected)
    assert checked > 50


def test_unreachable_destination_gives_no_paths():
    g = nx.DiGraph()
    g.add_edge(0, 1, latency_ms=1.0)
    g.add_node(2)
    assert k_shortest_paths(g, 0, 2, 3) == []


def test_paths_are_loop_free_and_ascending():
    g = nx.DiGraph()
    for u, v, w in [(0, 1, 1.0), (1, 0, 1.0), (1, 2, 1.0), (0, 2, 5.0), (1, 3, 1.0), (3, 2, 1.0)]:
        g.add_edge(u, v, latency_ms=w)
    paths = k_shortest_paths(g, 0, 2, 10)
    assert [p.latency_ms for p in paths] == [2.0, 3.0, 5.0]
    for p in paths:
        assert len(set(p.hops)) == len(p.hops)


def test_invalid_k_and_unknown_node():
    g = nx.DiGraph()
    g.add_edge(0, 1, latency_ms=1.0)
    with pytest.raises(DomainError):
        k_shortest_paths(g, 0, 1, 0)
    with pytest.raises(DomainError):
        k_shortest_paths(g, 0, 9, 1)


def test_topk_latency():
    paths = [PathResult(("a", "b"), 30.0), PathResult(("a", "c", "b"), 10.0), PathResult(("a", "d", "b"), 20.0)]
    assert topk_latency_ms(paths, 1) == 10.0
    assert topk_latency_ms(paths, 2) == 15.0
    # K above the number of available paths averages what exists
    assert topk_latency_ms(paths, 5) == 20.0
    with pytest.raises(NoRouteError):
        topk_latency_ms([], 1)


# ---------------------------------------------------------------------------
#  Graph construction
# ---------------------------------------------------------------------------


def test_terrestrial_only_graph_is_single_link():
    routing = build_graph(
        [], [], [], (LONDON, PARIS), "terrestrial", idealized_speeds(), np.random.default_rng(0)
    )
    assert routing.graph.number_of_edges() == 1
    (path,) = k_shortest_paths(routing, k=5)
    expected = haversine_km(LONDON.position, PARIS.position) / (2 * SPEED_OF_LIGHT_KM_S / 3) * 1000.0
    assert path.latency_ms == pytest.approx(expected)
    assert path.hops == (routing.source, routing.target)


def test_no_satellites_means_no_route():
    routing = build_graph(
        [], [], [], (LONDON, PARIS), RoutingStrategy.ISL_ENABLED, idealized_speeds(), np.random.default_rng(0)
    )
    assert k_shortest_paths(routing, k=3) == []


def test_same_endpoints_rejected():
    with pytest.raises(DomainError):
        build_graph([], [], [], (LONDON, LONDON), "terrestrial", idealized_speeds(), np.random.default_rng(0))


def test_edges_follow_outbound_direction(scene):
    t = _routable_time(scene)
    routing = _satellite_graph(scene, t)
    g = routing.graph
    kinds = {kind: routing.edges_of(kind) for kind in LinkKind}

    assert kinds[LinkKind.USL] and kinds[LinkKind.GSL] and kinds[LinkKind.GPL] and kinds[LinkKind.UPL]
    assert not kinds[LinkKind.IUL]
    assert all(u == routing.source for u, _, _ in kinds[LinkKind.USL])
    assert all(v == routing.target for _, v, _ in kinds[LinkKind.UPL])
    assert all(u.startswith("sat:") and v.startswith("gs:") for u, v, _ in kinds[LinkKind.GSL])
    assert all(u.startswith("gs:") and v.startswith("pop:") for u, v, _ in kinds[LinkKind.GPL])
    assert g.in_degree(routing.source) == 0
    assert g.out_degree(routing.target) == 0
    assert all(d["latency_ms"] > 0 for _, _, d in g.edges(data=True))

    for path in k_shortest_paths(routing, k=5):
        assert path.hops[0] == routing.source and path.hops[-1] == routing.target
        assert path.hops[1].startswith("sat:")
        assert path.hops[-2].startswith("pop:")


def test_bent_pipe_has_no_isl(scene):
    t = _routable_time(scene)
    routing = _satellite_graph(scene, t, RoutingStrategy.SINGLE_BENT_PIPE)
    assert routing.edges_of(LinkKind.ISL) == []
    for path in k_shortest_paths(routing, k=5):
        assert sum(h.startswith("sat:") for h in path.hops) == 1


def test_isl_only_improves_latency(scene):
    t = _routable_time(scene, RoutingStrategy.SINGLE_BENT_PIPE)
    bent = k_shortest_paths(_satellite_graph(scene, t, RoutingStrategy.SINGLE_BENT_PIPE), k=1)
    isl = k_shortest_paths(_satellite_graph(scene, t, RoutingStrategy.ISL_ENABLED), k=1)
    assert isl[0].latency_ms <= bent[0].latency_ms + 1e-9


def test_isl_topologies(scene):
    constellation, stations, pops = scene
    t = float(np.floor(constellation.latest_epoch))
    for topology in ("grid", "nearest"):
        routing = build_graph(
            constellation.positions_at(t),
            stations,
            pops,
            (FRANKFURT, AMSTERDAM),
            RoutingStrategy.ISL_ENABLED,
            idealized_speeds(),
            np.random.default_rng(3),
            config=GraphConfig(isl_topology=topology),
            constellation=constellation,
            snapshot_time=t,
        )
        isl = routing.edges_of(LinkKind.ISL)
        assert isl
        pairs = {(u, v) for u, v, _ in isl}
        assert all((v, u) in pairs for u, v in pairs)


def test_same_seed_builds_identical_graph(scene):
    t = float(np.floor(scene[0].latest_epoch)) + 600.0
    assert _satellite_graph(scene, t, seed=9).to_json() == _satellite_graph(scene, t, seed=9).to_json()


def test_refresh_moves_forward_only(scene):
    t = float(np.floor(scene[0].latest_epoch))
    routing = _satellite_graph(scene, t)
    later = refresh_graph(routing, t + 300.0, np.random.default_rng(5))
    assert later.snapshot_time == t + 300.0
    assert later.to_json() != routing.to_json()
    rebuilt = _satellite_graph(scene, t + 300.0, seed=5)
    assert later.to_json() == rebuilt.to_json()
    with pytest.raises(DomainError):
        refresh_graph(routing, t - 1.0, np.random.default_rng(5))


def test_refresh_without_constellation_keeps_satellites_and_says_so(scene, caplog):
    constellation, stations, pops = scene
    t = float(np.floor(constellation.latest_epoch))
    frozen = build_graph(
        constellation.positions_at(t),
        stations,
        pops,
        (FRANKFURT, AMSTERDAM),
        RoutingStrategy.ISL_ENABLED,
        idealized_speeds(),
        np.random.default_rng(1),
        snapshot_time=t,
    )
    with caplog.at_level(logging.DEBUG, logger="satsim"):
        later = refresh_graph(frozen, t + 300.0, np.random.default_rng(5))
    assert later.snapshot_time == t + 300.0
    assert any("without a constellation" in r.getMessage() for r in caplog.records)
    sat_nodes = [n for n, d in frozen.graph.nodes(data=True) if d["kind"] == "satellite"]
    assert sat_nodes
    for node in sat_nodes:
        assert later.graph.nodes[node] == frozen.graph.nodes[node]


@pytest.mark.parametrize(
    "name,expected",
    [
        ("isl_enabled", RoutingStrategy.ISL_ENABLED),
        ("single-bent-pipe", RoutingStrategy.SINGLE_BENT_PIPE),
        ("Terrestrial", RoutingStrategy.TERRESTRIAL_ONLY),
        ("isl", RoutingStrategy.ISL_ENABLED),
    ],
)
def test_strategy_names(name, expected):
    assert RoutingStrategy.from_name(name) is expected


def test_unknown_strategy_lists_choices():
    with pytest.raises(ValueError) as exc:
        RoutingStrategy.from_name("laser-mesh")
    assert "isl_enabled" in str(exc.value)


def test_link_sets_per_strategy():
    assert RoutingStrategy.TERRESTRIAL_ONLY.links == {LinkKind.IUL}
    assert LinkKind.ISL not in RoutingStrategy.SINGLE_BENT_PIPE.links
    assert RoutingStrategy.ISL_ENABLED.links - RoutingStrategy.SINGLE_BENT_PIPE.links == {LinkKind.ISL}
    assert LinkKind.IUL not in RoutingStrategy.ISL_ENABLED.links


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
