"""
Time-varying routing graph and K-shortest-path latency.

One graph is built per relay pair and snapshot. Edges are directed along the
outbound satellite path (source relay -> satellite(s) -> ground station ->
PoP -> destination relay), so a path can never bounce between stations and
satellites. Edge weights are one-way latencies in milliseconds.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from itertools import islice
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple, Union

import networkx as nx
import numpy as np
from scipy.spatial.distance import cdist

from .errors import DomainError, NoRouteError
from .geo import (
    SPEED_OF_LIGHT_KM_S,
    Constellation,
    GeoCoord,
    SatState,
    haversine_km,
    slant_geometry_many,
    to_cartesian,
)
from .logger import get_logger
from .models import GroundSite, Relay
from .speeds import SpeedModels, sample_speeds

logger = get_logger(__name__)


class NodeKind(str, Enum):
    USER = "user"
    SATELLITE = "satellite"
    GROUND_STATION = "ground_station"
    POP = "pop"


class LinkKind(str, Enum):
    IUL = "IUL"  # user - user
    USL = "USL"  # user - satellite
    ISL = "ISL"  # satellite - satellite
    GSL = "GSL"  # ground station - satellite
    GPL = "GPL"  # ground station - PoP
    UPL = "UPL"  # user - PoP


LINK_ENDPOINTS: Dict[LinkKind, FrozenSet[NodeKind]] = {
    LinkKind.IUL: frozenset({NodeKind.USER}),
    LinkKind.USL: frozenset({NodeKind.USER, NodeKind.SATELLITE}),
    LinkKind.ISL: frozenset({NodeKind.SATELLITE}),
    LinkKind.GSL: frozenset({NodeKind.GROUND_STATION, NodeKind.SATELLITE}),
    LinkKind.GPL: frozenset({NodeKind.GROUND_STATION, NodeKind.POP}),
    LinkKind.UPL: frozenset({NodeKind.USER, NodeKind.POP}),
}

_PREFIX = {
    NodeKind.USER: "relay",
    NodeKind.SATELLITE: "sat",
    NodeKind.GROUND_STATION: "gs",
    NodeKind.POP: "pop",
}


def node_id(kind: NodeKind, ident: str) -> str:
    return f"{_PREFIX[kind]}:{ident}"


class RoutingStrategy(str, Enum):
    TERRESTRIAL_ONLY = "terrestrial_only"
    SINGLE_BENT_PIPE = "single_bent_pipe"
    ISL_ENABLED = "isl_enabled"

    @property
    def links(self) -> FrozenSet[LinkKind]:
        if self is RoutingStrategy.TERRESTRIAL_ONLY:
            return frozenset({LinkKind.IUL})
        bent_pipe = frozenset({LinkKind.USL, LinkKind.GSL, LinkKind.GPL, LinkKind.UPL})
        if self is RoutingStrategy.SINGLE_BENT_PIPE:
            return bent_pipe
        return bent_pipe | {LinkKind.ISL}

    @property
    def uses_satellites(self) -> bool:
        return self is not RoutingStrategy.TERRESTRIAL_ONLY

    @classmethod
    def from_name(cls, name: Union[str, "RoutingStrategy"]) -> "RoutingStrategy":
        if isinstance(name, RoutingStrategy):
            return name
        key = str(name).strip().lower().replace("-", "_")
        aliases = {
            "terrestrial": cls.TERRESTRIAL_ONLY,
            "terrestrialonly": cls.TERRESTRIAL_ONLY,
            "bent_pipe": cls.SINGLE_BENT_PIPE,
            "singlebentpipe": cls.SINGLE_BENT_PIPE,
            "isl": cls.ISL_ENABLED,
            "islenabled": cls.ISL_ENABLED,
        }
        if key in aliases:
            return aliases[key]
        try:
            return cls(key)
        except ValueError:
            valid = ", ".join(s.value for s in cls)
            raise ValueError(f"unknown routing strategy '{name}' (expected one of: {valid})") from None


@dataclass(frozen=True)
class GraphConfig:
    elevation_deg: float = 25.0
    gpl_latency_ms: float = 5.0
    isl_processing_ms: float = 0.0
    isl_topology: str = "grid"  # "grid" | "nearest"
    isl_nearest_k: int = 4
    min_latency_ms: float = 1e-6

    def __post_init__(self):
        if self.isl_topology not in ("grid", "nearest"):
            raise ValueError(f"isl_topology must be 'grid' or 'nearest' (got {self.isl_topology})")
        if not self.gpl_latency_ms > 0 or not self.min_latency_ms > 0:
            raise ValueError("GPL latency and minimum edge latency must be > 0")

    @classmethod
    def from_experiment(cls, cfg) -> "GraphConfig":
        return cls(
            elevation_deg=cfg.elevation_deg,
            gpl_latency_ms=cfg.gpl_latency_ms,
            isl_processing_ms=cfg.isl_processing_ms,
            isl_topology=cfg.isl_topology,
            isl_nearest_k=cfg.isl_nearest_k,
        )


@dataclass(frozen=True)
class PathResult:
    hops: Tuple[str, ...]
    latency_ms: float

    def to_dict(self) -> dict:
        return {"hops": list(self.hops), "latency_ms": self.latency_ms}


@dataclass
class _Scene:
    """Everything needed to re-derive a pair graph at another time."""

    source: Relay
    target: Relay
    stations: List[GroundSite]
    pops: List[GroundSite]
    strategy: RoutingStrategy
    speeds: SpeedModels
    config: GraphConfig
    constellation: Optional[Constellation]
    sats: List[SatState]
    station_pop: Dict[str, Tuple[GroundSite, float]] = field(default_factory=dict)


@dataclass
class RoutingGraph:
    snapshot_time: float
    strategy: RoutingStrategy
    source: str
    target: str
    graph: nx.DiGraph
    scene: _Scene = field(repr=False)

    def edges_of(self, kind: LinkKind) -> List[Tuple[str, str, dict]]:
        return [(u, v, d) for u, v, d in self.graph.edges(data=True) if d["kind"] == kind.value]

    def to_dict(self) -> dict:
        nodes = []
        for nid in sorted(self.graph.nodes):
            attrs = self.graph.nodes[nid]
            nodes.append({"id": nid, **{k: attrs[k] for k in sorted(attrs)}})
        edges = [
            {"src": u, "dst": v, "kind": d["kind"], "length_km": d["length_km"], "latency_ms": d["latency_ms"]}
            for u, v, d in sorted(self.graph.edges(data=True), key=lambda e: (e[0], e[1]))
        ]
        return {
            "snapshot_time": self.snapshot_time,
            "strategy": self.strategy.value,
            "source": self.source,
            "target": self.target,
            "nodes": nodes,
            "edges": edges,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def visible_satellites(
    ground: GeoCoord, sats: Sequence[SatState], elevation_deg: float
) -> List[Tuple[SatState, float]]:
    """Satellites at or above ``elevation_deg`` with their slant range (km)."""
    if not sats:
        return []
    lats = np.array([s.position.lat for s in sats])
    lons = np.array([s.position.lon for s in sats])
    alts = np.array([s.altitude_km for s in sats])
    slant, elevation = slant_geometry_many(ground, lats, lons, alts)
    return [(sats[i], float(slant[i])) for i in np.flatnonzero(elevation >= elevation_deg)]


def _isl_pairs(sats: List[SatState], scene: _Scene) -> List[Tuple[int, int, float]]:
    """Undirected ISL pairs (i < j) with their 3-D chord length."""
    if len(sats) < 2:
        return []
    xyz = to_cartesian(
        np.array([s.position.lat for s in sats]),
        np.array([s.position.lon for s in sats]),
        6371.0 + np.array([s.altitude_km for s in sats]),
    )
    dist = cdist(xyz, xyz)
    pairs = set()
    cfg = scene.config
    constellation = scene.constellation

    if cfg.isl_topology == "grid" and constellation is not None and all(s.plane is not None for s in sats):
        by_plane: Dict[int, List[int]] = {}
        for i, s in enumerate(sats):
            by_plane.setdefault(s.plane, []).append(i)
        for plane, members in by_plane.items():
            ring = sorted(members, key=lambda i: (sats[i].arg_latitude_deg, sats[i].sat_id))
            if len(ring) == 2:
                pairs.add(tuple(sorted(ring)))
            elif len(ring) > 2:
                for a, b in zip(ring, ring[1:] + ring[:1]):
                    pairs.add((min(a, b), max(a, b)))
            neighbour = constellation.adjacent_plane(plane)
            if neighbour is None or neighbour not in by_plane:
                continue
            others = np.array(by_plane[neighbour])
            for i in members:
                j = int(others[np.argmin(dist[i, others])])
                pairs.add((min(i, j), max(i, j)))
    else:
        k = min(cfg.isl_nearest_k, len(sats) - 1)
        for i in range(len(sats)):
            order = np.argsort(dist[i], kind="stable")
            for j in order[1 : k + 1]:
                pairs.add((min(i, int(j)), max(i, int(j))))

    return [(i, j, float(dist[i, j])) for i, j in sorted(pairs)]


def _add_edge(g: nx.DiGraph, u: str, v: str, kind: LinkKind, length_km: float, latency_ms: float, floor: float):
    g.add_edge(u, v, kind=kind.value, length_km=float(length_km), latency_ms=max(float(latency_ms), floor))


def _populate(scene: _Scene, sats: List[SatState], t: float, rng: np.random.Generator) -> RoutingGraph:
    cfg = scene.config
    links = scene.strategy.links
    floor = cfg.min_latency_ms
    terrestrial = scene.speeds.terrestrial
    src = node_id(NodeKind.USER, scene.source.fingerprint)
    dst = node_id(NodeKind.USER, scene.target.fingerprint)

    g = nx.DiGraph()
    for relay, nid in ((scene.source, src), (scene.target, dst)):
        g.add_node(nid, kind=NodeKind.USER.value, lat=relay.position.lat, lon=relay.position.lon)

    if LinkKind.IUL in links:
        d = haversine_km(scene.source.position, scene.target.position)
        speed = terrestrial.sample(d, rng.random())
        _add_edge(g, src, dst, LinkKind.IUL, d, d / speed * 1000.0, floor)

    if not scene.strategy.uses_satellites:
        return RoutingGraph(t, scene.strategy, src, dst, g, scene)

    sats = sorted(sats, key=lambda s: s.sat_id)
    for s in sats:
        g.add_node(
            node_id(NodeKind.SATELLITE, s.sat_id),
            kind=NodeKind.SATELLITE.value,
            lat=s.position.lat,
            lon=s.position.lon,
            altitude_km=s.altitude_km,
        )
    for site in scene.stations:
        g.add_node(node_id(NodeKind.GROUND_STATION, site.site_id), kind=NodeKind.GROUND_STATION.value,
                   lat=site.position.lat, lon=site.position.lon)
    for site in scene.pops:
        g.add_node(node_id(NodeKind.POP, site.site_id), kind=NodeKind.POP.value,
                   lat=site.position.lat, lon=site.position.lon)

    satellite = scene.speeds.satellite

    # USL: outbound from the source relay only
    visible = visible_satellites(scene.source.position, sats, cfg.elevation_deg)
    if visible:
        speeds = sample_speeds(satellite, rng.random(len(visible)))
        for (sat, slant), speed in zip(visible, speeds):
            _add_edge(g, src, node_id(NodeKind.SATELLITE, sat.sat_id), LinkKind.USL, slant, slant / speed * 1000.0, floor)

    if LinkKind.ISL in links:
        for i, j, chord in _isl_pairs(sats, scene):
            latency = chord / SPEED_OF_LIGHT_KM_S * 1000.0 + cfg.isl_processing_ms
            a, b = node_id(NodeKind.SATELLITE, sats[i].sat_id), node_id(NodeKind.SATELLITE, sats[j].sat_id)
            _add_edge(g, a, b, LinkKind.ISL, chord, latency, floor)
            _add_edge(g, b, a, LinkKind.ISL, chord, latency, floor)

    for site in sorted(scene.stations, key=lambda s: s.site_id):
        gs = node_id(NodeKind.GROUND_STATION, site.site_id)
        visible = visible_satellites(site.position, sats, cfg.elevation_deg)
        if visible:
            speeds = sample_speeds(satellite, rng.random(len(visible)))
            for (sat, slant), speed in zip(visible, speeds):
                _add_edge(g, node_id(NodeKind.SATELLITE, sat.sat_id), gs, LinkKind.GSL, slant,
                          slant / speed * 1000.0, floor)
        nearest = scene.station_pop.get(site.site_id)
        if nearest is not None:
            pop, length = nearest
            _add_edge(g, gs, node_id(NodeKind.POP, pop.site_id), LinkKind.GPL, length, cfg.gpl_latency_ms, floor)

    # UPL: into the destination relay only
    for site in sorted(scene.pops, key=lambda s: s.site_id):
        d = haversine_km(site.position, scene.target.position)
        speed = terrestrial.sample(d, rng.random())
        _add_edge(g, node_id(NodeKind.POP, site.site_id), dst, LinkKind.UPL, d, d / speed * 1000.0, floor)

    return RoutingGraph(t, scene.strategy, src, dst, g, scene)


def _nearest_pops(stations: Iterable[GroundSite], pops: Sequence[GroundSite]) -> Dict[str, Tuple[GroundSite, float]]:
    result: Dict[str, Tuple[GroundSite, float]] = {}
    ordered = sorted(pops, key=lambda p: p.site_id)
    for site in stations:
        best = None
        for pop in ordered:
            d = haversine_km(site.position, pop.position)
            if best is None or d < best[1]:
                best = (pop, d)
        if best is not None:
            result[site.site_id] = best
    return result


def build_graph(
    sats: Sequence[SatState],
    stations: Sequence[GroundSite],
    pops: Sequence[GroundSite],
    endpoints: Tuple[Relay, Relay],
    strategy: RoutingStrategy,
    speeds: SpeedModels,
    rng: np.random.Generator,
    config: GraphConfig = GraphConfig(),
    constellation: Optional[Constellation] = None,
    snapshot_time: Optional[float] = None,
) -> RoutingGraph:
    """
    Build the routing graph of one relay pair at one snapshot.

    Args:
        sats: Satellite states propagated to the snapshot time
        stations: Ground stations
        pops: Points of presence
        endpoints: (source relay, destination relay)
        strategy: Link-kind availability
        speeds: Terrestrial bucketed model and satellite ECDF
        rng: Caller-owned uniform stream; every sampled edge draws once
        config: Visibility threshold, GPL latency, ISL topology
        constellation: Needed by refresh_graph to re-propagate satellites

    Missing stations or PoPs leave the satellite side disconnected; path
    search then reports no route.
    """
    source, target = endpoints
    if source.fingerprint == target.fingerprint:
        raise DomainError(f"pair endpoints must differ ({source.fingerprint})")
    strategy = RoutingStrategy.from_name(strategy)
    if snapshot_time is None:
        snapshot_time = sats[0].epoch if sats else 0.0
    scene = _Scene(
        source=source,
        target=target,
        stations=list(stations),
        pops=list(pops),
        strategy=strategy,
        speeds=speeds,
        config=config,
        constellation=constellation,
        sats=list(sats),
        station_pop=_nearest_pops(stations, pops),
    )
    if strategy.uses_satellites and (not stations or not pops):
        logger.debug("satellite graph without stations or PoPs; destination may be unreachable")
    return _populate(scene, list(sats), snapshot_time, rng)


def refresh_graph(graph: RoutingGraph, t: float, rng: np.random.Generator) -> RoutingGraph:
    """
    Re-derive the graph at time ``t`` with freshly sampled speeds.

    Satellites are re-propagated through the constellation the graph was
    built with; a graph built from bare states keeps them where they were.
    """
    if t < graph.snapshot_time:
        raise DomainError(f"refresh time {t} precedes snapshot {graph.snapshot_time}")
    scene = graph.scene
    if scene.constellation is not None:
        sats = scene.constellation.positions_at(t)
    else:
        logger.debug(
            f"refresh to t={t} without a constellation; {len(scene.sats)} satellite(s) keep their "
            f"positions from t={graph.snapshot_time}"
        )
        sats = scene.sats
    return _populate(scene, list(sats), t, rng)


def path_latency_ms(g: nx.DiGraph, hops: Sequence[str]) -> float:
    total = 0.0
    for u, v in zip(hops, hops[1:]):
        total += g[u][v]["latency_ms"]
    return total


def k_shortest_paths(
    graph: Union[RoutingGraph, nx.Graph], src: Optional[str] = None, dst: Optional[str] = None, k: int = 10
) -> List[PathResult]:
    """
    Up to ``k`` loop-free paths in ascending latency (Yen's algorithm).

    An unreachable destination yields an empty list.
    """
    if k < 1:
        raise DomainError(f"K must be >= 1 (got {k})")
    if isinstance(graph, RoutingGraph):
        src = src or graph.source
        dst = dst or graph.target
        g = graph.graph
    else:
        g = graph
    for node in (src, dst):
        if node not in g:
            raise DomainError(f"node {node!r} is not in the graph")

    try:
        paths = list(islice(nx.shortest_simple_paths(g, src, dst, weight="latency_ms"), k))
    except nx.NetworkXNoPath:
        return []

    results = [PathResult(tuple(p), path_latency_ms(g, p)) for p in paths]
    results.sort(key=lambda r: r.latency_ms)
    return results


def topk_latency_ms(paths: Sequence[PathResult], k: int) -> float:
    """Mean latency of the ``min(k, len(paths))`` cheapest paths."""
    if not paths:
        raise NoRouteError("no path to average")
    if k < 1:
        raise DomainError(f"K must be >= 1 (got {k})")
    chosen = sorted(p.latency_ms for p in paths)[:k]
    return sum(chosen) / len(chosen)
