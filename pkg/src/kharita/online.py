"""Streaming road-map construction from consecutive GPS point pairs.

The offline pipeline's two phases (clustering, then sparsification)
collapse into a single pass here: each incoming pair is densified, every
densified point either joins the nearest node (incremental running
means, hard heading gate) or starts a new one, and edges are admitted
through the spanner test at insertion time. Staleness marking and
periodic re-sparsification keep long-running maps current and sparse.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace

from .clustering import ClusterCentroid
from .geo import (
    GpsPoint,
    angle_diff_deg,
    initial_bearing_deg,
    normalize_heading,
    vincenty_m,
)
from .graphs import MIN_EDGE_WEIGHT_M, RoadGraph, SpannerConfig, greedy_spanner
from .spatial import GridIndex

log = logging.getLogger(__name__)


@dataclass
class OnlineConfig:
    clustering_radius_cr: float = 20.0    # meters
    sampling_rate_sr: float = 20.0        # meters
    heading_tolerance_ha: float = 45.0    # degrees
    alpha: float = math.sqrt(2.0)
    staleness_horizon_s: float = 7 * 86400.0
    resparsify_interval: int = 100000     # pairs between spanner sweeps

    def validate(self) -> None:
        if self.clustering_radius_cr <= 0:
            raise ValueError("clustering_radius_cr must be positive")
        if self.sampling_rate_sr <= 0:
            raise ValueError("sampling_rate_sr must be positive")
        if not 0 < self.heading_tolerance_ha <= 180:
            raise ValueError("heading_tolerance_ha must be in (0, 180]")
        if self.alpha <= 1.0:
            raise ValueError("alpha must exceed 1")
        if self.staleness_horizon_s <= 0:
            raise ValueError("staleness_horizon_s must be positive")
        if self.resparsify_interval < 1:
            raise ValueError("resparsify_interval must be at least 1")


class StreamState:
    """Mutable state of one online map build.

    Single writer: process_pair, mark_stale and resparsify must be
    serialized per state. Read-only snapshots between calls are safe.
    Use the same config instance (or an equal one) for every call on a
    given state; the spatial index is sized from it at construction.
    """

    def __init__(self, cfg: OnlineConfig):
        cfg.validate()
        self.graph = RoadGraph()
        self.prev_node: dict[str, int] = {}      # vehicle_id -> last node
        self.pairs_processed = 0
        self._index = GridIndex(cfg.clustering_radius_cr)
        self._hsum: dict[int, tuple[float, float]] = {}  # node -> (sum sin, sum cos)

    def _node_pos(self, item: int) -> tuple[float, float]:
        n = self.graph.nodes[item]
        return n.lat, n.lon

    def forget_vehicle(self, vehicle_id: str) -> None:
        """Drop the pairing anchor so no edge spans a gap in the feed."""
        self.prev_node.pop(vehicle_id, None)


def _lerp_speed(a: GpsPoint, b: GpsPoint, f: float) -> float | None:
    if a.speed_kmh is None:
        return b.speed_kmh
    if b.speed_kmh is None:
        return a.speed_kmh
    return a.speed_kmh + f * (b.speed_kmh - a.speed_kmh)


def _densify_pair(x_i: GpsPoint, x_next: GpsPoint, sr: float):
    """Expand a pair into points spaced close to sr, endpoints included.

    Returns (points, bearing). Intermediate points travel along the pair
    and carry its bearing; the endpoints keep their measured headings,
    falling back to the bearing when a heading is missing. bearing is
    None only when the fixes coincide and neither carries a heading.
    """
    d = vincenty_m(x_i.lat, x_i.lon, x_next.lat, x_next.lon)
    if d > 1e-9:
        bearing = initial_bearing_deg(x_i.lat, x_i.lon, x_next.lat, x_next.lon)
    elif x_i.heading_deg is not None:
        bearing = x_i.heading_deg
    else:
        bearing = x_next.heading_deg
    first = x_i if x_i.heading_deg is not None else replace(x_i, heading_deg=bearing)
    last = x_next if x_next.heading_deg is not None else replace(x_next, heading_deg=bearing)
    k = max(1, int(d // sr))
    pts = [first]
    for j in range(1, k):
        f = j / k
        pts.append(GpsPoint(x_i.vehicle_id,
                            x_i.timestamp + f * (x_next.timestamp - x_i.timestamp),
                            x_i.lat + f * (x_next.lat - x_i.lat),
                            x_i.lon + f * (x_next.lon - x_i.lon),
                            _lerp_speed(x_i, x_next, f),
                            bearing))
    pts.append(last)
    return pts, bearing


def _update_node(state: StreamState, item: int, p: GpsPoint) -> None:
    """Fold one assigned point into a node's running statistics."""
    n = state.graph.nodes[item]
    k = n.support + 1
    n.lat += (p.lat - n.lat) / k
    n.lon += (p.lon - n.lon) / k
    s, c = state._hsum[item]
    r = math.radians(p.heading_deg)
    s, c = s + math.sin(r), c + math.cos(r)
    state._hsum[item] = (s, c)
    if abs(s) > 1e-12 or abs(c) > 1e-12:
        n.heading_deg = normalize_heading(math.degrees(math.atan2(s, c)))
    n.support = k
    if p.speed_kmh is not None:
        n.max_speed_kmh = max(n.max_speed_kmh, p.speed_kmh)
    n.last_seen = max(n.last_seen, p.timestamp)
    n.active = True
    state._index.move(item, n.lat, n.lon)


def _assign_or_create(state: StreamState, p: GpsPoint, cfg: OnlineConfig) -> int:
    """Node id the point lands on: the nearest node when it is within
    the clustering radius and heading tolerance, else a fresh node."""
    d, item = state._index.nearest(p.lat, p.lon, cfg.clustering_radius_cr,
                                   state._node_pos)
    if item >= 0 and angle_diff_deg(state.graph.nodes[item].heading_deg,
                                    p.heading_deg) <= cfg.heading_tolerance_ha:
        _update_node(state, item, p)
        return item
    node = ClusterCentroid(p.lat, p.lon, normalize_heading(p.heading_deg),
                           support=1, heading_var_deg=0.0,
                           max_speed_kmh=p.speed_kmh if p.speed_kmh is not None else 0.0,
                           last_seen=p.timestamp, active=True)
    nid = state.graph.add_node(node)
    state._index.insert(nid, p.lat, p.lon)
    r = math.radians(node.heading_deg)
    state._hsum[nid] = (math.sin(r), math.cos(r))
    return nid


def _maybe_link(state: StreamState, u: int, v: int,
                bearing: float | None, cfg: OnlineConfig) -> None:
    """Record the transition u -> v: bump the edge when it exists,
    otherwise create it if the heading gates and spanner test allow."""
    nu, nv = state.graph.nodes[u], state.graph.nodes[v]
    e = state.graph.edges.get((u, v))
    if e is not None:
        e.traj_count += 1
        e.last_seen = max(e.last_seen, nv.last_seen)
        e.active = True
        return
    ha = cfg.heading_tolerance_ha
    if angle_diff_deg(nu.heading_deg, nv.heading_deg) > ha:
        return
    if bearing is not None and angle_diff_deg(nu.heading_deg, bearing) > ha:
        return
    w = max(vincenty_m(nu.lat, nu.lon, nv.lat, nv.lon), MIN_EDGE_WEIGHT_M)
    bound = cfg.alpha * w
    if state.graph.shortest_dist(u, v, cutoff=bound) <= bound:
        return
    state.graph.add_edge(u, v, w, traj_count=1, last_seen=nv.last_seen)


def process_pair(state: StreamState, x_i: GpsPoint, x_next: GpsPoint,
                 cfg: OnlineConfig) -> StreamState:
    """Consume one consecutive pair of fixes from a single vehicle.

    The pair is densified to the sampling rate; each densified point is
    assigned to a node or becomes one, and each node-to-node transition
    may add an edge. A vehicle seen for the first time contributes its
    nodes without a leading edge. The pair's first point is skipped when
    the vehicle already has an anchor node, because that fix was the
    previous pair's tail and is already folded in.
    """
    vid = x_i.vehicle_id
    pts, bearing = _densify_pair(x_i, x_next, cfg.sampling_rate_sr)
    start = 1 if vid in state.prev_node else 0
    for p in pts[start:]:
        if p.heading_deg is None:
            continue    # coincident headingless fixes: nothing to orient by
        v_star = _assign_or_create(state, p, cfg)
        u = state.prev_node.get(vid)
        if u is not None and u != v_star:
            _maybe_link(state, u, v_star, bearing, cfg)
        state.prev_node[vid] = v_star
    state.pairs_processed += 1
    return state


def mark_stale(state: StreamState, now: float, cfg: OnlineConfig) -> StreamState:
    """Deactivate nodes and edges not visited within the staleness
    horizon. Inactive elements drop out of exports and spanner distance
    queries but stay in the graph; a later traversal reactivates them.
    """
    cutoff = now - cfg.staleness_horizon_s
    nodes = edges = 0
    for n in state.graph.nodes:
        if n.active and n.last_seen < cutoff:
            n.active = False
            nodes += 1
    for e in state.graph.edges.values():
        if e.active and e.last_seen < cutoff:
            e.active = False
            edges += 1
    if nodes or edges:
        log.info("marked stale: %d nodes, %d edges", nodes, edges)
    return state


def resparsify(state: StreamState, cfg: OnlineConfig) -> StreamState:
    """Re-run the greedy spanner over the active edges and delete the
    active edges it rejects. Inactive edges are kept for reactivation.
    A graph that is already a valid spanner passes through unchanged.
    """
    spanner = greedy_spanner(state.graph, SpannerConfig(alpha=cfg.alpha))
    drop = [key for key, e in state.graph.edges.items()
            if e.active and key not in spanner.edges]
    for (u, v) in drop:
        state.graph.remove_edge(u, v)
    if drop:
        log.info("resparsify removed %d of %d active edges",
                 len(drop), len(drop) + len(spanner.edges))
    return state


def consume_stream(points, cfg: OnlineConfig, state: StreamState | None = None,
                   gap_s: float = 300.0, min_speed_kmh: float = 5.0,
                   on_pair=None) -> StreamState:
    """Feed an arrival-ordered stream of fixes through process_pair.

    Pairs are formed per vehicle. Fixes at or below min_speed_kmh are
    dropped (idle-vehicle jitter); silence longer than gap_s splits a
    vehicle's stream so no edge spans it; a pair whose implied speed is
    at or below the floor is skipped the same way. Resparsifies every
    cfg.resparsify_interval pairs. on_pair, when given, is called with
    the state after every processed pair.
    """
    if state is None:
        state = StreamState(cfg)
    else:
        cfg.validate()
    last: dict[str, GpsPoint] = {}
    for p in points:
        if p.speed_kmh is not None and p.speed_kmh <= min_speed_kmh:
            continue
        q = last.get(p.vehicle_id)
        last[p.vehicle_id] = p
        if q is None:
            continue
        dt = p.timestamp - q.timestamp
        if dt <= 0:
            continue    # duplicate or regressive clock; keep p as anchor
        if dt > gap_s:
            state.forget_vehicle(p.vehicle_id)
            continue
        if q.speed_kmh is None:
            implied = 3.6 * vincenty_m(q.lat, q.lon, p.lat, p.lon) / dt
            if implied <= min_speed_kmh:
                continue
        process_pair(state, q, p, cfg)
        if on_pair is not None:
            on_pair(state)
        if state.pairs_processed % cfg.resparsify_interval == 0:
            resparsify(state, cfg)
    return state
