"""Directed road graphs: candidate edge inference from clustered
trajectories, greedy spanner sparsification, and two-way street repair.

The offline pipeline lives here too: prepared trajectories go in, a
routable sparse graph comes out.
"""
from __future__ import annotations

import heapq
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .clustering import (
    ClusterCentroid,
    ClusterConfig,
    PointArrays,
    _Assigner,
    distinct_points,
    finalize_centroids,
    kmeans_arrays,
    select_seed_indices,
    split_by_heading,
)
from .geo import vincenty_m
from .ingest import EmptyInputError, IngestConfig, Trajectory, prepare_trajectories

log = logging.getLogger(__name__)

# repeated visits to the exact same coordinates still need a positive
# length for shortest-path math
MIN_EDGE_WEIGHT_M = 1e-3


@dataclass
class SpannerConfig:
    alpha: float = math.sqrt(2.0)
    duplex_speed_kmh: float = 60.0

    def validate(self) -> None:
        if self.alpha < 1.0:
            raise ValueError("alpha must be at least 1")
        if self.duplex_speed_kmh < 0:
            raise ValueError("duplex_speed_kmh must be non-negative")


@dataclass
class Edge:
    src: int
    dst: int
    weight_m: float
    traj_count: int = 0
    last_seen: float = 0.0
    active: bool = True


class RoadGraph:
    """Directed graph over ClusterCentroid nodes with weighted edges.

    Node ids are list positions and never change; removal is expressed
    by the active flags, except inside resparsification which may drop
    edges outright.
    """

    def __init__(self, nodes: list[ClusterCentroid] | None = None):
        self.nodes: list[ClusterCentroid] = nodes if nodes is not None else []
        self.edges: dict[tuple[int, int], Edge] = {}
        self._out: dict[int, list[int]] = {}

    def __repr__(self) -> str:
        return f"RoadGraph(nodes={len(self.nodes)}, edges={len(self.edges)})"

    def add_node(self, node: ClusterCentroid) -> int:
        self.nodes.append(node)
        return len(self.nodes) - 1

    def add_edge(self, src: int, dst: int, weight_m: float,
                 traj_count: int = 0, last_seen: float = 0.0,
                 active: bool = True) -> Edge:
        if not (0 <= src < len(self.nodes) and 0 <= dst < len(self.nodes)):
            raise KeyError(f"edge ({src}, {dst}) references a missing node")
        if (src, dst) in self.edges:
            raise KeyError(f"edge ({src}, {dst}) already present")
        e = Edge(src, dst, max(weight_m, MIN_EDGE_WEIGHT_M), traj_count,
                 last_seen, active)
        self.edges[(src, dst)] = e
        self._out.setdefault(src, []).append(dst)
        return e

    def remove_edge(self, src: int, dst: int) -> None:
        del self.edges[(src, dst)]
        self._out[src].remove(dst)

    def out_edges(self, src: int):
        for dst in self._out.get(src, ()):
            yield self.edges[(src, dst)]

    def active_edges(self):
        for e in self.edges.values():
            if e.active:
                yield e

    def shortest_dist(self, src: int, dst: int, cutoff: float = math.inf,
                      active_only: bool = True) -> float:
        """Weighted directed distance src -> dst, or inf when dst is
        unreachable within cutoff."""
        if src == dst:
            return 0.0
        dist = {src: 0.0}
        heap = [(0.0, src)]
        while heap:
            d, u = heapq.heappop(heap)
            if u == dst:
                return d
            if d > dist.get(u, math.inf):
                continue
            for v in self._out.get(u, ()):
                e = self.edges[(u, v)]
                if active_only and not e.active:
                    continue
                nd = d + e.weight_m
                if nd <= cutoff and nd < dist.get(v, math.inf):
                    dist[v] = nd
                    heapq.heappush(heap, (nd, v))
        return math.inf

    def dists_within(self, src: int, cutoff: float, active_only: bool = True,
                     start_cost: float = 0.0) -> dict:
        """Distances to every node reachable from src within cutoff,
        starting the count at start_cost (for mid-edge starting points)."""
        if start_cost > cutoff:
            return {}
        dist = {src: start_cost}
        heap = [(start_cost, src)]
        while heap:
            d, u = heapq.heappop(heap)
            if d > dist.get(u, math.inf):
                continue
            for v in self._out.get(u, ()):
                e = self.edges[(u, v)]
                if active_only and not e.active:
                    continue
                nd = d + e.weight_m
                if nd <= cutoff and nd < dist.get(v, math.inf):
                    dist[v] = nd
                    heapq.heappush(heap, (nd, v))
        return dist

    def shortest_path(self, src: int, dst: int,
                      active_only: bool = True) -> list | None:
        """Node sequence of one shortest route src -> dst, or None."""
        if src == dst:
            return [src]
        dist = {src: 0.0}
        prev = {}
        heap = [(0.0, src)]
        while heap:
            d, u = heapq.heappop(heap)
            if u == dst:
                path = [dst]
                while path[-1] != src:
                    path.append(prev[path[-1]])
                return path[::-1]
            if d > dist.get(u, math.inf):
                continue
            for v in self._out.get(u, ()):
                e = self.edges[(u, v)]
                if active_only and not e.active:
                    continue
                nd = d + e.weight_m
                if nd < dist.get(v, math.inf):
                    dist[v] = nd
                    prev[v] = u
                    heapq.heappush(heap, (nd, v))
        return None

    def copy_nodes(self) -> "RoadGraph":
        """New graph sharing this graph's node records, no edges."""
        g = RoadGraph(list(self.nodes))
        return g


def spurious_edge_threshold(support_u: int, support_v: int) -> float:
    """Minimum trajectory count for an edge between clusters of the
    given supports to be believed."""
    m = min(support_u, support_v)
    return max(1.0, math.log(m) - 1.0) if m > 0 else 1.0


def candidate_edges_from_arrays(centroids: list[ClusterCentroid],
                                assign: np.ndarray,
                                ts: np.ndarray,
                                lengths: list[int]) -> RoadGraph:
    """Candidate graph from per-point cluster assignments.

    assign/ts hold every point of every trajectory, concatenated in
    order; lengths gives each trajectory's point count. An edge is drawn
    once per trajectory that moves between two distinct clusters, and
    kept only when enough trajectories agree relative to the endpoint
    supports (log-threshold rule).
    """
    counts: dict[tuple[int, int], int] = {}
    last: dict[tuple[int, int], float] = {}
    off = 0
    for n in lengths:
        a = assign[off:off + n]
        t = ts[off:off + n]
        off += n
        seen: set[tuple[int, int]] = set()
        prev = int(a[0]) if n else -1
        for i in range(1, n):
            cur = int(a[i])
            if cur == prev:
                continue
            key = (prev, cur)
            if key not in seen:
                seen.add(key)
                counts[key] = counts.get(key, 0) + 1
            ti = float(t[i])
            if last.get(key, -math.inf) < ti:
                last[key] = ti
            prev = cur

    g = RoadGraph(list(centroids))
    for (u, v) in sorted(counts):
        f_e = counts[(u, v)]
        if f_e >= spurious_edge_threshold(centroids[u].support, centroids[v].support):
            w = vincenty_m(centroids[u].lat, centroids[u].lon,
                           centroids[v].lat, centroids[v].lon)
            g.add_edge(u, v, w, traj_count=f_e, last_seen=last[(u, v)])
    return g


def infer_candidate_edges(trajectories: list[Trajectory],
                          centroids: list[ClusterCentroid],
                          assignments: np.ndarray) -> RoadGraph:
    """Candidate graph from trajectories and their point-to-cluster
    assignments (aligned with the concatenation of all points)."""
    ts = np.array([p.timestamp for tr in trajectories for p in tr.points])
    lengths = [len(tr.points) for tr in trajectories]
    return candidate_edges_from_arrays(centroids, np.asarray(assignments),
                                       ts, lengths)


def greedy_spanner(graph: RoadGraph, cfg: SpannerConfig) -> RoadGraph:
    """Sparsify by scanning edges in increasing weight order and keeping
    an edge only when the graph built so far cannot already connect its
    endpoints within alpha times the edge weight.

    Every dropped edge is alpha-covered at drop time and stays covered,
    so all pairwise distances stretch by at most alpha.
    """
    cfg.validate()
    out = graph.copy_nodes()
    pending = sorted(graph.active_edges(),
                     key=lambda e: (e.weight_m, e.src, e.dst))
    for e in pending:
        bound = cfg.alpha * e.weight_m
        if out.shortest_dist(e.src, e.dst, cutoff=bound) > bound:
            out.add_edge(e.src, e.dst, e.weight_m, e.traj_count,
                         e.last_seen, e.active)
    return out


def duplexify(graph: RoadGraph, cfg: SpannerConfig) -> RoadGraph:
    """Add reverse edges on slow roads, which are assumed two-way.

    A reverse edge appears when the faster of the two endpoint clusters
    stays at or below duplex_speed_kmh and the reversal is absent. The
    new edge carries no trajectory evidence of its own (traj_count 0).
    """
    cfg.validate()
    for (u, v) in sorted(graph.edges):
        e = graph.edges[(u, v)]
        if (v, u) in graph.edges:
            continue
        if max(graph.nodes[u].max_speed_kmh, graph.nodes[v].max_speed_kmh) \
                <= cfg.duplex_speed_kmh:
            graph.add_edge(v, u, e.weight_m, traj_count=0,
                           last_seen=e.last_seen, active=e.active)
    return graph


@dataclass
class PipelineStats:
    """Per-stage wall times (seconds) and object counts."""

    timings: dict[str, float] = field(default_factory=dict)
    counts: dict[str, int] = field(default_factory=dict)


def run_offline_pipeline(trajectories: list[Trajectory],
                         ingest_cfg: IngestConfig,
                         cluster_cfg: ClusterConfig,
                         spanner_cfg: SpannerConfig,
                         stats: PipelineStats | None = None) -> RoadGraph:
    """Full batch inference: prepare, cluster, infer edges, sparsify.

    Stage order: densify (with speed/heading inference and slow-point
    filtering), exact-duplicate collapse, seed selection, k-means,
    heading split, candidate edges, spanner, duplexify.
    """
    ingest_cfg.validate()
    cluster_cfg.validate()
    spanner_cfg.validate()
    st = stats if stats is not None else PipelineStats()

    def stage(name, fn):
        t0 = time.perf_counter()
        out = fn()
        dt = time.perf_counter() - t0
        st.timings[name] = dt
        log.info("stage %-16s %8.3fs", name, dt)
        return out

    prepared, _ = stage("densify", lambda: prepare_trajectories(trajectories, ingest_cfg))
    flat = [p for tr in prepared for p in tr.points]
    if not flat:
        raise EmptyInputError("no usable points after preparation")
    lengths = [len(tr.points) for tr in prepared]
    pts = PointArrays.from_points(flat)
    st.counts["points"] = pts.n

    dpts, inverse = stage("distinct", lambda: distinct_points(pts))
    st.counts["distinct_points"] = dpts.n

    seed_idx = stage("seeds", lambda: select_seed_indices(dpts, cluster_cfg))
    st.counts["seeds"] = int(seed_idx.size)

    assigner = _Assigner(dpts, cluster_cfg)
    cents, assign, costs = stage("kmeans", lambda: kmeans_arrays(
        dpts, dpts.lat[seed_idx], dpts.lon[seed_idx], dpts.heading[seed_idx],
        cluster_cfg, assigner))
    st.counts["kmeans_iterations"] = len(costs)

    (clat, clon, chdg), assign = stage("split", lambda: split_by_heading(
        dpts, cents["lat"], cents["lon"], cents["heading"], assign, cluster_cfg))
    centroids = finalize_centroids(dpts, assign, clat, clon, chdg)
    st.counts["clusters"] = len(centroids)

    full_assign = assign[inverse]
    candidate = stage("edges", lambda: candidate_edges_from_arrays(
        centroids, full_assign, pts.ts, lengths))
    st.counts["candidate_edges"] = len(candidate.edges)

    sparse = stage("spanner", lambda: greedy_spanner(candidate, spanner_cfg))
    st.counts["spanner_edges"] = len(sparse.edges)

    final = stage("duplexify", lambda: duplexify(sparse, spanner_cfg))
    st.counts["edges"] = len(final.edges)
    st.counts["nodes"] = len(final.nodes)
    log.info("pipeline done: %d nodes, %d edges", len(final.nodes), len(final.edges))
    return final
