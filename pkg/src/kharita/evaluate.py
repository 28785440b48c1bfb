"""Map quality scoring with the holes-and-marbles protocols, plus a
synthetic grid-city generator for ground-truth-based testing.

GEO samples both maps every few meters (marbles on the tested map,
holes on the reference) and matches samples across maps within a
distance threshold. TOPO compares bounded-radius reachable sets from
matched starting points instead, so connectivity mistakes show up even
where the geometry looks perfect. The reference map is first pruned to
the edges that some trajectory actually passed, since roads no vehicle
drove cannot be inferred from the data.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .clustering import ClusterCentroid
from .geo import GpsPoint, M_PER_DEG_LAT, initial_bearing_deg, vincenty_m
from .graphs import RoadGraph
from .ingest import Trajectory
from .spatial import nearest_within

log = logging.getLogger(__name__)

DEFAULT_THRESHOLDS_M = (5.0, 10.0, 15.0, 20.0, 25.0, 30.0)


@dataclass
class EvalConfig:
    sample_spacing_m: float = 5.0
    matching_thresholds_m: tuple = DEFAULT_THRESHOLDS_M
    topo_radius_m: float = 2000.0
    topo_samples: int = 200
    start_match_distance_m: float = 1.0
    start_angle_tolerance_deg: float = 10.0
    visit_distance_m: float = 30.0    # trajectory-passed-here test for pruning
    start_retries: int = 1000
    rng_seed: int = 0

    def validate(self) -> None:
        if self.sample_spacing_m <= 0:
            raise ValueError("sample_spacing_m must be positive")
        if not self.matching_thresholds_m or \
                any(t <= 0 for t in self.matching_thresholds_m):
            raise ValueError("matching_thresholds_m must be positive")
        if self.topo_radius_m <= 0:
            raise ValueError("topo_radius_m must be positive")
        if self.topo_samples < 1:
            raise ValueError("topo_samples must be at least 1")
        if self.start_match_distance_m <= 0:
            raise ValueError("start_match_distance_m must be positive")
        if not 0 < self.start_angle_tolerance_deg <= 180:
            raise ValueError("start_angle_tolerance_deg must be in (0, 180]")
        if self.visit_distance_m <= 0:
            raise ValueError("visit_distance_m must be positive")
        if self.start_retries < 1:
            raise ValueError("start_retries must be at least 1")
        if self.rng_seed < 0:
            raise ValueError("rng_seed must be non-negative")


@dataclass
class EvalReport:
    """Per-threshold scores; for reachable-set comparisons the values
    are means over the valid samples."""

    thresholds: list
    precision: list
    recall: list
    f_score: list
    samples_total: int = 0
    samples_valid: int = 0
    seed: int | None = None

    def f_at(self, threshold: float) -> float:
        return self.f_score[self.thresholds.index(threshold)]

    def as_dict(self) -> dict:
        return {
            "thresholds_m": list(self.thresholds),
            "precision": list(self.precision),
            "recall": list(self.recall),
            "f_score": list(self.f_score),
            "samples_total": self.samples_total,
            "samples_valid": self.samples_valid,
            "seed": self.seed,
        }


def _f(p: float, r: float) -> float:
    return 0.0 if p + r == 0 else 2.0 * p * r / (p + r)


@dataclass
class _Samples:
    """Points laid every few meters along a graph's active edges,
    start-inclusive and end-exclusive (the end is the next edge's
    start), with enough provenance to walk distances along edges."""

    lat: np.ndarray
    lon: np.ndarray
    edge_id: np.ndarray     # index into keys, per sample
    offset: np.ndarray      # meters from the edge source, per sample
    keys: list              # (src, dst) per edge
    length: np.ndarray      # geometric meters, per edge
    bearing: np.ndarray     # degrees, per edge


def _sample_edges(graph: RoadGraph, spacing: float) -> _Samples:
    keys = [k for k in sorted(graph.edges) if graph.edges[k].active]
    lats, lons, eids, offs = [], [], [], []
    lengths, bearings = [], []
    for j, (u, v) in enumerate(keys):
        nu, nv = graph.nodes[u], graph.nodes[v]
        L = vincenty_m(nu.lat, nu.lon, nv.lat, nv.lon)
        if L <= 0.0:
            lengths.append(0.0)
            bearings.append(nu.heading_deg)
            lats.append(np.array([nu.lat]))
            lons.append(np.array([nu.lon]))
            eids.append(np.array([j]))
            offs.append(np.array([0.0]))
            continue
        lengths.append(L)
        bearings.append(initial_bearing_deg(nu.lat, nu.lon, nv.lat, nv.lon))
        # half-phase so edges sharing a node never duplicate a sample
        o = np.arange(0.5 * spacing, L, spacing)
        if o.size == 0:
            o = np.array([L / 2.0])
        f = o / L
        lats.append(nu.lat + f * (nv.lat - nu.lat))
        lons.append(nu.lon + f * (nv.lon - nu.lon))
        eids.append(np.full(o.size, j))
        offs.append(o)
    if not keys:
        empty = np.empty(0)
        return _Samples(empty, empty, np.empty(0, dtype=np.int64), empty,
                        [], empty, empty)
    return _Samples(np.concatenate(lats), np.concatenate(lons),
                    np.concatenate(eids).astype(np.int64),
                    np.concatenate(offs), keys,
                    np.asarray(lengths), np.asarray(bearings))


def _angle_diff_many(a, b):
    d = np.abs(np.asarray(a) - np.asarray(b)) % 360.0
    return np.minimum(d, 360.0 - d)


def geo_score(inferred: RoadGraph, truth: RoadGraph, cfg: EvalConfig) -> EvalReport:
    """Geometric agreement: what fraction of each map's sample points
    the other map covers, per matching threshold."""
    cfg.validate()
    holes = _sample_edges(truth, cfg.sample_spacing_m)
    if holes.lat.size == 0:
        raise ValueError("reference map has no active edges to sample")
    marbles = _sample_edges(inferred, cfg.sample_spacing_m)
    ts = sorted(float(t) for t in cfg.matching_thresholds_m)
    if marbles.lat.size == 0:
        log.warning("tested map is empty: scoring zeros")
        zeros = [0.0] * len(ts)
        return EvalReport(ts, zeros, zeros, zeros)
    rmax = ts[-1]
    md, _ = nearest_within(marbles.lat, marbles.lon, holes.lat, holes.lon, rmax)
    hd, _ = nearest_within(holes.lat, holes.lon, marbles.lat, marbles.lon, rmax)
    precision = [float(np.mean(md <= t)) for t in ts]
    recall = [float(np.mean(hd <= t)) for t in ts]
    return EvalReport(ts, precision, recall,
                      [_f(p, r) for p, r in zip(precision, recall)])


def prune_unvisited_edges(truth: RoadGraph, trajectories: list,
                          cfg: EvalConfig) -> RoadGraph:
    """Copy of the reference map keeping only edges that some
    trajectory point passes within the visit distance."""
    cfg.validate()
    s = _sample_edges(truth, cfg.sample_spacing_m)
    out = truth.copy_nodes()
    if not s.keys:
        return out
    tlat = np.array([p.lat for tr in trajectories for p in tr.points])
    tlon = np.array([p.lon for tr in trajectories for p in tr.points])
    visited = np.zeros(len(s.keys), dtype=bool)
    if tlat.size:
        d, _ = nearest_within(s.lat, s.lon, tlat, tlon, cfg.visit_distance_m)
        visited[s.edge_id[d <= cfg.visit_distance_m]] = True
    for j, key in enumerate(s.keys):
        if visited[j]:
            e = truth.edges[key]
            out.add_edge(e.src, e.dst, e.weight_m, e.traj_count,
                         e.last_seen, e.active)
    return out


def _reachable(graph: RoadGraph, s: _Samples, start: int,
               radius: float) -> np.ndarray:
    """Indices of samples whose along-graph distance from the start
    sample is within radius. Distance to a sample is the distance to
    its edge's source node plus the sample's offset; samples further
    along the start's own edge are reached directly."""
    e0 = int(s.edge_id[start])
    u0, v0 = s.keys[e0]
    o0 = float(s.offset[start])
    into = graph.dists_within(v0, radius, start_cost=s.length[e0] - o0)
    src_dist = np.array([into.get(k[0], math.inf) for k in s.keys])
    cost = src_dist[s.edge_id] + s.offset
    fwd = (s.edge_id == e0) & (s.offset >= o0)
    cost[fwd] = np.minimum(cost[fwd], s.offset[fwd] - o0)
    return np.nonzero(cost <= radius)[0]


def topo_score(inferred: RoadGraph, truth: RoadGraph, trajectories: list,
               cfg: EvalConfig) -> EvalReport:
    """Connectivity agreement: from random matched starting points,
    compare which sample points each map can reach within the radius.

    Starting pairs must sit within the start matching distance of each
    other on roads running the same direction; draws that find no
    partner are retried a bounded number of times, then the sample is
    skipped. Scores are means over valid samples.
    """
    cfg.validate()
    pruned = prune_unvisited_edges(truth, trajectories, cfg)
    holes = _sample_edges(pruned, cfg.sample_spacing_m)
    if holes.lat.size == 0:
        raise ValueError("no trajectory-visited reference edges to sample")
    marbles = _sample_edges(inferred, cfg.sample_spacing_m)
    if marbles.lat.size == 0:
        raise ValueError("tested map has no active edges to sample")
    ts = sorted(float(t) for t in cfg.matching_thresholds_m)
    rmax = ts[-1]

    # resolve every marble's start partner up front: nearest hole, kept
    # when close enough and pointing the same way
    sd, si = nearest_within(marbles.lat, marbles.lon, holes.lat, holes.lon,
                            cfg.start_match_distance_m)
    usable = sd <= cfg.start_match_distance_m
    mb = marbles.bearing[marbles.edge_id]
    hb = holes.bearing[holes.edge_id[np.where(usable, si, 0)]]
    usable &= _angle_diff_many(mb, hb) <= cfg.start_angle_tolerance_deg
    # draw through a geometric ordering so node relabelings that leave
    # the map unchanged leave the sampled starts unchanged too
    order = np.lexsort((marbles.offset, mb, marbles.lon, marbles.lat))

    p_sum = np.zeros(len(ts))
    r_sum = np.zeros(len(ts))
    f_sum = np.zeros(len(ts))
    valid = 0
    for i in range(cfg.topo_samples):
        rng = np.random.default_rng([cfg.rng_seed, i])
        start = -1
        for _ in range(cfg.start_retries):
            j = int(order[int(rng.integers(0, marbles.lat.size))])
            if usable[j]:
                start = j
                break
        if start < 0:
            continue
        rm = _reachable(inferred, marbles, start, cfg.topo_radius_m)
        rh = _reachable(pruned, holes, int(si[start]), cfg.topo_radius_m)
        md, _ = nearest_within(marbles.lat[rm], marbles.lon[rm],
                               holes.lat[rh], holes.lon[rh], rmax)
        hd, _ = nearest_within(holes.lat[rh], holes.lon[rh],
                               marbles.lat[rm], marbles.lon[rm], rmax)
        for k, t in enumerate(ts):
            p = float(np.mean(md <= t))
            r = float(np.mean(hd <= t))
            p_sum[k] += p
            r_sum[k] += r
            f_sum[k] += _f(p, r)
        valid += 1
    if valid == 0:
        raise ValueError("no valid starting pair in any sample; "
                         "the maps never align within the start distance")
    return EvalReport(ts, list(p_sum / valid), list(r_sum / valid),
                      list(f_sum / valid), samples_total=cfg.topo_samples,
                      samples_valid=valid, seed=cfg.rng_seed)


@dataclass
class GridSpec:
    """Synthetic city: a rows x cols lattice of intersections joined by
    straight streets, optionally with a central roundabout."""

    rows: int = 5
    cols: int = 5
    block_m: float = 100.0
    two_way_fraction: float = 1.0    # chance a whole street runs both ways
    roundabout: bool = False
    origin_lat: float = 25.0
    origin_lon: float = 51.0

    def validate(self) -> None:
        if self.rows < 2 or self.cols < 2:
            raise ValueError("grid needs at least 2x2 intersections")
        if self.block_m <= 0:
            raise ValueError("block_m must be positive")
        if not 0.0 <= self.two_way_fraction <= 1.0:
            raise ValueError("two_way_fraction must be in [0, 1]")
        if self.roundabout and (self.rows < 3 or self.cols < 3):
            raise ValueError("roundabout needs an interior intersection")


SPEED_CLASSES_KMH = (40.0, 50.0, 60.0)


def generate_synthetic(spec: GridSpec, noise_sigma_m: float = 3.0,
                       n_trajectories: int = 120,
                       sampling_spacing_m: float = 20.0,
                       rng_seed: int = 0,
                       heading_noise_deg: float = 5.0):
    """Ground-truth graph plus simulated drives over it.

    Streets get a speed class and a direction regime from the seed;
    each trajectory follows a shortest route between two random
    intersections, emitting a fix every sampling_spacing_m with
    isotropic Gaussian position noise and Gaussian heading noise.
    sampling_spacing_m may be a (low, high) pair, giving each
    trajectory its own spacing drawn uniformly from the range. The
    same seed reproduces identical output.
    """
    spec.validate()
    if isinstance(sampling_spacing_m, tuple):
        spacing_lo, spacing_hi = sampling_spacing_m
    else:
        spacing_lo = spacing_hi = sampling_spacing_m
    if noise_sigma_m < 0 or spacing_lo <= 0 or spacing_hi < spacing_lo \
            or n_trajectories < 0:
        raise ValueError("noise must be >= 0, spacing > 0, count >= 0")
    rng = np.random.default_rng(rng_seed)
    lat_step = spec.block_m / M_PER_DEG_LAT
    lon_step = spec.block_m / (M_PER_DEG_LAT
                               * math.cos(math.radians(spec.origin_lat)))

    nodes = []
    for r in range(spec.rows):
        for c in range(spec.cols):
            nodes.append(ClusterCentroid(spec.origin_lat + r * lat_step,
                                         spec.origin_lon + c * lon_step,
                                         0.0, support=1))
    nid = lambda r, c: r * spec.cols + c

    # one speed class and direction regime per whole street
    edges: dict[tuple[int, int], float] = {}    # key -> speed limit
    for r in range(spec.rows):                  # west-east streets
        limit = float(rng.choice(SPEED_CLASSES_KMH))
        both = bool(rng.random() < spec.two_way_fraction)
        eastward = bool(rng.integers(0, 2))
        for c in range(spec.cols - 1):
            a, b = nid(r, c), nid(r, c + 1)
            if both or eastward:
                edges[(a, b)] = limit
            if both or not eastward:
                edges[(b, a)] = limit
    for c in range(spec.cols):                  # south-north streets
        limit = float(rng.choice(SPEED_CLASSES_KMH))
        both = bool(rng.random() < spec.two_way_fraction)
        northward = bool(rng.integers(0, 2))
        for r in range(spec.rows - 1):
            a, b = nid(r, c), nid(r + 1, c)
            if both or northward:
                edges[(a, b)] = limit
            if both or not northward:
                edges[(b, a)] = limit

    if spec.roundabout:
        _insert_roundabout(spec, nodes, edges,
                           nid(spec.rows // 2, spec.cols // 2))

    graph = RoadGraph(nodes)
    for (a, b) in sorted(edges):
        na, nb = nodes[a], nodes[b]
        graph.add_edge(a, b, vincenty_m(na.lat, na.lon, nb.lat, nb.lon))

    trajectories = []
    for t in range(n_trajectories):
        path = None
        for _ in range(100):
            a, b = (int(x) for x in rng.integers(0, len(nodes), 2))
            if a == b:
                continue
            path = graph.shortest_path(a, b)
            if path is not None and len(path) >= 3:
                break
            path = None
        if path is None:
            continue
        spacing = spacing_lo if spacing_hi == spacing_lo \
            else float(rng.uniform(spacing_lo, spacing_hi))
        pts = _drive(graph, edges, path, f"veh{t:03d}", t * 10000.0,
                     noise_sigma_m, spacing, heading_noise_deg, rng)
        trajectories.append(Trajectory(pts[0].vehicle_id, pts))
    return graph, trajectories


def _insert_roundabout(spec: GridSpec, nodes: list, edges: dict,
                       center: int) -> None:
    """Replace the central intersection with a one-way circle of four
    nodes; streets that met the center attach to the near circle node."""
    radius_m = min(15.0, spec.block_m / 4.0)
    cn = nodes[center]
    dlat = radius_m / M_PER_DEG_LAT
    dlon = radius_m / (M_PER_DEG_LAT * math.cos(math.radians(cn.lat)))
    ring = {}
    for name, (la, lo) in {"n": (cn.lat + dlat, cn.lon),
                           "w": (cn.lat, cn.lon - dlon),
                           "s": (cn.lat - dlat, cn.lon),
                           "e": (cn.lat, cn.lon + dlon)}.items():
        ring[name] = len(nodes)
        nodes.append(ClusterCentroid(la, lo, 0.0, support=1))
    ring_limit = SPEED_CLASSES_KMH[0]
    for a, b in (("n", "w"), ("w", "s"), ("s", "e"), ("e", "n")):
        edges[(ring[a], ring[b])] = ring_limit

    r0, c0 = center // spec.cols, center % spec.cols
    side_of = {(r0 + 1) * spec.cols + c0: "n",
               (r0 - 1) * spec.cols + c0: "s",
               r0 * spec.cols + c0 + 1: "e",
               r0 * spec.cols + c0 - 1: "w"}
    for (a, b) in [k for k in edges if center in k]:
        limit = edges.pop((a, b))
        if a == center and b in side_of:
            edges[(ring[side_of[b]], b)] = limit
        elif b == center and a in side_of:
            edges[(a, ring[side_of[a]])] = limit


def _drive(graph: RoadGraph, limits: dict, path: list, vehicle: str,
           t0: float, sigma_m: float, spacing_m: float,
           heading_sigma_deg: float, rng) -> list:
    """Fixes every spacing_m along the node path, with position and
    heading noise; per-point speed is a draw under the street limit."""
    legs = []
    for a, b in zip(path, path[1:]):
        na, nb = graph.nodes[a], graph.nodes[b]
        L = vincenty_m(na.lat, na.lon, nb.lat, nb.lon)
        legs.append((na, nb, L, initial_bearing_deg(na.lat, na.lon,
                                                    nb.lat, nb.lon),
                     limits[(a, b)]))
    total = sum(leg[2] for leg in legs)
    marks = np.arange(0.0, total, spacing_m)
    marks = np.append(marks, total)

    pts = []
    t = t0
    prev_mark = 0.0
    li, acc = 0, 0.0
    for mark in marks:
        while li < len(legs) - 1 and mark > acc + legs[li][2]:
            acc += legs[li][2]
            li += 1
        na, nb, L, bearing, limit = legs[li]
        f = min((mark - acc) / L, 1.0)
        lat = na.lat + f * (nb.lat - na.lat)
        lon = na.lon + f * (nb.lon - na.lon)
        if sigma_m > 0:
            lat += rng.normal(0.0, sigma_m) / M_PER_DEG_LAT
            lon += rng.normal(0.0, sigma_m) / (
                M_PER_DEG_LAT * math.cos(math.radians(lat)))
        heading = (bearing + rng.normal(0.0, heading_sigma_deg)) % 360.0
        speed = limit * float(rng.uniform(0.7, 1.0))
        if pts:
            t += (mark - prev_mark) / (speed / 3.6)
        pts.append(GpsPoint(vehicle, float(t), float(lat), float(lon),
                            float(speed), float(heading)))
        prev_mark = mark
    return pts
