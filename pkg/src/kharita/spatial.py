"""Uniform lat/lon bucket grids for radius-bounded neighbor queries.

Cells are sized in meters and converted to degrees with a fixed
latitude-dependent scale, chosen conservatively (widest cell that still
guarantees a 3x3 neighborhood covers the query radius).
"""
from __future__ import annotations

import math

import numpy as np

from .geo import M_PER_DEG_LAT, M_PER_DEG_LAT_MIN, vincenty_m, vincenty_m_many

# below this the lon/deg scale would blow up; data this close to a pole
# is out of scope anyway
_MIN_COS = 0.01


def lon_scale(max_abs_lat: float) -> float:
    """Meters per degree of longitude at the latitude where it is largest
    in the data's band (closest to the equator gives the safe bound)."""
    return M_PER_DEG_LAT * max(math.cos(math.radians(min(max_abs_lat, 89.9))), _MIN_COS)


def safe_lon_scale(lats) -> float:
    """Scale that never undersizes a cell anywhere in the data's range."""
    a = np.asarray(lats, dtype=np.float64)
    if a.size == 0:
        return M_PER_DEG_LAT * max(_MIN_COS, math.cos(math.radians(45.0)))
    hi = float(np.max(np.abs(a)))
    return M_PER_DEG_LAT * max(math.cos(math.radians(min(hi, 89.9))), _MIN_COS)


def cell_arrays(lat, lon, cell_m: float, lon_m_per_deg: float):
    """Integer (row, col) cell coordinates for arrays of positions.

    Rows use the minimum meters-per-degree so a cell is never narrower
    than cell_m anywhere; a 3x3 neighborhood then always covers cell_m.
    """
    rows = np.floor(np.asarray(lat, dtype=np.float64) * (M_PER_DEG_LAT_MIN / cell_m)).astype(np.int64)
    cols = np.floor(np.asarray(lon, dtype=np.float64) * (lon_m_per_deg / cell_m)).astype(np.int64)
    return rows, cols


def bucket_map(rows: np.ndarray, cols: np.ndarray) -> dict:
    """Map (row, col) -> array of item indices in that cell."""
    order = np.lexsort((cols, rows))
    r, c = rows[order], cols[order]
    if r.size == 0:
        return {}
    change = np.nonzero((r[1:] != r[:-1]) | (c[1:] != c[:-1]))[0] + 1
    starts = np.concatenate(([0], change, [r.size]))
    out = {}
    for i in range(starts.size - 1):
        s = starts[i]
        out[(int(r[s]), int(c[s]))] = order[s:starts[i + 1]]
    return out


def gather_3x3(buckets: dict, row: int, col: int) -> np.ndarray:
    """Concatenated indices of the 3x3 cell neighborhood (may be empty)."""
    parts = []
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            b = buckets.get((row + dr, col + dc))
            if b is not None:
                parts.append(b)
    if not parts:
        return np.empty(0, dtype=np.int64)
    if len(parts) == 1:
        return parts[0]
    return np.concatenate(parts)


def nearest_within(qlat, qlon, rlat, rlon, radius_m: float,
                   pair_budget: int = 2_000_000):
    """Nearest reference point within radius_m of each query point.

    Returns (dist, idx) arrays; unmatched queries get (inf, -1).
    Work is bucketed on a grid of cell size radius_m so only a 3x3
    neighborhood is examined per query, in chunks bounded by pair_budget.
    """
    qlat = np.asarray(qlat, dtype=np.float64)
    qlon = np.asarray(qlon, dtype=np.float64)
    rlat = np.asarray(rlat, dtype=np.float64)
    rlon = np.asarray(rlon, dtype=np.float64)
    nq = qlat.size
    dist = np.full(nq, np.inf)
    idx = np.full(nq, -1, dtype=np.int64)
    if nq == 0 or rlat.size == 0:
        return dist, idx

    scale = min(safe_lon_scale(qlat), safe_lon_scale(rlat))
    rr, rc = cell_arrays(rlat, rlon, radius_m, scale)
    buckets = bucket_map(rr, rc)
    qr, qc = cell_arrays(qlat, qlon, radius_m, scale)

    # group queries by cell so candidate sets are shared
    order = np.lexsort((qc, qr))
    gr, gc = qr[order], qc[order]
    change = np.nonzero((gr[1:] != gr[:-1]) | (gc[1:] != gc[:-1]))[0] + 1
    starts = np.concatenate(([0], change, [nq]))

    buf_q, buf_r, buf_len = [], [], []

    def flush():
        if not buf_q:
            return
        pq = np.concatenate(buf_q)
        pr = np.concatenate(buf_r)
        d = vincenty_m_many(qlat[pq], qlon[pq], rlat[pr], rlon[pr])
        seg = np.concatenate(([0], np.cumsum(buf_len)[:-1]))
        dmin = np.minimum.reduceat(d, seg)
        heads = pq[seg]
        take = d == np.repeat(dmin, buf_len)
        cand = np.where(take, pr, np.iinfo(np.int64).max)
        imin = np.minimum.reduceat(cand, seg)
        ok = dmin <= radius_m
        dist[heads[ok]] = dmin[ok]
        idx[heads[ok]] = imin[ok]
        buf_q.clear(); buf_r.clear(); buf_len.clear()

    pending = 0
    for i in range(starts.size - 1):
        grp = order[starts[i]:starts[i + 1]]
        cand = gather_3x3(buckets, int(gr[starts[i]]), int(gc[starts[i]]))
        if cand.size == 0:
            continue
        buf_q.append(np.repeat(grp, cand.size))
        buf_r.append(np.tile(cand, grp.size))
        buf_len.extend([cand.size] * grp.size)
        pending += grp.size * cand.size
        if pending >= pair_budget:
            flush()
            pending = 0
    flush()
    return dist, idx


class GridIndex:
    """Incremental point index for within-radius nearest queries.

    Cell size must be >= the largest query radius so that a 3x3
    neighborhood always contains every candidate.
    """

    def __init__(self, cell_m: float):
        self.cell_m = float(cell_m)
        self._scale: float | None = None   # lon meters/degree, set lazily
        self._cells: dict[tuple[int, int], list[int]] = {}
        self._pos: dict[int, tuple[int, int]] = {}

    def __len__(self) -> int:
        return len(self._pos)

    def _key(self, lat: float, lon: float) -> tuple[int, int]:
        if self._scale is None:
            self._scale = lon_scale(abs(lat))
        return (int(math.floor(lat * M_PER_DEG_LAT_MIN / self.cell_m)),
                int(math.floor(lon * self._scale / self.cell_m)))

    def insert(self, item: int, lat: float, lon: float) -> None:
        key = self._key(lat, lon)
        self._cells.setdefault(key, []).append(item)
        self._pos[item] = key

    def move(self, item: int, lat: float, lon: float) -> None:
        """Re-bucket an item after its position changed."""
        old = self._pos.get(item)
        key = self._key(lat, lon)
        if old == key:
            return
        if old is not None:
            cell = self._cells[old]
            cell.remove(item)
            if not cell:
                del self._cells[old]
        self._cells.setdefault(key, []).append(item)
        self._pos[item] = key

    def candidates(self, lat: float, lon: float) -> list[int]:
        """Items in the 3x3 neighborhood of the position's cell."""
        r, c = self._key(lat, lon)
        out = []
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                got = self._cells.get((r + dr, c + dc))
                if got:
                    out.extend(got)
        return out

    def nearest(self, lat: float, lon: float, radius_m: float,
                positions) -> tuple[float, int]:
        """(distance, item) of the nearest item within radius_m, or
        (inf, -1). positions maps item -> (lat, lon). Requires
        radius_m <= cell_m."""
        best_d, best_i = math.inf, -1
        dlat_gate = radius_m / M_PER_DEG_LAT_MIN
        dlon_gate = radius_m * 1.001 / (
            M_PER_DEG_LAT * max(math.cos(math.radians(abs(lat))), _MIN_COS))
        for item in self.candidates(lat, lon):
            plat, plon = positions(item)
            if abs(plat - lat) > dlat_gate:
                continue
            if abs(plon - lon) > dlon_gate:
                continue
            d = vincenty_m(lat, lon, plat, plon)
            if d < best_d or (d == best_d and (best_i == -1 or item < best_i)):
                best_d, best_i = d, item
        if best_d > radius_m:
            return math.inf, -1
        return best_d, best_i
