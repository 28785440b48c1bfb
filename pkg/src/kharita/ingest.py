"""Trajectory ingestion: CSV parsing, speed/heading inference, slow-point
filtering, and densification of long gaps between fixes.

Input CSV format (header required):

    vehicle_id,timestamp,lat,lon,speed_kmh,heading_deg

timestamp is epoch seconds or ISO-8601 (auto-detected per file; naive
ISO timestamps are taken as UTC). speed_kmh and heading_deg may be empty.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone

from .geo import (
    GpsPoint,
    angle_diff_deg,
    initial_bearing_deg,
    normalize_heading,
    valid_latlon,
    vincenty_m,
)

log = logging.getLogger(__name__)

EXPECTED_COLUMNS = ["vehicle_id", "timestamp", "lat", "lon", "speed_kmh", "heading_deg"]


class EmptyInputError(ValueError):
    """Raised when an input file yields no valid data rows."""


@dataclass
class IngestConfig:
    min_speed_kmh: float = 5.0        # fixes at or below this are dropped
    sampling_rate_m: float = 20.0     # target spacing after densification
    densify_angle_gate_deg: float = 5.0
    new_trajectory_gap_s: float = 300.0

    def validate(self) -> None:
        if self.sampling_rate_m <= 0:
            raise ValueError("sampling_rate_m must be positive")
        if self.min_speed_kmh < 0:
            raise ValueError("min_speed_kmh must be non-negative")
        if not 0 <= self.densify_angle_gate_deg <= 180:
            raise ValueError("densify_angle_gate_deg must be in [0, 180]")
        if self.new_trajectory_gap_s <= 0:
            raise ValueError("new_trajectory_gap_s must be positive")


@dataclass
class Trajectory:
    """Time-ordered fixes of one vehicle between long gaps."""

    vehicle_id: str
    points: list[GpsPoint] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.points)


def _parse_epoch(raw: str) -> float:
    return float(raw)


def _parse_iso(raw: str) -> float:
    dt = datetime.fromisoformat(raw.replace("Z", "+00:00"))
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.timestamp()


def _detect_ts_parser(raw: str):
    try:
        _parse_epoch(raw)
        return _parse_epoch
    except ValueError:
        _parse_iso(raw)   # raises if neither format fits
        return _parse_iso


def stream_points(path: str):
    """Yield valid GPS fixes in file order, as the streaming mode needs.

    Rows that fail to parse (bad numbers, out-of-range coordinates,
    negative speeds) are skipped; the count is logged once the file is
    exhausted. Raises ValueError on a missing or wrong header.
    """
    malformed = 0
    ts_parser = None

    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [c.strip() for c in header] != EXPECTED_COLUMNS:
            raise ValueError(
                f"{path}: expected header {','.join(EXPECTED_COLUMNS)!r}, "
                f"got {','.join(header) if header else 'empty file'!r}")
        for row in reader:
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(EXPECTED_COLUMNS):
                malformed += 1
                continue
            vid, ts_raw, lat_raw, lon_raw, spd_raw, hdg_raw = (c.strip() for c in row)
            try:
                if ts_parser is None:
                    ts_parser = _detect_ts_parser(ts_raw)
                ts = ts_parser(ts_raw)
                lat = float(lat_raw)
                lon = float(lon_raw)
                speed = float(spd_raw) if spd_raw else None
                heading = float(hdg_raw) if hdg_raw else None
            except ValueError:
                malformed += 1
                continue
            if not vid or not math.isfinite(ts) or not valid_latlon(lat, lon):
                malformed += 1
                continue
            if speed is not None and not (math.isfinite(speed) and speed >= 0):
                malformed += 1
                continue
            if heading is not None:
                if not math.isfinite(heading):
                    malformed += 1
                    continue
                heading = normalize_heading(heading)
            yield GpsPoint(vid, ts, lat, lon, speed, heading)

    if malformed:
        log.warning("%s: skipped %d malformed row(s)", path, malformed)


def parse_trajectories(path: str, cfg: IngestConfig) -> list[Trajectory]:
    """Read a trajectory CSV and split it into per-vehicle trajectories.

    Same row handling as stream_points. A time gap larger than
    cfg.new_trajectory_gap_s starts a new trajectory for that vehicle.
    Raises EmptyInputError when no valid rows remain.
    """
    per_vehicle: dict[str, list[GpsPoint]] = {}
    for p in stream_points(path):
        per_vehicle.setdefault(p.vehicle_id, []).append(p)

    if not per_vehicle:
        raise EmptyInputError(f"{path}: no valid data rows")

    out: list[Trajectory] = []
    for vid, pts in per_vehicle.items():
        pts.sort(key=lambda p: p.timestamp)
        cur = Trajectory(vid, [pts[0]])
        for p in pts[1:]:
            if p.timestamp - cur.points[-1].timestamp > cfg.new_trajectory_gap_s:
                out.append(cur)
                cur = Trajectory(vid, [])
            cur.points.append(p)
        out.append(cur)
    return out


def infer_speed_heading(tr: Trajectory) -> Trajectory | None:
    """Fill missing speeds (km/h) and headings from consecutive fixes.

    A trajectory with every field already present is returned as is.
    Equal-timestamp successors are dropped before inference. Trajectories
    too short to infer from (fewer than 2 points) are dropped (None).
    """
    if all(p.speed_kmh is not None and p.heading_deg is not None for p in tr.points):
        return tr
    if len(tr.points) < 2:
        return None

    pts = [tr.points[0]]
    for p in tr.points[1:]:
        if p.timestamp == pts[-1].timestamp:
            continue
        pts.append(p)
    if len(pts) < 2:
        return None

    n = len(pts)
    dists = [vincenty_m(pts[i].lat, pts[i].lon, pts[i + 1].lat, pts[i + 1].lon)
             for i in range(n - 1)]
    bearings: list[float | None] = []
    for i in range(n - 1):
        if dists[i] > 1e-9:
            bearings.append(initial_bearing_deg(pts[i].lat, pts[i].lon,
                                                pts[i + 1].lat, pts[i + 1].lon))
        else:
            bearings.append(None)

    out: list[GpsPoint] = []
    prev_heading: float | None = None
    for i, p in enumerate(pts):
        heading = p.heading_deg
        if heading is None:
            if i < n - 1 and bearings[i] is not None:
                heading = bearings[i]
            elif prev_heading is not None:
                heading = prev_heading
            else:
                # stationary prefix: borrow the first defined bearing ahead
                heading = next((b for b in bearings[i:] if b is not None), 0.0)
        speed = p.speed_kmh
        if speed is None:
            if i < n - 1:
                speed = dists[i] / (pts[i + 1].timestamp - p.timestamp) * 3.6
            else:
                prev = out[-1]
                speed = prev.speed_kmh if prev.speed_kmh is not None else 0.0
        out.append(replace(p, speed_kmh=speed, heading_deg=heading))
        prev_heading = heading
    return Trajectory(tr.vehicle_id, out)


def filter_slow_points(tr: Trajectory, cfg: IngestConfig) -> Trajectory:
    """Drop fixes at or below the minimum speed (jitter while stopped)."""
    kept = [p for p in tr.points
            if p.speed_kmh is not None and p.speed_kmh > cfg.min_speed_kmh]
    return Trajectory(tr.vehicle_id, kept)


def densify(tr: Trajectory, cfg: IngestConfig) -> Trajectory:
    """Insert equidistant points into gaps wider than the sampling rate.

    A pair of consecutive fixes L1, L2 gets floor(dist/sr) interpolated
    points, but only when their headings differ by less than the angle
    gate (straight-line motion); curved gaps are left alone. Inserted
    points carry the pair's forward bearing and linearly interpolated
    timestamps and speeds.
    """
    if len(tr.points) < 2:
        return tr
    gate = cfg.densify_angle_gate_deg
    sr = cfg.sampling_rate_m
    out: list[GpsPoint] = [tr.points[0]]
    for a, b in zip(tr.points, tr.points[1:]):
        d = vincenty_m(a.lat, a.lon, b.lat, b.lon)
        if (d > 1e-9 and a.heading_deg is not None and b.heading_deg is not None
                and angle_diff_deg(a.heading_deg, b.heading_deg) < gate):
            s = int(d // sr)
            bearing = initial_bearing_deg(a.lat, a.lon, b.lat, b.lon)
            for i in range(1, s + 1):
                f = i / (s + 1)
                speed = None
                if a.speed_kmh is not None and b.speed_kmh is not None:
                    speed = a.speed_kmh + f * (b.speed_kmh - a.speed_kmh)
                out.append(GpsPoint(
                    tr.vehicle_id,
                    a.timestamp + f * (b.timestamp - a.timestamp),
                    a.lat + f * (b.lat - a.lat),
                    a.lon + f * (b.lon - a.lon),
                    speed,
                    bearing,
                ))
        out.append(b)
    return Trajectory(tr.vehicle_id, out)


def prepare_trajectories(trajectories: list[Trajectory],
                         cfg: IngestConfig) -> tuple[list[Trajectory], int]:
    """infer -> filter -> densify over a batch. Returns the surviving
    trajectories and the number dropped as too short or fully filtered."""
    out = []
    dropped = 0
    for tr in trajectories:
        got = infer_speed_heading(tr)
        if got is None:
            dropped += 1
            continue
        got = filter_slow_points(got, cfg)
        if not got.points:
            dropped += 1
            continue
        out.append(densify(got, cfg))
    if dropped:
        log.warning("dropped %d trajectory segment(s) during preparation", dropped)
    return out, dropped
