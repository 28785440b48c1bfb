"""Map and trajectory file formats.

The edge-list format is the machine interface: plain text, one record
per line, floats at fixed precision, nodes in id order and edges in
key order, so equal graphs serialize to equal bytes and outputs can be
diffed or hashed. GeoJSON export exists for putting a map on a slippy
screen, nothing reads it back. Manifests record what produced an
output file: command, full config, seed, and a content hash of every
input, with no timestamps, so reruns are comparable byte for byte.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
from typing import Iterable

from .clustering import ClusterCentroid
from .graphs import RoadGraph
from .ingest import EXPECTED_COLUMNS, Trajectory

log = logging.getLogger(__name__)

MAP_HEADER = "# kharita-map v1"


class MapFormatError(ValueError):
    """A map file that does not follow the edge-list format."""

    def __init__(self, path: str, lineno: int, problem: str):
        super().__init__(f"{path}:{lineno}: {problem}")
        self.path = path
        self.lineno = lineno


def save_map(graph: RoadGraph, path: str) -> None:
    """Write the edge-list form of a graph.

    Node lines carry id, position, heading, support, max speed, last
    seen and the active flag; edge lines carry endpoints, weight,
    trajectory count, last seen and the active flag. Cluster heading
    variability is not part of the format.
    """
    with open(path, "w") as fh:
        fh.write(MAP_HEADER + "\n")
        for i, n in enumerate(graph.nodes):
            fh.write(f"N {i} {n.lat:.9f} {n.lon:.9f} {n.heading_deg:.9f} "
                     f"{n.support} {n.max_speed_kmh:.9f} "
                     f"{n.last_seen:.9f} {int(n.active)}\n")
        for key in sorted(graph.edges):
            e = graph.edges[key]
            fh.write(f"E {e.src} {e.dst} {e.weight_m:.9f} {e.traj_count} "
                     f"{e.last_seen:.9f} {int(e.active)}\n")


def _flag(raw: str, path: str, lineno: int) -> bool:
    if raw == "0":
        return False
    if raw == "1":
        return True
    raise MapFormatError(path, lineno, f"active flag must be 0 or 1, got {raw!r}")


def load_map(path: str) -> RoadGraph:
    """Read an edge-list map file back into a RoadGraph.

    Any structural problem raises MapFormatError naming the offending
    line: bad header, unknown record type, wrong field count, numbers
    that do not parse, non-consecutive node ids, or edges that mention
    unknown nodes.
    """
    graph = RoadGraph()
    with open(path) as fh:
        first = fh.readline()
        if first.rstrip("\n") != MAP_HEADER:
            raise MapFormatError(path, 1, f"expected header {MAP_HEADER!r}")
        for lineno, raw in enumerate(fh, start=2):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            kind = parts[0]
            try:
                if kind == "N":
                    if len(parts) != 9:
                        raise MapFormatError(
                            path, lineno,
                            f"node line needs 9 fields, got {len(parts)}")
                    nid = int(parts[1])
                    if nid != len(graph.nodes):
                        raise MapFormatError(
                            path, lineno,
                            f"node ids must be consecutive from 0, got {nid}")
                    graph.add_node(ClusterCentroid(
                        lat=float(parts[2]), lon=float(parts[3]),
                        heading_deg=float(parts[4]), support=int(parts[5]),
                        max_speed_kmh=float(parts[6]),
                        last_seen=float(parts[7]),
                        active=_flag(parts[8], path, lineno)))
                elif kind == "E":
                    if len(parts) != 7:
                        raise MapFormatError(
                            path, lineno,
                            f"edge line needs 7 fields, got {len(parts)}")
                    graph.add_edge(int(parts[1]), int(parts[2]),
                                   float(parts[3]), traj_count=int(parts[4]),
                                   last_seen=float(parts[5]),
                                   active=_flag(parts[6], path, lineno))
                else:
                    raise MapFormatError(path, lineno,
                                         f"unknown record type {kind!r}")
            except MapFormatError:
                raise
            except ValueError as exc:
                raise MapFormatError(path, lineno, str(exc)) from exc
            except KeyError as exc:
                raise MapFormatError(path, lineno,
                                     str(exc).strip("'\"")) from exc
    return graph


def save_geojson(graph: RoadGraph, path: str) -> None:
    """Write one LineString feature per edge, for visual inspection."""
    features = []
    for key in sorted(graph.edges):
        e = graph.edges[key]
        a, b = graph.nodes[e.src], graph.nodes[e.dst]
        features.append({
            "type": "Feature",
            "geometry": {
                "type": "LineString",
                "coordinates": [[round(a.lon, 9), round(a.lat, 9)],
                                [round(b.lon, 9), round(b.lat, 9)]],
            },
            "properties": {"weight": round(e.weight_m, 9),
                           "traj_count": e.traj_count,
                           "active": e.active},
        })
    doc = {"type": "FeatureCollection", "features": features}
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def file_sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(path: str, command: str, config: dict,
                   inputs: Iterable[str], rng_seed: int | None = None) -> None:
    """Record what produced a run's outputs.

    config must already be a plain dict of JSON-compatible values.
    inputs are hashed by content; the manifest holds no timestamps so
    identical reruns write identical manifests.
    """
    doc = {
        "format": "kharita-manifest v1",
        "command": command,
        "config": config,
        "rng_seed": rng_seed,
        "inputs": {p: f"sha256:{file_sha256(p)}" for p in sorted(inputs)},
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def save_trajectories_csv(trajectories: list[Trajectory], path: str) -> None:
    """Write trajectories in the same CSV shape parse_trajectories reads.

    Floats use repr so a round trip reproduces values exactly; absent
    speed or heading becomes an empty field.
    """
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(EXPECTED_COLUMNS)
        for tr in trajectories:
            for p in tr.points:
                writer.writerow([
                    p.vehicle_id, repr(float(p.timestamp)),
                    repr(float(p.lat)), repr(float(p.lon)),
                    "" if p.speed_kmh is None else repr(float(p.speed_kmh)),
                    "" if p.heading_deg is None
                    else repr(float(p.heading_deg))])
