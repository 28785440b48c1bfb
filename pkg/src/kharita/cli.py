"""Command-line surface: batch inference, streaming inference, map
scoring, and synthetic ground-truth generation.

Every command validates its configuration before touching data, logs
timings and counts to stderr, and writes a manifest alongside its
outputs so a run can be reproduced byte for byte. Exit codes: 0 on
success, 1 on runtime failures (unreadable data, empty input, format
violations), 2 on usage or configuration errors.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import time
from dataclasses import asdict

from .clustering import ClusterConfig
from .evaluate import (
    DEFAULT_THRESHOLDS_M,
    EvalConfig,
    GridSpec,
    generate_synthetic,
    geo_score,
    topo_score,
)
from .graphs import PipelineStats, SpannerConfig, run_offline_pipeline
from .ingest import (
    EmptyInputError,
    IngestConfig,
    parse_trajectories,
    stream_points,
)
from .mapio import (
    MapFormatError,
    load_map,
    save_geojson,
    save_map,
    save_trajectories_csv,
    write_manifest,
)
from .online import OnlineConfig, StreamState, consume_stream

log = logging.getLogger("kharita")

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2

# config-file keys that are on/off switches rather than valued flags
BOOL_FLAGS = {
    "synth": {"roundabout"},
    "eval": {"topo", "json"},
}
TRUE_WORDS = {"1", "true", "yes", "on"}
FALSE_WORDS = {"0", "false", "no", "off"}


class UsageError(Exception):
    """Bad invocation or configuration; maps to exit code 2."""


def _require_file(path: str) -> None:
    if not os.path.isfile(path):
        raise UsageError(f"input file not found: {path}")


def _validate(*configs) -> None:
    for cfg in configs:
        try:
            cfg.validate()
        except ValueError as exc:
            raise UsageError(str(exc)) from exc


def _config_file_args(path: str, command: str) -> list[str]:
    """Translate key=value lines into flag tokens.

    The tokens are inserted before the explicit command line, so flags
    given on the command line override the file.
    """
    out: list[str] = []
    booleans = BOOL_FLAGS.get(command, set())
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = (s.strip() for s in line.partition("="))
            if not sep or not key or not value:
                raise UsageError(f"{path}:{lineno}: expected key=value")
            if key in booleans:
                if value.lower() in TRUE_WORDS:
                    out.append(f"--{key}")
                elif value.lower() not in FALSE_WORDS:
                    raise UsageError(
                        f"{path}:{lineno}: {key} takes a true/false value")
            else:
                out.extend([f"--{key}", value])
    return out


def _thresholds(text: str) -> tuple:
    return tuple(float(t) for t in text.split(","))


def _write_map_outputs(graph, out_prefix: str) -> None:
    save_map(graph, out_prefix + ".edges")
    save_geojson(graph, out_prefix + ".geojson")
    log.info("map: %d nodes, %d edges -> %s.edges, %s.geojson",
             len(graph.nodes), len(graph.edges), out_prefix, out_prefix)


def cmd_offline(args) -> int:
    ingest_cfg = IngestConfig(
        min_speed_kmh=args.min_speed, sampling_rate_m=args.sr,
        densify_angle_gate_deg=args.densify_angle,
        new_trajectory_gap_s=args.gap)
    cluster_cfg = ClusterConfig(
        seed_radius_cr=args.cr, heading_weight_theta=args.theta,
        split_threshold_deg=args.split_threshold,
        convergence_ratio=args.convergence_ratio,
        max_iterations=args.max_iterations)
    spanner_cfg = SpannerConfig(alpha=args.alpha,
                                duplex_speed_kmh=args.duplex_speed)
    _validate(ingest_cfg, cluster_cfg, spanner_cfg)
    _require_file(args.input)

    t0 = time.perf_counter()
    trajectories = parse_trajectories(args.input, ingest_cfg)
    graph = run_offline_pipeline(trajectories, ingest_cfg, cluster_cfg,
                                 spanner_cfg, PipelineStats())
    log.info("total %.3f s for %d trajectories",
             time.perf_counter() - t0, len(trajectories))

    _write_map_outputs(graph, args.out)
    write_manifest(args.out + ".manifest.json", "offline",
                   {"ingest": asdict(ingest_cfg),
                    "clustering": asdict(cluster_cfg),
                    "spanner": asdict(spanner_cfg)},
                   [args.input])
    return EXIT_OK


def cmd_online(args) -> int:
    cfg = OnlineConfig(
        clustering_radius_cr=args.cr, sampling_rate_sr=args.sr,
        heading_tolerance_ha=args.ha, alpha=args.alpha,
        staleness_horizon_s=args.staleness_horizon,
        resparsify_interval=args.resparsify_interval)
    _validate(cfg)
    if args.snapshot_every < 0:
        raise UsageError("--snapshot-every must be >= 0")
    _require_file(args.input)

    snapshot_count = 0

    def on_pair(state: StreamState) -> None:
        nonlocal snapshot_count
        if state.pairs_processed % args.snapshot_every == 0:
            path = f"{args.out}.snapshot{snapshot_count:04d}.edges"
            save_map(state.graph, path)
            snapshot_count += 1

    t0 = time.perf_counter()
    state = consume_stream(
        stream_points(args.input), cfg,
        gap_s=args.gap, min_speed_kmh=args.min_speed,
        on_pair=on_pair if args.snapshot_every else None)
    log.info("total %.3f s for %d pairs",
             time.perf_counter() - t0, state.pairs_processed)
    if snapshot_count:
        log.info("wrote %d snapshots", snapshot_count)
    if not state.graph.nodes:
        log.warning("stream held no usable pairs; writing an empty map")

    _write_map_outputs(state.graph, args.out)
    write_manifest(args.out + ".manifest.json", "online",
                   {"online": asdict(cfg),
                    "gap_s": args.gap, "min_speed_kmh": args.min_speed,
                    "snapshot_every": args.snapshot_every},
                   [args.input])
    return EXIT_OK


def _report_rows(geo, topo):
    for i, t in enumerate(geo.thresholds):
        row = [f"{t:11.1f}", f"{geo.precision[i]:7.3f}",
               f"{geo.recall[i]:7.3f}", f"{geo.f_score[i]:7.3f}"]
        if topo is not None:
            row += [f"{topo.precision[i]:8.3f}", f"{topo.recall[i]:8.3f}",
                    f"{topo.f_score[i]:8.3f}"]
        yield "".join(row)


def cmd_eval(args) -> int:
    cfg = EvalConfig(
        sample_spacing_m=args.sample_spacing,
        matching_thresholds_m=args.thresholds,
        topo_radius_m=args.topo_radius, topo_samples=args.topo_samples,
        start_match_distance_m=args.start_match_distance,
        start_angle_tolerance_deg=args.start_angle_tolerance,
        visit_distance_m=args.visit_distance, rng_seed=args.seed)
    _validate(cfg)
    want_topo = args.topo or args.trajectories is not None
    if want_topo and args.trajectories is None:
        raise UsageError("TOPO scoring needs --trajectories")
    _require_file(args.inferred)
    _require_file(args.truth)
    if args.trajectories is not None:
        _require_file(args.trajectories)

    inferred = load_map(args.inferred)
    truth = load_map(args.truth)
    t0 = time.perf_counter()
    geo = geo_score(inferred, truth, cfg)
    topo = None
    if want_topo:
        trajectories = parse_trajectories(args.trajectories, IngestConfig())
        topo = topo_score(inferred, truth, trajectories, cfg)
    log.info("scored in %.3f s", time.perf_counter() - t0)

    header = "threshold_m  geo_p  geo_r  geo_f"
    if topo is not None:
        header += "  topo_p  topo_r  topo_f"
    print(header)
    for line in _report_rows(geo, topo):
        print(line)
    if topo is not None:
        print(f"topo samples: {topo.samples_valid}/{topo.samples_total} "
              f"valid, seed {topo.seed}")

    if args.json:
        doc = {"rng_seed": cfg.rng_seed, "geo": geo.as_dict(),
               "topo": topo.as_dict() if topo is not None else None}
        with open(args.out + ".report.json", "w") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")
        log.info("wrote %s.report.json", args.out)

    inputs = [args.inferred, args.truth]
    if args.trajectories is not None:
        inputs.append(args.trajectories)
    write_manifest(args.out + ".manifest.json", "eval",
                   {"eval": asdict(cfg)}, inputs, rng_seed=cfg.rng_seed)
    return EXIT_OK


def cmd_synth(args) -> int:
    spec = GridSpec(rows=args.rows, cols=args.cols, block_m=args.block,
                    two_way_fraction=args.two_way,
                    roundabout=args.roundabout)
    _validate(spec)
    if args.noise < 0:
        raise UsageError("--noise must be >= 0")
    if args.spacing <= 0:
        raise UsageError("--spacing must be positive")
    if args.traj < 0:
        raise UsageError("--traj must be >= 0")

    t0 = time.perf_counter()
    graph, trajectories = generate_synthetic(
        spec, noise_sigma_m=args.noise, n_trajectories=args.traj,
        sampling_spacing_m=args.spacing, rng_seed=args.seed,
        heading_noise_deg=args.heading_noise)
    log.info("generated %d nodes, %d edges, %d trajectories in %.3f s",
             len(graph.nodes), len(graph.edges), len(trajectories),
             time.perf_counter() - t0)

    save_map(graph, args.out + ".truth.edges")
    save_trajectories_csv(trajectories, args.out + ".trajectories.csv")
    log.info("wrote %s.truth.edges, %s.trajectories.csv",
             args.out, args.out)
    write_manifest(args.out + ".manifest.json", "synth",
                   {"grid": asdict(spec), "noise_sigma_m": args.noise,
                    "n_trajectories": args.traj,
                    "sampling_spacing_m": args.spacing,
                    "heading_noise_deg": args.heading_noise},
                   [], rng_seed=args.seed)
    return EXIT_OK


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", default=None,
                   help="key=value file; command-line flags override it")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kharita",
        description="Road-network inference from GPS trajectories")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("offline", help="batch inference from a trajectory CSV")
    _add_common(p)
    p.add_argument("--input", required=True, help="trajectory CSV")
    p.add_argument("--out", required=True, help="output path prefix")
    p.add_argument("--cr", type=float, default=20.0,
                   help="cluster seed radius, meters")
    p.add_argument("--theta", type=float, default=None,
                   help="heading weight, meters per half-turn (default 2*cr)")
    p.add_argument("--alpha", type=float, default=math.sqrt(2.0),
                   help="spanner stretch factor")
    p.add_argument("--sr", type=float, default=20.0,
                   help="densification spacing, meters")
    p.add_argument("--min-speed", type=float, default=5.0,
                   help="drop fixes at or below this speed, km/h")
    p.add_argument("--gap", type=float, default=300.0,
                   help="time gap starting a new trajectory, seconds")
    p.add_argument("--densify-angle", type=float, default=5.0,
                   help="max heading change for densification, degrees")
    p.add_argument("--split-threshold", type=float, default=10.0,
                   help="heading variability split threshold, degrees")
    p.add_argument("--convergence-ratio", type=float, default=1e-4)
    p.add_argument("--max-iterations", type=int, default=100)
    p.add_argument("--duplex-speed", type=float, default=60.0,
                   help="add reverse edges at or below this speed, km/h")
    p.set_defaults(func=cmd_offline)

    p = sub.add_parser("online", help="streaming inference from a CSV in "
                                      "arrival order")
    _add_common(p)
    p.add_argument("--input", required=True, help="trajectory CSV")
    p.add_argument("--out", required=True, help="output path prefix")
    p.add_argument("--cr", type=float, default=20.0,
                   help="clustering radius, meters")
    p.add_argument("--sr", type=float, default=20.0,
                   help="densification spacing, meters")
    p.add_argument("--ha", type=float, default=45.0,
                   help="heading tolerance, degrees")
    p.add_argument("--alpha", type=float, default=math.sqrt(2.0),
                   help="spanner stretch factor")
    p.add_argument("--staleness-horizon", type=float, default=7 * 86400.0,
                   help="seconds without traffic before parts go stale")
    p.add_argument("--resparsify-interval", type=int, default=100000,
                   help="pairs between spanner re-runs")
    p.add_argument("--min-speed", type=float, default=5.0,
                   help="drop fixes at or below this speed, km/h")
    p.add_argument("--gap", type=float, default=300.0,
                   help="silence splitting a vehicle's stream, seconds")
    p.add_argument("--snapshot-every", type=int, default=0,
                   help="write a numbered snapshot every N pairs (0 = off)")
    p.set_defaults(func=cmd_online)

    p = sub.add_parser("eval", help="score an inferred map against a truth map")
    _add_common(p)
    p.add_argument("--inferred", required=True, help="edge-list map file")
    p.add_argument("--truth", required=True, help="edge-list map file")
    p.add_argument("--trajectories", default=None,
                   help="trajectory CSV; enables TOPO scoring")
    p.add_argument("--out", default="kharita-eval",
                   help="output path prefix for report and manifest")
    p.add_argument("--topo", action="store_true",
                   help="require TOPO scoring (needs --trajectories)")
    p.add_argument("--json", action="store_true",
                   help="also write the report as JSON")
    p.add_argument("--thresholds", type=_thresholds,
                   default=DEFAULT_THRESHOLDS_M,
                   help="comma-separated matching thresholds, meters")
    p.add_argument("--sample-spacing", type=float, default=5.0,
                   help="edge sampling spacing, meters")
    p.add_argument("--topo-radius", type=float, default=2000.0,
                   help="reachability radius, meters")
    p.add_argument("--topo-samples", type=int, default=200,
                   help="number of random starting points")
    p.add_argument("--start-match-distance", type=float, default=1.0,
                   help="max distance between paired starts, meters")
    p.add_argument("--start-angle-tolerance", type=float, default=10.0,
                   help="max heading difference between paired starts, degrees")
    p.add_argument("--visit-distance", type=float, default=30.0,
                   help="point-to-edge distance that marks a truth edge "
                        "as visited, meters")
    p.add_argument("--seed", type=int, default=0, help="evaluation RNG seed")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="generate a ground-truth grid and "
                                     "simulated trajectories")
    _add_common(p)
    p.add_argument("--out", required=True, help="output path prefix")
    p.add_argument("--rows", type=int, default=5)
    p.add_argument("--cols", type=int, default=5)
    p.add_argument("--block", type=float, default=100.0,
                   help="block edge length, meters")
    p.add_argument("--two-way", type=float, default=1.0,
                   help="fraction of streets that run both ways")
    p.add_argument("--roundabout", action="store_true",
                   help="replace the central intersection with a circle")
    p.add_argument("--traj", type=int, default=100,
                   help="number of trajectories")
    p.add_argument("--noise", type=float, default=3.0,
                   help="GPS noise sigma, meters")
    p.add_argument("--spacing", type=float, default=20.0,
                   help="fix spacing along routes, meters")
    p.add_argument("--heading-noise", type=float, default=5.0,
                   help="heading noise sigma, degrees")
    p.add_argument("--seed", type=int, default=0, help="generator RNG seed")
    p.set_defaults(func=cmd_synth)

    return parser


def _extract_config_path(argv: list[str]) -> str | None:
    for i, tok in enumerate(argv):
        if tok == "--config":
            return argv[i + 1] if i + 1 < len(argv) else None
        if tok.startswith("--config="):
            return tok.split("=", 1)[1]
    return None


def main(argv=None) -> int:
    args_in = list(sys.argv[1:] if argv is None else argv)
    logging.basicConfig(level=logging.INFO, stream=sys.stderr,
                        format="%(levelname)s: %(message)s")
    parser = build_parser()

    try:
        cfg_path = _extract_config_path(args_in)
        if cfg_path is not None:
            _require_file(cfg_path)
            injected = _config_file_args(cfg_path, args_in[0])
            args_in = [args_in[0]] + injected + args_in[1:]
    except UsageError as exc:
        log.error("%s", exc)
        return EXIT_USAGE

    try:
        args = parser.parse_args(args_in)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE

    try:
        return args.func(args)
    except UsageError as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    except (EmptyInputError, MapFormatError) as exc:
        log.error("%s", exc)
        return EXIT_RUNTIME
    except (OSError, ValueError) as exc:
        log.error("%s", exc)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
