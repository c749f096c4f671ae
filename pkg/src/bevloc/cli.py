"""Command-line interface.

Subcommands: ``simulate`` (synthesize a world map and a drive),
``train`` (fit the matching embeddings on recorded drives),
``localize`` (run the filter over one drive and export the trajectory),
``eval`` (aggregate metrics over one or more drives), and ``bench``
(score-volume timing comparison).

Every option can also be supplied through ``--config FILE`` holding
``key = value`` lines (keys are the long flag names); explicit flags
override the file, which overrides built-in defaults.  On error,
partially written output files are removed and the process exits
nonzero.
"""

from __future__ import annotations

import argparse
import csv
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import embed, evaluate, filtering, matching, sim, training
from .grid import GridGeometry, load_map, save_map
from .pose import Pose2D


def _parse_bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _parse_triple(s: str):
    parts = [float(p) for p in s.split(",")]
    if len(parts) != 3:
        raise ValueError(f"expected three comma-separated values, got {s!r}")
    return tuple(parts)


def load_config_file(path) -> dict:
    """Parse ``key = value`` lines; '#' starts a comment; keys may use
    '-' or '_' interchangeably."""
    out = {}
    with open(path) as f:
        for ln, raw in enumerate(f, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{ln}: expected 'key = value'")
            key, val = line.split("=", 1)
            out[key.strip().replace("-", "_")] = val.strip()
    return out


class _Options:
    """Declarative option table with defaults + config + CLI merging."""

    def __init__(self):
        self.table = {}

    def add(self, name, conv, default, help_text, flag=False):
        self.table[name] = (conv, default, help_text, flag)
        return self

    def install(self, parser: argparse.ArgumentParser):
        for name, (conv, default, help_text, flag) in self.table.items():
            arg = "--" + name.replace("_", "-")
            if flag:
                parser.add_argument(arg, action="store_true", default=None,
                                    help=help_text)
            else:
                parser.add_argument(arg, default=None, metavar="V",
                                    help=f"{help_text} (default: {default})")

    def resolve(self, args: argparse.Namespace) -> dict:
        config = {}
        if getattr(args, "config", None):
            raw = load_config_file(args.config)
            unknown = set(raw) - set(self.table)
            if unknown:
                raise ValueError(
                    f"unknown config keys: {', '.join(sorted(unknown))}")
            for k, v in raw.items():
                conv, _, _, flag = self.table[k]
                config[k] = _parse_bool(v) if flag else conv(v)
        resolved = {}
        for name, (conv, default, _, flag) in self.table.items():
            cli_val = getattr(args, name)
            if cli_val is not None:
                resolved[name] = cli_val if flag else conv(cli_val)
            elif name in config:
                resolved[name] = config[name]
            else:
                resolved[name] = default
        return resolved


class OutputTracker:
    """Remembers files created by a command so they can be removed on failure."""

    def __init__(self):
        self.paths = []

    def declare(self, path):
        if path:
            self.paths.append(path)
        return path

    def cleanup(self):
        for p in self.paths:
            try:
                if p and os.path.exists(p):
                    os.remove(p)
            except OSError:
                pass


def _window_from(opts, resolution=None) -> matching.SearchWindow:
    # Callers that loaded a map pass its stored resolution so the window
    # and the grid use the identical float (BVG1 keeps it in float32).
    return matching.SearchWindow(
        x_cells=opts["window_x_cells"],
        y_cells=opts["window_y_cells"],
        n_theta=opts["n_theta"],
        theta_step=math.radians(opts["theta_step_deg"]),
        resolution=opts["resolution"] if resolution is None else resolution,
    )


def _add_window_opts(o: _Options, resolution=0.05):
    (o.add("window_x_cells", int, 21, "search window width in cells")
      .add("window_y_cells", int, 21, "search window height in cells")
      .add("n_theta", int, 5, "number of heading candidates (odd)")
      .add("theta_step_deg", float, 0.5, "heading candidate spacing, degrees")
      .add("resolution", float, resolution, "grid cell size, meters"))
    return o


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

def _simulate_options() -> _Options:
    o = _Options()
    (o.add("out_map", str, None, "output BVG1 map path")
      .add("out_drive", str, None, "output DRV1 drive path")
      .add("out_csv", str, None, "optional drive summary CSV")
      .add("map_length", float, 60.0, "world extent along x, meters")
      .add("map_width", float, 30.0, "world extent along y, meters")
      .add("resolution", float, 0.05, "map cell size, meters")
      .add("lane_spacing", float, 3.5, "lane marking spacing, meters")
      .add("texture_amplitude", float, 0.35, "surface texture strength [0,1]")
      .add("blob_count", int, 120, "number of reflective blobs")
      .add("world_seed", int, 0, "map generation seed")
      .add("steps", int, 200, "number of drive steps")
      .add("step_length", float, 0.4, "nominal distance per step, meters")
      .add("start_x", float, 6.0, "start x, meters")
      .add("start_y", float, None, "start y, meters (default: mid-height)")
      .add("lateral_amplitude", float, 1.0, "lane-weave amplitude, meters")
      .add("lateral_period", float, 40.0, "lane-weave period, meters")
      .add("weave_amplitude", float, 0.0, "slow weave amplitude, meters")
      .add("weave_period", float, 160.0, "slow weave period, meters")
      .add("beams", int, 360, "sensor beams per sweep")
      .add("range_samples", int, 64, "range samples per beam")
      .add("max_range", float, 8.0, "sensor range, meters")
      .add("sweeps", int, 5, "accumulation window size k")
      .add("odo_sigma", _parse_triple, (0.0, 0.0, 0.0),
           "odometry noise sigma 'x,y,theta_deg' per step")
      .add("gain_min", float, 1.0, "per-beam gain lower bound")
      .add("gain_max", float, 1.0, "per-beam gain upper bound")
      .add("bias_min", float, 0.0, "per-beam bias lower bound")
      .add("bias_max", float, 0.0, "per-beam bias upper bound")
      .add("dropout", float, 0.0, "per-point dropout probability")
      .add("intensity_sigma", float, 0.0, "additive intensity noise sigma")
      .add("gps_sigma", float, 10.0, "GPS noise sigma, meters")
      .add("gps_bias_x", float, 0.0, "GPS bias x, meters")
      .add("gps_bias_y", float, 0.0, "GPS bias y, meters")
      .add("seed", int, 0, "drive noise seed"))
    return o


def cmd_simulate(opts, out: OutputTracker) -> int:
    if opts["steps"] <= 0:
        raise ValueError("simulate: --steps must be positive")
    if not opts["out_map"] or not opts["out_drive"]:
        raise ValueError("simulate: --out-map and --out-drive are required")
    world = sim.WorldConfig(
        size_x=opts["map_length"], size_y=opts["map_width"],
        resolution=opts["resolution"], lane_spacing=opts["lane_spacing"],
        texture_amplitude=opts["texture_amplitude"],
        blob_count=opts["blob_count"], seed=opts["world_seed"])
    map_grid = sim.generate_map(world)

    start_y = opts["start_y"]
    if start_y is None:
        start_y = opts["map_width"] / 2.0
    traj = sim.TrajectorySpec(
        steps=opts["steps"], start=Pose2D(opts["start_x"], start_y, 0.0),
        step_length=opts["step_length"],
        lateral_amplitude=opts["lateral_amplitude"],
        lateral_period=opts["lateral_period"],
        weave_amplitude=opts["weave_amplitude"],
        weave_period=opts["weave_period"])
    sensor = sim.SensorConfig(beams=opts["beams"],
                              range_samples=opts["range_samples"],
                              max_range=opts["max_range"],
                              k_sweeps=opts["sweeps"])
    sx, sy, sdeg = opts["odo_sigma"]
    noise = sim.NoiseConfig(
        odo_sigma=(sx, sy, math.radians(sdeg)),
        gain_range=(opts["gain_min"], opts["gain_max"]),
        bias_range=(opts["bias_min"], opts["bias_max"]),
        dropout=opts["dropout"], intensity_sigma=opts["intensity_sigma"],
        gps_sigma=opts["gps_sigma"],
        gps_bias=(opts["gps_bias_x"], opts["gps_bias_y"]))
    steps = sim.simulate_drive(map_grid, traj, sensor, noise, seed=opts["seed"])

    save_map(out.declare(opts["out_map"]), map_grid)
    sim.save_drive(out.declare(opts["out_drive"]), steps,
                   k_sweeps=sensor.k_sweeps, gps_sigma=noise.gps_sigma)
    if opts["out_csv"]:
        sim.export_drive_csv(out.declare(opts["out_csv"]), steps)
    n_pts = sum(sw.points.shape[0] for st in steps for sw in st.sweeps[-1:])
    print(f"simulate: map {map_grid.rows}x{map_grid.cols} @ "
          f"{map_grid.resolution:.3f} m, {len(steps)} steps, "
          f"{n_pts} sensed points -> {opts['out_map']}, {opts['out_drive']}")
    return 0


# ---------------------------------------------------------------------------
# localize / eval (shared filter construction)
# ---------------------------------------------------------------------------

def _localizer_options(defaults_rows=480, defaults_cols=600) -> _Options:
    o = _Options()
    (o.add("map", str, None, "BVG1 map path")
      .add("drive", str, None, "DRV1 drive path")
      .add("checkpoint", str, None, "FCN1 embedding checkpoint")
      .add("raw", None, False, "use raw intensity (identity embedding)", flag=True)
      .add("online_rows", int, defaults_rows, "online grid rows (lateral cells)")
      .add("online_cols", int, defaults_cols, "online grid cols (longitudinal cells)")
      .add("alpha", float, 2.0, "soft-argmax sharpening exponent")
      .add("gps_sigma", float, 10.0, "GPS likelihood sigma, meters")
      .add("motion_sigma", _parse_triple, (3.0, 3.0, 3.0),
           "motion model sigma diag 'sx,sy,st' in cells")
      .add("motion_mode", str, "gaussian",
           "motion weight mode: gaussian | truncated_quadratic")
      .add("lidar_mode", str, None,
           "lidar likelihood mode: softmax | raw (default: softmax, or "
           "raw when --raw is set)")
      .add("normalization", str, "global",
           "correlation normalization: global | overlap")
      .add("no_motion", None, False, "skip the motion/prediction stage", flag=True)
      .add("no_gps", None, False, "ignore GPS observations", flag=True)
      .add("hard_argmax", None, False, "hard argmax instead of soft", flag=True)
      .add("init_x", float, None, "initial pose x (default: first GT pose)")
      .add("init_y", float, None, "initial pose y")
      .add("init_theta_deg", float, None, "initial pose heading, degrees"))
    _add_window_opts(o)
    return o


def _build_localizer(opts, map_resolution: float):
    if bool(opts["checkpoint"]) == bool(opts["raw"]):
        raise ValueError("exactly one of --checkpoint or --raw is required")
    params_online = params_map = None
    if opts["checkpoint"]:
        params_online, params_map = embed.load_checkpoint(opts["checkpoint"])
    lidar_mode = opts["lidar_mode"]
    if lidar_mode is None:
        lidar_mode = "raw" if opts["raw"] else "softmax"
    if abs(opts["resolution"] - map_resolution) > 1e-9:
        raise ValueError(
            f"--resolution {opts['resolution']} does not match map resolution "
            f"{map_resolution}")
    sx, sy, st = opts["motion_sigma"]
    config = filtering.LocalizerConfig(
        geometry=GridGeometry(opts["online_rows"], opts["online_cols"],
                              map_resolution),
        window=_window_from(opts, resolution=map_resolution),
        motion=filtering.MotionModel(sigma=np.diag([sx, sy, st]).astype(float),
                                     mode=opts["motion_mode"]),
        params_online=params_online, params_map=params_map,
        alpha=opts["alpha"], gps_sigma=opts["gps_sigma"],
        use_motion=not opts["no_motion"], use_gps=not opts["no_gps"],
        lidar_mode=lidar_mode,
        argmax="hard" if opts["hard_argmax"] else "soft",
        normalization=opts["normalization"])
    return config


def _init_pose_from(opts):
    if opts["init_x"] is None and opts["init_y"] is None \
            and opts["init_theta_deg"] is None:
        return None
    if None in (opts["init_x"], opts["init_y"], opts["init_theta_deg"]):
        raise ValueError("provide all of --init-x, --init-y, --init-theta-deg "
                         "or none of them")
    return Pose2D(opts["init_x"], opts["init_y"],
                  math.radians(opts["init_theta_deg"]))


def _localize_options() -> _Options:
    o = _localizer_options()
    (o.add("out", str, None, "trajectory CSV output")
      .add("report", str, None, "aggregate metrics CSV output")
      .add("fail_threshold", float, 1.0, "failure threshold on total error, m"))
    return o


def cmd_localize(opts, out: OutputTracker) -> int:
    if not opts["map"] or not opts["drive"]:
        raise ValueError("localize: --map and --drive are required")
    map_grid = load_map(opts["map"])
    steps, _, _ = sim.load_drive(opts["drive"])
    config = _build_localizer(opts, map_grid.resolution)
    result = evaluate.run_sequence(map_grid, steps, config,
                                   _init_pose_from(opts))
    metrics = evaluate.sequence_metrics(result, opts["fail_threshold"])
    if opts["out"]:
        evaluate.write_trajectory_csv(out.declare(opts["out"]), result)
    if opts["report"]:
        evaluate.write_report_csv(out.declare(opts["report"]),
                                  [os.path.basename(opts["drive"])], [metrics])
    print(f"localize: {len(steps)} steps in {result.elapsed_s:.1f}s "
          f"({1e3 * result.elapsed_s / len(steps):.0f} ms/step); "
          f"median |lat| {100 * metrics.median_lateral:.2f} cm, "
          f"median |lon| {100 * metrics.median_longitudinal:.2f} cm, "
          f"median |heading| {math.degrees(metrics.median_heading):.3f} deg, "
          f"failed={metrics.failed_end}")
    return 0


def _eval_options() -> _Options:
    o = _Options()
    (o.add("out_report", str, None, "metrics CSV (one row per sequence + ALL)")
      .add("curves_prefix", str, None,
           "write per-sequence error-vs-distance and cumulative-error "
           "CSVs with this path prefix")
      .add("fail_threshold", float, 1.0, "failure threshold on total error, m")
      .add("workers", int, 4, "thread pool size for parallel sequences"))
    return o


def cmd_eval(opts, out: OutputTracker, trajectory_paths) -> int:
    if not trajectory_paths:
        raise ValueError("eval: at least one --trajectory CSV is required")
    with ThreadPoolExecutor(max_workers=max(1, opts["workers"])) as pool:
        results = list(pool.map(evaluate.read_trajectory_csv, trajectory_paths))
    metrics = [evaluate.sequence_metrics(r, opts["fail_threshold"])
               for r in results]
    names = [os.path.basename(p) for p in trajectory_paths]
    if opts["out_report"]:
        evaluate.write_report_csv(out.declare(opts["out_report"]), names, metrics)
    if opts["curves_prefix"]:
        for name, r in zip(names, results):
            centers, meds = evaluate.error_vs_distance(r)
            evaluate.write_curve_csv(
                out.declare(f"{opts['curves_prefix']}{name}.dist.csv"),
                centers, meds)
            errs, frac = evaluate.cumulative_error_curve(r)
            evaluate.write_curve_csv(
                out.declare(f"{opts['curves_prefix']}{name}.cum.csv"),
                errs, frac, x_name="total_err_m", value_name="fraction")
    n_failed = sum(m.failed_end for m in metrics)
    for name, m in zip(names, metrics):
        print(f"eval[{name}]: median |lat| {100 * m.median_lateral:.2f} cm, "
              f"|lon| {100 * m.median_longitudinal:.2f} cm, "
              f"total {100 * m.median_total:.2f} cm, failed={m.failed_end}")
    med = evaluate.median_lower([m.median_total for m in metrics])
    print(f"eval: {len(results)} sequences; median-of-medians total "
          f"{100 * med:.2f} cm; failure rate "
          f"{100.0 * n_failed / len(results):.1f}%")
    return 0


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def _train_options() -> _Options:
    o = _Options()
    (o.add("map", str, None, "BVG1 map path")
      .add("out_checkpoint", str, None, "output FCN1 checkpoint path")
      .add("metrics", str, None, "per-epoch metrics CSV")
      .add("online_rows", int, 64, "online grid rows for training samples")
      .add("online_cols", int, 80, "online grid cols for training samples")
      .add("embed_dim", int, 1, "embedding channels")
      .add("width", int, 16, "hidden channels per layer")
      .add("depth", int, 6, "number of conv layers")
      .add("epochs", int, 12, "training epochs")
      .add("batch_size", int, 8, "minibatch size")
      .add("step_size", float, 1e-3, "Adam step size")
      .add("decay", float, 1.0, "per-epoch step-size multiplier")
      .add("stride", int, 1, "use every n-th drive step as a sample")
      .add("data_fraction", float, 1.0,
           "fraction of samples to train on (1.0, 0.25, 0.05, or 0.01)")
      .add("normalization", str, "global",
           "correlation normalization: global | overlap")
      .add("seed", int, 0, "training seed"))
    _add_window_opts(o)
    return o


_DATA_FRACTIONS = (1.0, 0.25, 0.05, 0.01)


def cmd_train(opts, out: OutputTracker, drive_paths) -> int:
    if not opts["map"] or not opts["out_checkpoint"]:
        raise ValueError("train: --map and --out-checkpoint are required")
    if not drive_paths:
        raise ValueError("train: at least one --drive is required")
    if not any(abs(opts["data_fraction"] - f) < 1e-12 for f in _DATA_FRACTIONS):
        raise ValueError(
            f"train: --data-fraction must be one of {_DATA_FRACTIONS}")
    map_grid = load_map(opts["map"])
    geometry = GridGeometry(opts["online_rows"], opts["online_cols"],
                            map_grid.resolution)
    if abs(opts["resolution"] - map_grid.resolution) > 1e-9:
        raise ValueError("train: --resolution must match the map resolution")
    window = _window_from(opts, resolution=map_grid.resolution)
    samples = []
    for i, path in enumerate(drive_paths):
        steps, _, _ = sim.load_drive(path)
        samples.extend(training.build_samples(
            map_grid, steps, geometry, window,
            seed=opts["seed"] + i, stride=opts["stride"]))
    samples = training.subsample(samples, opts["data_fraction"], opts["seed"])
    config = training.TrainConfig(
        embed_dim=opts["embed_dim"], width=opts["width"], depth=opts["depth"],
        epochs=opts["epochs"], batch_size=opts["batch_size"],
        step_size=opts["step_size"], decay=opts["decay"], seed=opts["seed"],
        normalization=opts["normalization"])
    t0 = time.perf_counter()
    result = training.train(samples, window, config)
    elapsed = time.perf_counter() - t0
    embed.save_checkpoint(out.declare(opts["out_checkpoint"]),
                          result.params_online, result.params_map)
    if opts["metrics"]:
        training.write_metrics_csv(out.declare(opts["metrics"]), result.history)
    last = result.history[-1]
    print(f"train: {len(samples)} samples, {config.epochs} epochs in "
          f"{elapsed:.1f}s; final loss {last.mean_loss:.4f}, "
          f"top-1 {100 * last.top1_acc:.1f}% -> {opts['out_checkpoint']}")
    return 0


# ---------------------------------------------------------------------------
# bench
# ---------------------------------------------------------------------------

def _bench_options() -> _Options:
    o = _Options()
    (o.add("out", str, None, "benchmark CSV output")
      .add("channels", str, "1,2,4,8,12",
           "embedding channel counts, comma-separated")
      .add("reps", int, 100, "timing repetitions per configuration")
      .add("online_rows", int, 480, "correlation kernel rows")
      .add("online_cols", int, 600, "correlation kernel cols")
      .add("seed", int, 0, "random input seed"))
    _add_window_opts(o)
    return o


def bench_matching(rows, cols, window, channels, reps, seed=0):
    """Time the correlation stage of both score-volume paths on random
    embeddings.  The rotation stack is prebuilt and shared, so the
    numbers isolate the part the two methods implement differently.
    Returns rows of (method, channels, median_s, mean_s, min_s)."""
    if reps <= 0:
        raise ValueError("bench: reps must be positive")
    rng = np.random.default_rng(seed)
    results = []
    for ch in channels:
        emb = rng.standard_normal((ch, rows, cols)).astype(np.float32)
        mask = np.ones((rows, cols), dtype=bool)
        mrows = rows + window.y_cells - 1
        mcols = cols + window.x_cells - 1
        memb = rng.standard_normal((ch, mrows, mcols)).astype(np.float32)
        mmask = np.ones((mrows, mcols), dtype=bool)
        stack = matching.rotate_embedding(emb, mask, window)
        for name, fn in (("spatial", matching.score_from_stack_spatial),
                         ("fft", matching.score_from_stack_fft)):
            fn(stack, memb, mmask, window)  # warm caches / FFT plans
            times = []
            for _ in range(reps):
                t0 = time.perf_counter()
                fn(stack, memb, mmask, window)
                times.append(time.perf_counter() - t0)
            times.sort()
            results.append((name, ch, times[(len(times) - 1) // 2],
                            float(np.mean(times)), times[0]))
    return results


def cmd_bench(opts, out: OutputTracker) -> int:
    channels = [int(c) for c in str(opts["channels"]).split(",") if c.strip()]
    if not channels:
        raise ValueError("bench: --channels must name at least one count")
    window = _window_from(opts)
    rows_out = bench_matching(opts["online_rows"], opts["online_cols"], window,
                              channels, opts["reps"], opts["seed"])
    kernel = f"{opts['online_rows']}x{opts['online_cols']}"
    if opts["out"]:
        with open(out.declare(opts["out"]), "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["method", "channels", "kernel", "reps",
                        "median_s", "mean_s", "min_s"])
            for name, ch, med, mean, mn in rows_out:
                w.writerow([name, ch, kernel, opts["reps"],
                            f"{med:.6f}", f"{mean:.6f}", f"{mn:.6f}"])
    for name, ch, med, mean, mn in rows_out:
        print(f"bench[{name} ch={ch} {kernel}]: median {1e3 * med:.2f} ms, "
              f"mean {1e3 * mean:.2f} ms, min {1e3 * mn:.2f} ms")
    med_by = {(n, c): m for n, c, m, _, _ in rows_out}
    for ch in channels:
        if ("spatial", ch) in med_by and ("fft", ch) in med_by:
            print(f"bench[speedup ch={ch}]: "
                  f"{med_by[('spatial', ch)] / med_by[('fft', ch)]:.1f}x")
    return 0


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def _build_parser():
    parser = argparse.ArgumentParser(
        prog="bevloc",
        description="BEV intensity-map localization: simulate, train, "
                    "localize, eval, bench.")
    sub = parser.add_subparsers(dest="command", required=True)
    tables = {}
    for name, opts_fn, helptext in (
            ("simulate", _simulate_options, "generate a synthetic map and drive"),
            ("train", _train_options, "train matching embeddings on drives"),
            ("localize", _localize_options, "run the localizer over one drive"),
            ("eval", _eval_options, "aggregate metrics over drives"),
            ("bench", _bench_options, "time the score-volume implementations")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", default=None, metavar="FILE",
                       help="key=value option file (flags override it)")
        if name == "train":
            p.add_argument("--drive", action="append", default=None,
                           metavar="PATH", help="DRV1 drive path (repeatable)")
        elif name == "eval":
            p.add_argument("--trajectory", action="append", default=None,
                           metavar="PATH",
                           help="trajectory CSV from `localize` (repeatable)")
        table = opts_fn()
        table.install(p)
        tables[name] = table
    return parser, tables


def main(argv=None) -> int:
    parser, tables = _build_parser()
    args = parser.parse_args(argv)
    table = tables[args.command]
    out = OutputTracker()
    try:
        opts = table.resolve(args)
        if args.command == "simulate":
            return cmd_simulate(opts, out)
        if args.command == "train":
            return cmd_train(opts, out, args.drive or [])
        if args.command == "localize":
            return cmd_localize(opts, out)
        if args.command == "eval":
            return cmd_eval(opts, out, args.trajectory or [])
        if args.command == "bench":
            return cmd_bench(opts, out)
        raise AssertionError(f"unhandled command {args.command}")
    except (ValueError, OSError, RuntimeError) as e:
        out.cleanup()
        print(f"bevloc {args.command}: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
