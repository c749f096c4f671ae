"""Trajectory evaluation: error decomposition, aggregates, and reports.

Errors are measured in the ground-truth vehicle frame: longitudinal is
along the heading, lateral across it.  A sequence *fails* when any frame
exceeds the total-error threshold; failure is reported at fixed driven
distances (100 m, 500 m) and at the end of the sequence.
"""

from __future__ import annotations

import csv
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import filtering
from .grid import BevGrid
from .pose import Pose2D, compose, inverse_compose


@dataclass(frozen=True)
class FrameErrors:
    """Signed errors of one estimate in the GT vehicle frame."""

    lateral: float
    longitudinal: float
    heading: float

    @property
    def total(self) -> float:
        return math.hypot(self.lateral, self.longitudinal)


def frame_errors(gt: Pose2D, est: Pose2D) -> FrameErrors:
    rel = inverse_compose(est, gt)
    return FrameErrors(lateral=rel.y, longitudinal=rel.x, heading=rel.theta)


def median_lower(values) -> float:
    """Lower median: element at index ``(n-1)//2`` of the sorted values."""
    v = sorted(float(x) for x in values)
    if not v:
        raise ValueError("median_lower: empty input")
    return v[(len(v) - 1) // 2]


@dataclass(frozen=True)
class SequenceResult:
    """Per-step record of a localization run."""

    gt: list
    est: list
    elapsed_s: float

    def errors(self) -> list[FrameErrors]:
        return [frame_errors(g, e) for g, e in zip(self.gt, self.est)]


@dataclass(frozen=True)
class SequenceMetrics:
    median_lateral: float
    median_longitudinal: float
    median_total: float
    median_heading: float
    mean_lateral: float
    mean_longitudinal: float
    max_total: float
    failed_100m: bool
    failed_500m: bool
    failed_end: bool

    @property
    def failed(self) -> bool:
        return self.failed_end


def gt_cumulative_distance(gts) -> np.ndarray:
    xy = np.array([[p.x, p.y] for p in gts])
    seg = np.linalg.norm(np.diff(xy, axis=0), axis=1)
    return np.concatenate([[0.0], np.cumsum(seg)])


def sequence_metrics(result: SequenceResult,
                     fail_threshold: float = 1.0) -> SequenceMetrics:
    errs = result.errors()
    lat = [abs(e.lateral) for e in errs]
    lon = [abs(e.longitudinal) for e in errs]
    heading = [abs(e.heading) for e in errs]
    total = np.array([e.total for e in errs])
    dist = gt_cumulative_distance(result.gt)

    def failed_before(limit):
        sel = total[dist <= limit] if limit is not None else total
        return bool(np.any(sel > fail_threshold))

    return SequenceMetrics(
        median_lateral=median_lower(lat),
        median_longitudinal=median_lower(lon),
        median_total=median_lower(total),
        median_heading=median_lower(heading),
        mean_lateral=float(np.mean(lat)),
        mean_longitudinal=float(np.mean(lon)),
        max_total=float(total.max()),
        failed_100m=failed_before(100.0),
        failed_500m=failed_before(500.0),
        failed_end=failed_before(None),
    )


def run_sequence(map_grid: BevGrid, steps,
                 config: filtering.LocalizerConfig,
                 init_pose: Pose2D | None = None) -> SequenceResult:
    """Run the filter over a recorded drive.

    The filter is initialized at ``init_pose`` (default: the first
    ground-truth pose, step 0 consumed as the anchor) and then stepped
    through every record.
    """
    if not steps:
        raise ValueError("run_sequence: empty drive")
    start = init_pose if init_pose is not None else steps[0].gt
    state = filtering.make_initial_state(config, start)
    gts, ests = [], []
    t0 = time.perf_counter()
    for st in steps:
        state, est = filtering.step(state, st.sweeps, map_grid, st.gps,
                                    st.odo, config)
        gts.append(st.gt)
        ests.append(est)
    return SequenceResult(gt=gts, est=ests,
                          elapsed_s=time.perf_counter() - t0)


def run_sequences(map_grid: BevGrid, drives, config,
                  init_poses=None, workers: int = 4) -> list[SequenceResult]:
    """Evaluate several drives concurrently (numpy releases the GIL in
    the FFT and GEMM kernels, so threads overlap usefully)."""
    if init_poses is None:
        init_poses = [None] * len(drives)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futs = [pool.submit(run_sequence, map_grid, d, config, p)
                for d, p in zip(drives, init_poses)]
        return [f.result() for f in futs]


def dead_reckoning_trajectory(steps, start: Pose2D | None = None) -> list[Pose2D]:
    """Odometry-only baseline: integrate the recorded odometry."""
    pose = start if start is not None else steps[0].gt
    out = []
    for st in steps:
        pose = compose(pose, st.odo)
        out.append(pose)
    return out


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

def write_trajectory_csv(path, result: SequenceResult) -> None:
    """Per-frame CSV: t, gt pose, estimate, and frame errors."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["t", "gt_x", "gt_y", "gt_theta",
                    "est_x", "est_y", "est_theta",
                    "lat_err", "lon_err", "theta_err"])
        for t, (g, e) in enumerate(zip(result.gt, result.est)):
            fe = frame_errors(g, e)
            w.writerow([t,
                        f"{g.x:.6f}", f"{g.y:.6f}", f"{g.theta:.6f}",
                        f"{e.x:.6f}", f"{e.y:.6f}", f"{e.theta:.6f}",
                        f"{fe.lateral:.6f}", f"{fe.longitudinal:.6f}",
                        f"{fe.heading:.6f}"])


def write_report_csv(path, names, metrics_list) -> None:
    """One row of metrics per sequence (centimetres), then an ``ALL``
    row with the median of the per-sequence medians and the failure
    rates in percent."""
    ms = list(metrics_list)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["sequence", "median_lat_cm", "median_lon_cm",
                    "median_total_cm", "median_heading_deg", "mean_lat_cm",
                    "mean_lon_cm", "max_total_cm",
                    "failed_100m", "failed_500m", "failed_end"])
        for name, m in zip(names, ms):
            w.writerow([name,
                        f"{100 * m.median_lateral:.4f}",
                        f"{100 * m.median_longitudinal:.4f}",
                        f"{100 * m.median_total:.4f}",
                        f"{math.degrees(m.median_heading):.4f}",
                        f"{100 * m.mean_lateral:.4f}",
                        f"{100 * m.mean_longitudinal:.4f}",
                        f"{100 * m.max_total:.4f}",
                        int(m.failed_100m), int(m.failed_500m),
                        int(m.failed_end)])
        if ms:
            rate = [100.0 * sum(flag) / len(ms) for flag in (
                [m.failed_100m for m in ms], [m.failed_500m for m in ms],
                [m.failed_end for m in ms])]
            w.writerow(["ALL",
                        f"{100 * median_lower(m.median_lateral for m in ms):.4f}",
                        f"{100 * median_lower(m.median_longitudinal for m in ms):.4f}",
                        f"{100 * median_lower(m.median_total for m in ms):.4f}",
                        f"{math.degrees(median_lower(m.median_heading for m in ms)):.4f}",
                        f"{100 * median_lower(m.mean_lateral for m in ms):.4f}",
                        f"{100 * median_lower(m.mean_longitudinal for m in ms):.4f}",
                        f"{100 * max(m.max_total for m in ms):.4f}",
                        f"{rate[0]:.1f}", f"{rate[1]:.1f}", f"{rate[2]:.1f}"])


_TRAJECTORY_COLUMNS = ["t", "gt_x", "gt_y", "gt_theta",
                       "est_x", "est_y", "est_theta",
                       "lat_err", "lon_err", "theta_err"]


def read_trajectory_csv(path) -> SequenceResult:
    """Parse a trajectory CSV written by :func:`write_trajectory_csv`.

    Only the pose columns are consumed; errors are recomputed from the
    poses.  Raises ``ValueError`` on a malformed file.
    """
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if not rows or rows[0][:7] != _TRAJECTORY_COLUMNS[:7]:
        raise ValueError(f"{path}: not a trajectory CSV "
                         f"(expected header {_TRAJECTORY_COLUMNS[:7]}...)")
    gts, ests = [], []
    for i, row in enumerate(rows[1:], start=2):
        if len(row) < 7:
            raise ValueError(f"{path}:{i}: expected >=7 columns, got {len(row)}")
        try:
            vals = [float(v) for v in row[1:7]]
        except ValueError as e:
            raise ValueError(f"{path}:{i}: {e}") from None
        gts.append(Pose2D(*vals[:3]))
        ests.append(Pose2D(*vals[3:]))
    if not gts:
        raise ValueError(f"{path}: no trajectory rows")
    return SequenceResult(gt=gts, est=ests, elapsed_s=0.0)


def error_vs_distance(result: SequenceResult, bin_m: float = 10.0):
    """Median total error per driven-distance bin; returns (bin_centers, medians)."""
    errs = np.array([e.total for e in result.errors()])
    dist = gt_cumulative_distance(result.gt)
    if dist[-1] <= 0.0:
        return np.array([0.0]), np.array([median_lower(errs)])
    edges = np.arange(0.0, dist[-1] + bin_m, bin_m)
    centers, meds = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        sel = errs[(dist >= lo) & (dist < hi)]
        if sel.size:
            centers.append((lo + hi) / 2.0)
            meds.append(median_lower(sel))
    return np.array(centers), np.array(meds)


def cumulative_error_curve(result: SequenceResult):
    """Empirical CDF of per-frame total error: (sorted errors, fraction <=)."""
    errs = np.sort([e.total for e in result.errors()])
    frac = np.arange(1, errs.size + 1) / errs.size
    return errs, frac


def write_curve_csv(path, xs, values, x_name="distance_m",
                    value_name="median_total_m") -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow([x_name, value_name])
        for c, v in zip(xs, values):
            w.writerow([f"{c:.4f}", f"{v:.6f}"])
