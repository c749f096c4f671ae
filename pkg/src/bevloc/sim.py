"""Synthetic world and drive generation for end-to-end verification.

A procedural intensity map (lane markings, surface texture, reflective
blobs and speckle) is sampled by a rotating-beam range sensor along a
smooth trajectory; odometry, GPS, per-beam calibration and dropout noise
are all drawn from independently seeded streams so that changing one
noise knob never perturbs the draws of another.
"""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter

from .filtering import GpsObservation
from .grid import BevGrid, Sweep
from .pose import Pose2D, compose, inverse, inverse_compose, transform_points


class SimulationError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# World
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WorldConfig:
    """Procedural map parameters (meters unless noted)."""

    size_x: float = 60.0
    size_y: float = 30.0
    resolution: float = 0.05
    lane_spacing: float = 3.5
    dash_length: float = 1.5
    dash_period: float = 3.0
    texture_amplitude: float = 0.35
    blob_count: int = 120
    speckle_density: float = 1e-3  # fraction of cells with a bright return
    seed: int = 0


def generate_map(config: WorldConfig) -> BevGrid:
    """Build a fully-observed world map with origin at cell (0, 0).

    The content mixes low-frequency asphalt texture, dashed lane lines
    along x at ``lane_spacing`` intervals in y, Gaussian reflective
    blobs, and sparse speckle, so that the intensity autocorrelation has
    a single sharp peak (the world is localizable in both axes).
    """
    rows = int(round(config.size_y / config.resolution))
    cols = int(round(config.size_x / config.resolution))
    if rows < 8 or cols < 8:
        raise SimulationError("generate_map: map too small for its resolution")
    rng = np.random.default_rng(config.seed)

    data = np.full((rows, cols), 0.12, dtype=np.float64)
    texture = gaussian_filter(rng.random((rows, cols)), sigma=2.0)
    texture = (texture - texture.mean()) / (texture.std() + 1e-12)
    data += 0.10 * config.texture_amplitude * texture

    # Dashed lane markings: lines of constant y, dashed along x.
    y_m = np.arange(rows) * config.resolution
    x_m = np.arange(cols) * config.resolution
    line_rows = (y_m % config.lane_spacing) < 2.5 * config.resolution
    dash_cols = (x_m % config.dash_period) < config.dash_length
    stripes = line_rows[:, None] & dash_cols[None, :]
    data[stripes] = 0.85

    # Reflective blobs.
    for _ in range(config.blob_count):
        cy = rng.uniform(0, rows - 1)
        cx = rng.uniform(0, cols - 1)
        amp = rng.uniform(0.25, 0.5)
        sig = rng.uniform(0.10, 0.30) / config.resolution
        rad = int(math.ceil(3 * sig))
        r0, r1 = max(0, int(cy) - rad), min(rows, int(cy) + rad + 1)
        c0, c1 = max(0, int(cx) - rad), min(cols, int(cx) + rad + 1)
        yy = np.arange(r0, r1)[:, None] - cy
        xx = np.arange(c0, c1)[None, :] - cx
        data[r0:r1, c0:c1] += amp * np.exp(-(yy ** 2 + xx ** 2) / (2 * sig ** 2))

    n_speckle = int(config.speckle_density * rows * cols)
    if n_speckle:
        idx = rng.integers(0, rows * cols, n_speckle)
        data.ravel()[idx] += rng.uniform(0.3, 0.7, n_speckle)

    return BevGrid(data=np.clip(data, 0.0, 1.0).astype(np.float32),
                   mask=np.ones((rows, cols), dtype=bool),
                   resolution=config.resolution,
                   origin=Pose2D(0.0, 0.0, 0.0))


# ---------------------------------------------------------------------------
# Trajectory
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrajectorySpec:
    """Deterministic lane-weave path marched along x from ``start``."""

    steps: int
    start: Pose2D
    step_length: float = 0.4
    lateral_amplitude: float = 1.0
    lateral_period: float = 40.0
    weave_amplitude: float = 0.0
    weave_period: float = 160.0

    def __post_init__(self):
        if self.steps <= 0:
            raise ValueError("TrajectorySpec: steps must be positive")
        if not (self.step_length > 0.0):
            raise ValueError("TrajectorySpec: step_length must be positive")


def gt_trajectory(spec: TrajectorySpec) -> list[Pose2D]:
    """Ground-truth poses, one per step, starting at ``spec.start``."""
    poses = []
    for t in range(spec.steps):
        s = t * spec.step_length
        y = 0.0
        dy = 0.0
        for amp, per in ((spec.lateral_amplitude, spec.lateral_period),
                         (spec.weave_amplitude, spec.weave_period)):
            if amp != 0.0 and per > 0.0:
                w = 2.0 * math.pi / per
                y += amp * math.sin(w * s)
                dy += amp * w * math.cos(w * s)
        local = Pose2D(s, y, math.atan2(dy, 1.0))
        poses.append(compose(spec.start, local))
    return poses


# ---------------------------------------------------------------------------
# Sensor and noise
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SensorConfig:
    beams: int = 360
    range_samples: int = 64
    min_range: float = 0.5
    max_range: float = 8.0
    k_sweeps: int = 5

    def __post_init__(self):
        if self.beams <= 0 or self.range_samples <= 0:
            raise ValueError("SensorConfig: beams and range_samples must be positive")
        if not (0.0 <= self.min_range < self.max_range):
            raise ValueError("SensorConfig: need 0 <= min_range < max_range")
        if self.k_sweeps <= 0:
            raise ValueError("SensorConfig: k_sweeps must be positive")


@dataclass(frozen=True)
class NoiseConfig:
    """All-zero defaults give a noiseless, perfectly calibrated drive."""

    odo_sigma: tuple = (0.0, 0.0, 0.0)  # per-step x (m), y (m), theta (rad)
    gain_range: tuple = (1.0, 1.0)      # per-beam multiplicative, log-uniform
    bias_range: tuple = (0.0, 0.0)      # per-beam additive, uniform
    dropout: float = 0.0                # per-point drop probability
    intensity_sigma: float = 0.0        # additive Gaussian on measured intensity
    gps_sigma: float = 10.0             # GPS position noise (m)
    gps_bias: tuple = (0.0, 0.0)

    def __post_init__(self):
        if not (0.0 <= self.dropout < 1.0):
            raise ValueError("NoiseConfig: dropout must be in [0, 1)")
        if self.gain_range[0] <= 0.0 or self.gain_range[1] < self.gain_range[0]:
            raise ValueError("NoiseConfig: gain_range must be positive and ordered")


@dataclass(frozen=True)
class DriveStep:
    """Everything the localizer consumes at one timestep, plus ground truth."""

    index: int
    gt: Pose2D
    sweeps: list
    odo: Pose2D
    gps: GpsObservation
    odo_noise: Pose2D | None = None


def _sample_map_bilinear(map_grid: BevGrid, xy: np.ndarray):
    """Map intensity at world points; returns (values, valid) where valid
    marks points whose interpolation support is inside the observed map."""
    rel = inverse(map_grid.origin)
    local = transform_points(rel, xy)
    cf = local[:, 0] / map_grid.resolution
    rf = local[:, 1] / map_grid.resolution
    r0 = np.floor(rf).astype(np.int64)
    c0 = np.floor(cf).astype(np.int64)
    valid = (r0 >= 0) & (r0 + 1 < map_grid.rows) & (c0 >= 0) & (c0 + 1 < map_grid.cols)
    r0c = np.clip(r0, 0, map_grid.rows - 2)
    c0c = np.clip(c0, 0, map_grid.cols - 2)
    fr = rf - r0c
    fc = cf - c0c
    d = map_grid.data
    m = map_grid.mask
    vals = ((d[r0c, c0c] * (1 - fr) * (1 - fc))
            + d[r0c, c0c + 1] * (1 - fr) * fc
            + d[r0c + 1, c0c] * fr * (1 - fc)
            + d[r0c + 1, c0c + 1] * fr * fc)
    observed = m[r0c, c0c] & m[r0c, c0c + 1] & m[r0c + 1, c0c] & m[r0c + 1, c0c + 1]
    return vals, valid & observed


def simulate_drive(map_grid: BevGrid, traj: TrajectorySpec,
                   sensor: SensorConfig = SensorConfig(),
                   noise: NoiseConfig = NoiseConfig(),
                   seed: int = 0) -> list[DriveStep]:
    """Roll a sensor along the trajectory and emit one record per step.

    Noise streams (per-beam calibration, intensity noise, dropout,
    odometry, GPS) are spawned independently from ``seed``, and per-step
    draws have fixed shapes, so e.g. changing ``gain_range`` cannot
    change which points drop out.  The recorded odometry satisfies
    ``gt[t] == gt[t-1] . inverse_compose(odo[t], odo_noise[t])`` exactly.
    """
    streams = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(5)]
    rng_calib, rng_meas, rng_drop, rng_odo, rng_gps = streams

    poses = gt_trajectory(traj)
    margin = map_grid.resolution
    ext_x = map_grid.cols * map_grid.resolution
    ext_y = map_grid.rows * map_grid.resolution
    rel0 = inverse(map_grid.origin)
    for p in poses:
        local = transform_points(rel0, np.array([[p.x, p.y]]))[0]
        if not (-margin <= local[0] <= ext_x + margin
                and -margin <= local[1] <= ext_y + margin):
            raise SimulationError(
                f"trajectory exits map bounds at ({p.x:.2f}, {p.y:.2f})")

    g0, g1 = noise.gain_range
    gains = np.exp(rng_calib.uniform(math.log(g0), math.log(g1), sensor.beams))
    biases = rng_calib.uniform(noise.bias_range[0], noise.bias_range[1], sensor.beams)

    phi = np.linspace(0.0, 2.0 * math.pi, sensor.beams, endpoint=False)
    radii = sensor.min_range + (np.arange(sensor.range_samples) + 0.5) * (
        (sensor.max_range - sensor.min_range) / sensor.range_samples)
    local_pts = np.stack([
        np.repeat(np.cos(phi), sensor.range_samples) * np.tile(radii, sensor.beams),
        np.repeat(np.sin(phi), sensor.range_samples) * np.tile(radii, sensor.beams),
    ], axis=1)
    beam_of_point = np.repeat(np.arange(sensor.beams), sensor.range_samples)
    n_pts = local_pts.shape[0]

    steps: list[DriveStep] = []
    # Ring buffer of past sweeps: (points, odometry chain to the newest frame).
    buffer: list[tuple[np.ndarray, Pose2D]] = []
    for t, gt in enumerate(poses):
        world = transform_points(gt, local_pts)
        raw, valid = _sample_map_bilinear(map_grid, world)
        meas_noise = rng_meas.normal(0.0, 1.0, n_pts) * noise.intensity_sigma
        drop = rng_drop.random(n_pts) < noise.dropout
        vals = np.clip(gains[beam_of_point] * raw + biases[beam_of_point]
                       + meas_noise, 0.0, 1.0)
        keep = valid & ~drop
        pts = np.column_stack([local_pts[keep], vals[keep]])

        if t == 0:
            odo = Pose2D()
            odo_noise = Pose2D()
        else:
            n = rng_odo.normal(0.0, 1.0, 3)
            odo_noise = Pose2D(n[0] * noise.odo_sigma[0],
                               n[1] * noise.odo_sigma[1],
                               n[2] * noise.odo_sigma[2])
            delta_true = inverse_compose(gt, poses[t - 1])
            odo = compose(odo_noise, delta_true)
            # Advance the odometry chain of buffered sweeps by this motion.
            buffer = [(p, compose(chain, odo)) for p, chain in buffer]

        buffer.append((pts, Pose2D()))
        if len(buffer) > sensor.k_sweeps:
            buffer.pop(0)
        sweeps = [Sweep(points=p, pose_delta=inverse(chain)) for p, chain in buffer]

        gn = rng_gps.normal(0.0, 1.0, 2)
        gps = GpsObservation(gt.x + noise.gps_bias[0] + gn[0] * noise.gps_sigma,
                             gt.y + noise.gps_bias[1] + gn[1] * noise.gps_sigma)
        steps.append(DriveStep(index=t, gt=gt, sweeps=sweeps, odo=odo,
                               gps=gps, odo_noise=odo_noise))
    return steps


# ---------------------------------------------------------------------------
# Drive persistence (DRV1): newline-delimited binary records
# ---------------------------------------------------------------------------

_MAGIC = b"DRV1"
_VERSION = 1


def save_drive(path, steps: list[DriveStep], k_sweeps: int,
               gps_sigma: float) -> None:
    """Write a drive as a DRV1 stream.

    Header: magic ``DRV1``, u32 version, u32 step count, u32 sweep window
    size, f64 GPS sigma, then a newline byte.  Each record: gt pose (3
    f64), gps (2 f64), odo (3 f64), u32 sweep count, then per sweep its
    pose delta (3 f64), u32 point count, and the points as float32
    (x, y, intensity) triplets; every record ends with a newline byte.
    """
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<IIId", _VERSION, len(steps), k_sweeps, gps_sigma))
        f.write(b"\n")
        for st in steps:
            f.write(struct.pack("<3d", st.gt.x, st.gt.y, st.gt.theta))
            f.write(struct.pack("<2d", st.gps.x, st.gps.y))
            f.write(struct.pack("<3d", st.odo.x, st.odo.y, st.odo.theta))
            f.write(struct.pack("<I", len(st.sweeps)))
            for sw in st.sweeps:
                f.write(struct.pack("<3d", sw.pose_delta.x, sw.pose_delta.y,
                                    sw.pose_delta.theta))
                f.write(struct.pack("<I", sw.points.shape[0]))
                f.write(np.ascontiguousarray(sw.points, dtype="<f4").tobytes())
            f.write(b"\n")


def load_drive(path) -> tuple[list[DriveStep], int, float]:
    """Read a DRV1 drive; returns ``(steps, k_sweeps, gps_sigma)``."""
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 25 or blob[:4] != _MAGIC:
        raise ValueError("load_drive: not a DRV1 file (bad magic)")
    version, n_steps, k_sweeps, gps_sigma = struct.unpack_from("<IIId", blob, 4)
    if version != _VERSION:
        raise ValueError(f"load_drive: unsupported version {version}")
    off = 4 + struct.calcsize("<IIId")
    if blob[off:off + 1] != b"\n":
        raise ValueError("load_drive: malformed header terminator")
    off += 1

    def take(fmt):
        nonlocal off
        size = struct.calcsize(fmt)
        if off + size > len(blob):
            raise ValueError("load_drive: truncated record")
        vals = struct.unpack_from(fmt, blob, off)
        off += size
        return vals

    steps = []
    for t in range(n_steps):
        gt = Pose2D(*take("<3d"))
        gps = GpsObservation(*take("<2d"))
        odo = Pose2D(*take("<3d"))
        (n_sweeps,) = take("<I")
        sweeps = []
        for _ in range(n_sweeps):
            delta = Pose2D(*take("<3d"))
            (n_points,) = take("<I")
            size = 12 * n_points
            if off + size > len(blob):
                raise ValueError("load_drive: truncated point block")
            pts = np.frombuffer(blob, dtype="<f4", count=3 * n_points,
                                offset=off).reshape(n_points, 3).copy()
            off += size
            sweeps.append(Sweep(points=pts.astype(np.float64), pose_delta=delta))
        if blob[off:off + 1] != b"\n":
            raise ValueError(f"load_drive: record {t} missing terminator")
        off += 1
        steps.append(DriveStep(index=t, gt=gt, sweeps=sweeps, odo=odo, gps=gps))
    if off != len(blob):
        raise ValueError("load_drive: trailing bytes after last record")
    return steps, int(k_sweeps), float(gps_sigma)


def export_drive_csv(path, steps: list[DriveStep]) -> None:
    """Human-readable per-step summary (poses, odometry, GPS, point counts)."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["t", "gt_x", "gt_y", "gt_theta", "odo_x", "odo_y",
                    "odo_theta", "gps_x", "gps_y", "n_sweeps", "n_points"])
        for st in steps:
            w.writerow([st.index,
                        f"{st.gt.x:.6f}", f"{st.gt.y:.6f}", f"{st.gt.theta:.6f}",
                        f"{st.odo.x:.6f}", f"{st.odo.y:.6f}", f"{st.odo.theta:.6f}",
                        f"{st.gps.x:.6f}", f"{st.gps.y:.6f}",
                        len(st.sweeps),
                        int(sum(sw.points.shape[0] for sw in st.sweeps))])
