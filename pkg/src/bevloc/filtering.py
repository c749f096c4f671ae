"""Recursive Bayesian histogram filter over the pose search window.

The belief is a discrete distribution over the same (theta, y, x) grid
the matcher scores.  Each step the window is re-centered at the
dead-reckoned pose, the prior is propagated through a Gaussian (or
truncated-quadratic) motion kernel, and the LiDAR score volume and GPS
position are fused in log space before reading out a soft-argmax
estimate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import embed
from .grid import BevGrid, GridGeometry, crop_window, rasterize
from .matching import ScoreVolume, SearchWindow, score_volume_fft
from .pose import Pose2D, compose, wrap_angle


class FilterError(RuntimeError):
    """Raised when the belief degenerates (all-zero posterior or empty predict)."""


@dataclass(frozen=True)
class GpsObservation:
    """Absolute position fix in world coordinates (meters)."""

    x: float
    y: float


@dataclass(frozen=True)
class BeliefGrid:
    """Probability mass over a search window; ``probs`` is (n_theta, ny, nx) float64."""

    probs: np.ndarray
    window: SearchWindow

    def __post_init__(self):
        if self.probs.shape != self.window.shape:
            raise ValueError("BeliefGrid: probs shape does not match window")
        if self.probs.dtype != np.float64:
            raise ValueError("BeliefGrid: probs must be float64")
        if np.any(self.probs < 0.0):
            raise ValueError("BeliefGrid: negative probability mass")
        total = float(self.probs.sum())
        if not math.isfinite(total) or abs(total - 1.0) > 1e-6:
            raise ValueError(f"BeliefGrid: mass must sum to 1 (got {total})")


@dataclass(frozen=True)
class MotionModel:
    """Gaussian motion-error model in window-cell units.

    ``sigma`` is the 3x3 covariance of the pose discrepancy ``z``
    between a propagated prior cell and a new-window cell, measured in
    cells for x/y and in theta steps for heading.  ``mode`` selects the
    plain Gaussian weight ``exp(-z^T sigma^-1 z)`` or its truncation to
    the window extent (transitions beyond half the window size in any
    axis get zero weight).
    """

    sigma: np.ndarray = field(
        default_factory=lambda: np.diag([3.0, 3.0, 3.0]).astype(np.float64))
    mode: str = "gaussian"

    def __post_init__(self):
        s = np.asarray(self.sigma, dtype=np.float64)
        if s.shape != (3, 3):
            raise ValueError("MotionModel: sigma must be 3x3")
        if not np.allclose(s, s.T, atol=1e-12):
            raise ValueError("MotionModel: sigma must be symmetric")
        try:
            inv = np.linalg.inv(s)
        except np.linalg.LinAlgError as e:
            raise ValueError("MotionModel: sigma not invertible") from e
        if self.mode not in ("gaussian", "truncated_quadratic"):
            raise ValueError(f"MotionModel: unknown mode {self.mode!r}")
        object.__setattr__(self, "sigma", s)
        object.__setattr__(self, "_inv", inv)

    @property
    def inv_sigma(self) -> np.ndarray:
        return self._inv

    @property
    def is_diagonal(self) -> bool:
        return bool(np.count_nonzero(self.sigma - np.diag(np.diag(self.sigma))) == 0)


def uniform_belief(window: SearchWindow) -> BeliefGrid:
    n = np.prod(window.shape)
    return BeliefGrid(probs=np.full(window.shape, 1.0 / n, dtype=np.float64),
                      window=window)


def init_belief(window: SearchWindow, sigma_cells=(3.0, 3.0, 3.0)) -> BeliefGrid:
    """Gaussian prior centered mid-window; ``sigma_cells`` in (x, y, theta) cell units."""
    sx, sy, st = (float(v) for v in sigma_cells)
    dx = np.arange(window.x_cells) - (window.x_cells - 1) / 2.0
    dy = np.arange(window.y_cells) - (window.y_cells - 1) / 2.0
    dt = np.arange(window.n_theta) - (window.n_theta - 1) / 2.0
    q = (dt[:, None, None] ** 2 / st ** 2
         + dy[None, :, None] ** 2 / sy ** 2
         + dx[None, None, :] ** 2 / sx ** 2)
    p = np.exp(-q)
    return BeliefGrid(probs=p / p.sum(), window=window)


# ---------------------------------------------------------------------------
# Motion prediction
# ---------------------------------------------------------------------------

def _window_cell_poses(window: SearchWindow):
    """World positions (n_cells, 2) of the translational lattice (theta-
    independent) and world headings (n_theta,) of the angular candidates."""
    c = window.center
    ox = window.x_offsets()
    oy = window.y_offsets()
    gx = ox[None, :] * math.cos(c.theta) - oy[:, None] * math.sin(c.theta) + c.x
    gy = ox[None, :] * math.sin(c.theta) + oy[:, None] * math.cos(c.theta) + c.y
    pos = np.stack([gx.ravel(), gy.ravel()], axis=1)
    headings = c.theta + window.theta_candidates()
    return pos, headings


def _truncation_radii(window: SearchWindow):
    # Half the window extent, in cell units per axis.
    return window.x_cells / 2.0, window.y_cells / 2.0, window.n_theta / 2.0


def predict(belief: BeliefGrid, odo: Pose2D, model: MotionModel,
            new_window: SearchWindow) -> BeliefGrid:
    """Propagate the belief through odometry into a re-centered window.

    Every prior cell pose is advanced by ``odo`` and its mass is spread
    over the new window with weights ``exp(-z^T sigma^-1 z)``, where
    ``z`` is the discrepancy between the destination cell and the
    propagated pose, expressed in the propagated pose's frame and
    measured in window-cell units.  Weights are normalized per source
    cell (each cell forwards exactly its own mass), then the belief is
    renormalized; prior cells whose every destination has zero weight
    drop their mass.
    """
    pw = belief.window
    nw = new_window
    res = nw.resolution
    tstep = nw.theta_step if nw.n_theta > 1 else 1.0

    pos_a, head_a = _window_cell_poses(nw)
    pos_q, head_q = _window_cell_poses(pw)

    prior = belief.probs.reshape(pw.n_theta, -1)

    # Propagated prior poses: position picks up a heading-dependent term.
    cos_b = np.cos(head_q)
    sin_b = np.sin(head_q)
    shift = np.stack([odo.x * cos_b - odo.y * sin_b,
                      odo.x * sin_b + odo.y * cos_b], axis=1)  # (n_theta_b, 2)
    head_b = head_q + odo.theta

    dtheta = wrap_angle(head_a[:, None] - head_b[None, :]) / tstep  # (nta, ntb)

    if model.is_diagonal:
        return _predict_factorized(prior, pos_a, pos_q, shift, head_b, dtheta,
                                   res, model, nw)
    return _predict_general(prior, pos_a, pos_q, shift, head_b, dtheta,
                            res, model, nw)


def _predict_factorized(prior, pos_a, pos_q, shift, head_b, dtheta,
                        res, model: MotionModel, nw: SearchWindow) -> BeliefGrid:
    """Diagonal-covariance fast path: the transition weight factors into a
    heading table times a per-source-heading positional kernel."""
    inv = np.diag(model.inv_sigma)
    rx, ry, rt = _truncation_radii(nw)
    truncate = model.mode == "truncated_quadratic"

    t_table = np.exp(-inv[2] * dtheta ** 2)  # (n_theta_a, n_theta_b)
    if truncate:
        t_table = t_table * (np.abs(dtheta) <= rt)

    n_tb = shift.shape[0]
    s_mats = []
    for j in range(n_tb):
        pb = pos_q + shift[j]  # (nb2, 2)
        d = pos_a[:, None, :] - pb[None, :, :]  # (na2, nb2, 2)
        cb, sb = math.cos(head_b[j]), math.sin(head_b[j])
        zx = (d[..., 0] * cb + d[..., 1] * sb) / res
        zy = (-d[..., 0] * sb + d[..., 1] * cb) / res
        s = np.exp(-(inv[0] * zx ** 2 + inv[1] * zy ** 2))
        if truncate:
            s *= (np.abs(zx) <= rx) & (np.abs(zy) <= ry)
        s_mats.append(s)

    # Per-source normalization: column sums factor the same way.
    t_colsum = t_table.sum(axis=0)  # (n_theta_b,)
    forwarded = np.zeros((n_tb, pos_a.shape[0]))
    for j in range(n_tb):
        colsum = t_colsum[j] * s_mats[j].sum(axis=0)  # (nb2,)
        wb = np.divide(prior[j], colsum, out=np.zeros_like(prior[j]),
                       where=colsum > 0.0)
        forwarded[j] = s_mats[j] @ wb
    new_flat = t_table @ forwarded  # (n_theta_a, na2)
    return _finish_predict(new_flat, nw)


def _predict_general(prior, pos_a, pos_q, shift, head_b, dtheta,
                     res, model: MotionModel, nw: SearchWindow) -> BeliefGrid:
    """Full-covariance path: evaluates every (destination, source) pair.
    Slower, but exact for cross-correlated motion noise; also serves as
    the reference implementation for the factorized path."""
    lam = model.inv_sigma
    rx, ry, rt = _truncation_radii(nw)
    truncate = model.mode == "truncated_quadratic"
    n_ta = dtheta.shape[0]
    n_tb = shift.shape[0]
    na2 = pos_a.shape[0]
    nb2 = pos_q.shape[0]

    weights = np.zeros((n_ta, na2, n_tb, nb2))
    for j in range(n_tb):
        pb = pos_q + shift[j]
        d = pos_a[:, None, :] - pb[None, :, :]
        cb, sb = math.cos(head_b[j]), math.sin(head_b[j])
        zx = (d[..., 0] * cb + d[..., 1] * sb) / res
        zy = (-d[..., 0] * sb + d[..., 1] * cb) / res
        for ia in range(n_ta):
            zt = dtheta[ia, j]
            q = (lam[0, 0] * zx ** 2 + lam[1, 1] * zy ** 2 + lam[2, 2] * zt ** 2
                 + 2.0 * lam[0, 1] * zx * zy
                 + 2.0 * (lam[0, 2] * zx + lam[1, 2] * zy) * zt)
            w = np.exp(-q)
            if truncate:
                w *= ((np.abs(zx) <= rx) & (np.abs(zy) <= ry)
                      & (np.abs(zt) <= rt))
            weights[ia, :, j, :] = w

    colsum = weights.sum(axis=(0, 1))  # (n_theta_b, nb2)
    wb = np.divide(prior, colsum, out=np.zeros_like(prior), where=colsum > 0.0)
    new_flat = np.einsum("ajbs,bs->aj", weights, wb)
    return _finish_predict(new_flat, nw)


def _finish_predict(new_flat: np.ndarray, nw: SearchWindow) -> BeliefGrid:
    total = float(new_flat.sum())
    if not (total > 0.0) or not math.isfinite(total):
        raise FilterError(
            "predict: all probability mass left the search window "
            f"(forwarded mass {total}); odometry jump larger than the window?")
    probs = (new_flat / total).reshape(nw.shape)
    return BeliefGrid(probs=probs, window=nw)


# ---------------------------------------------------------------------------
# Measurement fusion
# ---------------------------------------------------------------------------

def gps_log_likelihood(window: SearchWindow, gps: GpsObservation,
                       sigma: float) -> np.ndarray:
    """Unnormalized GPS log-likelihood ``-((gx-x)^2 + (gy-y)^2) / sigma^2``
    over the window's translational lattice; shape (ny, nx) float64,
    constant across heading."""
    if not (sigma > 0.0):
        raise ValueError("gps_log_likelihood: sigma must be positive")
    pos, _ = _window_cell_poses(window)
    d2 = (gps.x - pos[:, 0]) ** 2 + (gps.y - pos[:, 1]) ** 2
    return (-d2 / sigma ** 2).reshape(window.y_cells, window.x_cells)


def update(prediction: BeliefGrid, lidar: ScoreVolume,
           gps_ll: np.ndarray | None = None,
           lidar_mode: str = "softmax") -> BeliefGrid:
    """Posterior from prior, LiDAR score volume, and optional GPS term.

    ``lidar_mode="softmax"`` treats the scores as unnormalized
    log-likelihoods (their softmax is the measurement distribution);
    ``"raw"`` treats the nonnegative scores themselves as proportional
    to likelihood, which suits unlearned intensity correlation whose
    score differences are far below softmax resolution.  Raises
    :class:`FilterError` if the posterior has no support.
    """
    if lidar.scores.shape != prediction.probs.shape:
        raise ValueError("update: score volume and belief shapes differ")
    with np.errstate(divide="ignore"):
        log_post = np.log(prediction.probs)
        if lidar_mode == "softmax":
            log_post = log_post + lidar.scores.astype(np.float64)
        elif lidar_mode == "raw":
            log_post = log_post + np.log(
                np.maximum(lidar.scores.astype(np.float64), 0.0))
        else:
            raise ValueError(f"update: unknown lidar_mode {lidar_mode!r}")
        if gps_ll is not None:
            if gps_ll.shape != prediction.probs.shape[1:]:
                raise ValueError("update: gps term shape mismatch")
            log_post = log_post + gps_ll[None, :, :]
    m = log_post.max()
    if not math.isfinite(m):
        raise FilterError(
            "update: posterior support is empty "
            f"(max lidar score {float(lidar.scores.max()):.3g}, "
            f"prior mass on support {float(prediction.probs[np.isfinite(log_post)].sum()):.3g})")
    p = np.exp(log_post - m)
    total = float(p.sum())
    probs = p / total
    return BeliefGrid(probs=probs, window=prediction.window)


# ---------------------------------------------------------------------------
# Estimate readout
# ---------------------------------------------------------------------------

def soft_argmax(belief: BeliefGrid, alpha: float = 2.0) -> Pose2D:
    """Power-sharpened expectation over the window.

    ``x* = sum(bel^alpha * x) / sum(bel^alpha)`` per axis, composed onto
    the window center.  Heading offsets span a few degrees at most, so a
    plain weighted mean of the offsets is used (no circular treatment
    needed inside a window).  Requires ``alpha >= 1``.
    """
    if alpha < 1.0:
        raise ValueError("soft_argmax: alpha must be >= 1")
    w = belief.probs ** alpha
    total = float(w.sum())
    if not (total > 0.0) or not math.isfinite(total):
        raise FilterError("soft_argmax: degenerate belief (no mass after sharpening)")
    w = w / total
    window = belief.window
    mx = float(np.sum(w.sum(axis=(0, 1)) * window.x_offsets()))
    my = float(np.sum(w.sum(axis=(0, 2)) * window.y_offsets()))
    mt = float(np.sum(w.sum(axis=(1, 2)) * window.theta_candidates()))
    return compose(window.center, Pose2D(mx, my, mt))


def hard_argmax(values: np.ndarray, window: SearchWindow) -> Pose2D:
    """Pose of the maximum cell.  Exact ties resolve to the candidate
    nearest the window center, ordered by (|theta|, |y|, |x|) offset
    magnitude and then by flat index, so the result is deterministic."""
    if values.shape != window.shape:
        raise ValueError("hard_argmax: values shape does not match window")
    vmax = values.max()
    cand = np.argwhere(values == vmax)
    half = np.array([(window.n_theta - 1) / 2.0,
                     (window.y_cells - 1) / 2.0,
                     (window.x_cells - 1) / 2.0])
    off = np.abs(cand - half)
    order = np.lexsort((
        np.ravel_multi_index(cand.T, values.shape),
        off[:, 2], off[:, 1], off[:, 0]))
    it, iy, ix = cand[order[0]]
    return window.pose_of(int(it), int(iy), int(ix))


# ---------------------------------------------------------------------------
# Full localization step
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LocalizerConfig:
    """Everything the per-step pipeline needs besides the map and stream.

    ``window`` is a template; its center is replaced by the dead-reckoned
    pose every step.  ``params_online`` / ``params_map`` of ``None``
    select the identity (raw intensity) embedding.
    """

    geometry: GridGeometry
    window: SearchWindow = field(default_factory=SearchWindow)
    motion: MotionModel = field(default_factory=MotionModel)
    params_online: embed.FcnParams | None = None
    params_map: embed.FcnParams | None = None
    alpha: float = 2.0
    gps_sigma: float = 10.0
    use_motion: bool = True
    use_gps: bool = True
    lidar_mode: str = "softmax"
    argmax: str = "soft"
    normalization: str = "global"
    init_sigma: tuple = (3.0, 3.0, 3.0)

    def __post_init__(self):
        if self.argmax not in ("soft", "hard"):
            raise ValueError(f"LocalizerConfig: unknown argmax {self.argmax!r}")
        if abs(self.window.resolution - self.geometry.resolution) > 1e-12:
            raise ValueError("LocalizerConfig: window and grid resolution differ")


@dataclass(frozen=True)
class LocalizerState:
    belief: BeliefGrid
    estimate: Pose2D


def make_initial_state(config: LocalizerConfig, pose: Pose2D) -> LocalizerState:
    window = config.window.recentered(pose)
    return LocalizerState(belief=init_belief(window, config.init_sigma),
                          estimate=pose)


def map_window_shape(config: LocalizerConfig) -> tuple[int, int]:
    """Map crop size: online footprint grown by the search offsets."""
    return (config.geometry.rows + config.window.y_cells - 1,
            config.geometry.cols + config.window.x_cells - 1)


def step(state: LocalizerState, sweeps, map_grid: BevGrid,
         gps: GpsObservation | None, odo: Pose2D,
         config: LocalizerConfig) -> tuple[LocalizerState, Pose2D]:
    """One filter iteration; returns the new state and the pose estimate.

    The search window is re-centered at the dead-reckoned pose
    ``estimate . odo`` before matching, so the filter tracks through the
    map rather than around a fixed anchor.
    """
    dead_reckoned = compose(state.estimate, odo)
    window = config.window.recentered(dead_reckoned)

    online = rasterize(sweeps, config.geometry)
    rows, cols = map_window_shape(config)
    map_win = crop_window(map_grid, dead_reckoned, rows, cols)

    emb_online = embed.forward(config.params_online, online.data)
    emb_map = embed.forward(config.params_map, map_win.data)
    volume = score_volume_fft(emb_online, online.mask, emb_map, map_win.mask,
                              window, config.normalization)

    if config.use_motion:
        prior = predict(state.belief, odo, config.motion, window)
    else:
        prior = uniform_belief(window)

    gps_term = None
    if config.use_gps and gps is not None:
        gps_term = gps_log_likelihood(window, gps, config.gps_sigma)

    posterior = update(prior, volume, gps_term, config.lidar_mode)
    if config.argmax == "soft":
        estimate = soft_argmax(posterior, config.alpha)
    else:
        estimate = hard_argmax(posterior.probs, posterior.window)
    return LocalizerState(belief=posterior, estimate=estimate), estimate
