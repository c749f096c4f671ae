"""End-to-end learning of the matching embeddings.

Training treats the score volume as unnormalized logits of a categorical
distribution over window cells and minimizes cross-entropy against the
ground-truth cell.  Gradients flow analytically through the softmax, the
normalized masked correlation, the rotation resampler transpose, and
both convolutional branches; the optimizer is plain Adam.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
import scipy.signal
from scipy.special import logsumexp

from . import embed
from .grid import BevGrid, GridGeometry, crop_window, rasterize
from .matching import (ScoreVolume, SearchWindow, _rotation_sampler,
                       rotate_embedding, score_from_stack_fft)
from .pose import Pose2D, compose, inverse


class TrainingDivergence(RuntimeError):
    """Loss became non-finite; carries the last finite parameter snapshot."""

    def __init__(self, message, params_online, params_map):
        super().__init__(message)
        self.params_online = params_online
        self.params_map = params_map


@dataclass(frozen=True)
class TrainSample:
    """One supervised matching problem.

    The map window is minimal for the search window (online footprint
    plus offsets), and ``gt_cell = (it, iy, ix)`` indexes the volume
    cell whose pose hypothesis equals the ground-truth pose.
    """

    online: BevGrid
    map_window: BevGrid
    gt_cell: tuple


@dataclass(frozen=True)
class TrainConfig:
    embed_dim: int = 1
    width: int = 16
    depth: int = 6
    epochs: int = 12
    batch_size: int = 8
    step_size: float = 1e-3
    decay: float = 1.0  # per-epoch multiplier on step_size
    seed: int = 0
    normalization: str = "global"

    def __post_init__(self):
        if self.epochs <= 0 or self.batch_size <= 0:
            raise ValueError("TrainConfig: epochs and batch_size must be positive")
        if not (self.step_size > 0.0):
            raise ValueError("TrainConfig: step_size must be positive")


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    mean_loss: float
    top1_acc: float


# ---------------------------------------------------------------------------
# Loss
# ---------------------------------------------------------------------------

def loss(volume, gt_cell) -> float:
    """Softmax cross-entropy of the volume against a one-hot cell:
    ``logsumexp(scores) - scores[gt]``."""
    scores = volume.scores if isinstance(volume, ScoreVolume) else volume
    s = np.asarray(scores, dtype=np.float64)
    return float(logsumexp(s) - s[tuple(gt_cell)])


def top1_correct(volume, gt_cell) -> bool:
    """Argmax within one cell of the truth in y and x (heading ignored:
    adjacent heading candidates land on the same translational cell)."""
    scores = volume.scores if isinstance(volume, ScoreVolume) else volume
    it, iy, ix = np.unravel_index(int(np.argmax(scores)), scores.shape)
    return abs(iy - gt_cell[1]) <= 1 and abs(ix - gt_cell[2]) <= 1


@dataclass
class LossResult:
    loss: float
    volume: ScoreVolume
    grads_online: embed.FcnParams | None
    grads_map: embed.FcnParams | None


def _softmax_grad(scores: np.ndarray, gt_cell) -> tuple[float, np.ndarray]:
    s = scores.astype(np.float64)
    lse = logsumexp(s)
    p = np.exp(s - lse)
    g = p.copy()
    g[tuple(gt_cell)] -= 1.0
    return float(lse - s[tuple(gt_cell)]), g


def loss_backward(sample: TrainSample, params_online, params_map,
                  window: SearchWindow,
                  normalization: str = "global") -> LossResult:
    """Loss plus analytic parameter gradients for one sample.

    Identity branches (``params=None``) request no gradients and come
    back as ``None``.  The map window must be minimal: online footprint
    plus (window - 1) cells per axis, so correlation offsets and window
    cells coincide.
    """
    online, map_win = sample.online, sample.map_window
    ho, wo = online.data.shape
    if map_win.data.shape != (ho + window.y_cells - 1, wo + window.x_cells - 1):
        raise ValueError("loss_backward: map window must be minimal for the "
                         f"search window (got {map_win.data.shape})")

    if params_online is not None:
        emb_o, caches_o = embed.forward_cached(params_online, online.data)
    else:
        emb_o = embed.forward(None, online.data)
        caches_o = None
    if params_map is not None:
        emb_m, caches_m = embed.forward_cached(params_map, map_win.data)
    else:
        emb_m = embed.forward(None, map_win.data)
        caches_m = None

    stack = rotate_embedding(emb_o, online.mask, window)
    volume = score_from_stack_fft(stack, emb_m, map_win.mask, window, normalization)
    loss_val, gscore = _softmax_grad(volume.scores, sample.gt_cell)

    if params_online is None and params_map is None:
        return LossResult(loss_val, volume, None, None)

    dtype = emb_m.dtype
    n_map = float(np.count_nonzero(map_win.mask))
    map_gated = emb_m * map_win.mask
    if normalization == "overlap":
        # Per-offset denominators: reuse the spatial definition via mask
        # correlation (cheap at window size).
        ov = np.empty(window.shape)
        for it in range(window.n_theta):
            ov[it] = scipy.signal.correlate(
                map_win.mask.astype(np.float64),
                stack.masks[it].astype(np.float64), mode="valid")
        ov = np.rint(ov)

    grad_map_gated = np.zeros_like(map_gated)
    grad_emb_o = np.zeros_like(emb_o)
    for it in range(window.n_theta):
        if normalization == "global":
            den = stack.counts[it] * n_map
            if den == 0.0:
                continue
            g_it = (gscore[it] / den).astype(dtype)
        else:
            d = np.maximum(ov[it], 1.0)
            g_it = np.where(ov[it] > 0.0, gscore[it] / d, 0.0).astype(dtype)
        a_it = stack.gated[it]
        grad_a = np.empty_like(a_it)
        for c in range(a_it.shape[0]):
            grad_map_gated[c] += scipy.signal.fftconvolve(
                a_it[c], g_it, mode="full").astype(dtype)
            grad_a[c] = scipy.signal.correlate(
                map_gated[c], g_it, mode="valid").astype(dtype)
        # Undo the gating and the rotation resampling.
        grad_a *= stack.masks[it]
        if stack.thetas[it] == 0.0:
            grad_emb_o += grad_a
        else:
            samp = _rotation_sampler(ho, wo, float(stack.thetas[it]))
            grad_emb_o += samp.apply_transpose(grad_a)

    grads_o = grads_m = None
    if params_map is not None:
        # The map branch is gated by its own mask before correlating.
        grad_emb_m = grad_map_gated * map_win.mask
        grads_m, _ = embed.backward(params_map, caches_m, grad_emb_m)
    if params_online is not None:
        # The online branch is gated per rotation (already undone above);
        # masked source cells still feed rotated samples, so no extra
        # gating by the unrotated mask here.
        grads_o, _ = embed.backward(params_online, caches_o, grad_emb_o)
    return LossResult(loss_val, volume, grads_o, grads_m)


# ---------------------------------------------------------------------------
# Sample construction
# ---------------------------------------------------------------------------

def build_samples(map_grid: BevGrid, steps, geometry: GridGeometry,
                  window: SearchWindow, seed: int = 0,
                  stride: int = 1) -> list[TrainSample]:
    """Turn drive steps into supervised samples.

    The window center is the ground-truth pose displaced by a random
    *integer* cell offset (uniform over the inner 80% of the window), so
    the true pose sits exactly on a lattice cell and the one-hot target
    is quantization-free.
    """
    rng = np.random.default_rng(seed)
    rows = geometry.rows + window.y_cells - 1
    cols = geometry.cols + window.x_cells - 1
    samples = []
    for st in steps[::stride]:
        online = rasterize(st.sweeps, geometry)
        max_dx = max(1, int(0.4 * (window.x_cells - 1)))
        max_dy = max(1, int(0.4 * (window.y_cells - 1)))
        max_dt = (window.n_theta - 1) // 2
        dx = int(rng.integers(-max_dx, max_dx + 1))
        dy = int(rng.integers(-max_dy, max_dy + 1))
        dt = int(rng.integers(-max_dt, max_dt + 1)) if max_dt else 0
        offset = Pose2D(dx * window.resolution, dy * window.resolution,
                        dt * window.theta_step)
        center = compose(st.gt, inverse(offset))
        map_win = crop_window(map_grid, center, rows, cols)
        gt_cell = (dt + (window.n_theta - 1) // 2,
                   dy + (window.y_cells - 1) // 2,
                   dx + (window.x_cells - 1) // 2)
        samples.append(TrainSample(online=online, map_window=map_win,
                                   gt_cell=gt_cell))
    return samples


def subsample(samples, fraction: float, seed: int = 0):
    """Deterministic uniform subset used for reduced-data experiments."""
    if not (0.0 < fraction <= 1.0):
        raise ValueError("subsample: fraction must be in (0, 1]")
    if fraction == 1.0:
        return list(samples)
    rng = np.random.default_rng(seed)
    n = max(1, int(round(fraction * len(samples))))
    idx = rng.choice(len(samples), size=n, replace=False)
    return [samples[i] for i in sorted(idx)]


# ---------------------------------------------------------------------------
# Optimizer and loop
# ---------------------------------------------------------------------------

class Adam:
    """Standard Adam; state keyed per parameter array."""

    def __init__(self, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self._m: dict[int, np.ndarray] = {}
        self._v: dict[int, np.ndarray] = {}

    def step(self, params_list, grads_list, lr: float):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        scale = lr * math.sqrt(1.0 - b2 ** self.t) / (1.0 - b1 ** self.t)
        key = 0
        for params, grads in zip(params_list, grads_list):
            if params is None:
                continue
            for lp, gl in zip(params.layers, grads.layers):
                for arr, g in zip(lp.arrays(), gl.arrays()):
                    m = self._m.setdefault(key, np.zeros_like(arr, dtype=np.float64))
                    v = self._v.setdefault(key, np.zeros_like(arr, dtype=np.float64))
                    g64 = g.astype(np.float64)
                    m *= b1
                    m += (1 - b1) * g64
                    v *= b2
                    v += (1 - b2) * g64 * g64
                    arr -= (scale * m / (np.sqrt(v) + self.eps)).astype(arr.dtype)
                    key += 1


def _accumulate(total, grads):
    if total is None:
        return grads
    for lt, lg in zip(total.layers, grads.layers):
        for at, ag in zip(lt.arrays(), lg.arrays()):
            at += ag
    return total


def _scale_grads(grads, factor):
    if grads is None:
        return
    for lp in grads.layers:
        for a in lp.arrays():
            a *= a.dtype.type(factor)


@dataclass
class TrainResult:
    params_online: embed.FcnParams
    params_map: embed.FcnParams
    history: list


def train(samples: list[TrainSample], window: SearchWindow,
          config: TrainConfig = TrainConfig()) -> TrainResult:
    """Minibatch Adam over the sample set; separate online/map branches.

    Tracks per-epoch mean loss and top-1 accuracy (computed from each
    sample's forward volume as it is visited).  Raises
    :class:`TrainingDivergence` with the last finite parameters if the
    loss goes non-finite.
    """
    if not samples:
        raise ValueError("train: empty sample set")
    arch = embed.default_arch(config.embed_dim, config.width, config.depth)
    params_o = embed.init_params(arch, seed=config.seed)
    params_m = embed.init_params(arch, seed=config.seed + 1)
    opt = Adam()
    rng = np.random.default_rng(config.seed + 2)
    history: list[EpochStats] = []

    for epoch in range(config.epochs):
        lr = config.step_size * (config.decay ** epoch)
        order = rng.permutation(len(samples))
        losses = []
        hits = 0
        for start in range(0, len(order), config.batch_size):
            batch = order[start:start + config.batch_size]
            acc_o = acc_m = None
            for si in batch:
                try:
                    res = loss_backward(samples[si], params_o, params_m,
                                        window, config.normalization)
                except FloatingPointError as e:
                    raise TrainingDivergence(
                        f"epoch {epoch}: {e}",
                        params_o.copy(), params_m.copy()) from None
                if not math.isfinite(res.loss):
                    raise TrainingDivergence(
                        f"loss became non-finite at epoch {epoch}",
                        params_o.copy(), params_m.copy())
                losses.append(res.loss)
                hits += top1_correct(res.volume, samples[si].gt_cell)
                acc_o = _accumulate(acc_o, res.grads_online)
                acc_m = _accumulate(acc_m, res.grads_map)
            _scale_grads(acc_o, 1.0 / len(batch))
            _scale_grads(acc_m, 1.0 / len(batch))
            opt.step([params_o, params_m], [acc_o, acc_m], lr)
        history.append(EpochStats(epoch=epoch,
                                  mean_loss=float(np.mean(losses)),
                                  top1_acc=hits / len(samples)))
    return TrainResult(params_online=params_o, params_map=params_m,
                       history=history)


def evaluate_top1(params_online, params_map, samples, window: SearchWindow,
                  normalization: str = "global") -> float:
    """Top-1 matching accuracy of fixed parameters on a sample set."""
    if not samples:
        raise ValueError("evaluate_top1: empty sample set")
    hits = 0
    for s in samples:
        emb_o = embed.forward(params_online, s.online.data)
        emb_m = embed.forward(params_map, s.map_window.data)
        vol = score_from_stack_fft(
            rotate_embedding(emb_o, s.online.mask, window),
            emb_m, s.map_window.mask, window, normalization)
        hits += top1_correct(vol, s.gt_cell)
    return hits / len(samples)


def write_metrics_csv(path, history) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["epoch", "mean_loss", "top1_acc"])
        for st in history:
            w.writerow([st.epoch, f"{st.mean_loss:.6f}", f"{st.top1_acc:.4f}"])
