"""Exhaustive pose-hypothesis scoring of an online BEV image against a map.

The online embedding is rotated to each candidate heading, and every
translational offset inside a search window is scored with a masked,
sparsity-normalized inner product.  Two implementations of the score
volume are provided: a direct spatial sweep (reference) and an
FFT-accelerated path using the convolution theorem; both produce the
same volume up to floating-point error.

Score indexing convention: ``scores[it, iy, ix]`` is the score of the
world pose hypothesis

    window.center . ((ix - (nx-1)/2) * res, (iy - (ny-1)/2) * res, theta_it)

with ``theta_it = (it - (n_theta-1)/2) * theta_step``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.fft

from .grid import BilinearSampler, GridGeometry, pose_sampler
from .pose import Pose2D, compose


@dataclass(frozen=True)
class SearchWindow:
    """Discrete pose search window centered at a world pose.

    Translational candidates live on the grid-cell lattice
    (``x_cells`` x ``y_cells`` at ``resolution``); heading candidates
    are ``n_theta`` angles spaced ``theta_step`` apart.  All counts must
    be odd so the window is symmetric about its center.
    """

    center: Pose2D = field(default_factory=Pose2D)
    x_cells: int = 21
    y_cells: int = 21
    n_theta: int = 5
    theta_step: float = math.radians(0.5)
    resolution: float = 0.05

    def __post_init__(self):
        for name in ("x_cells", "y_cells", "n_theta"):
            v = getattr(self, name)
            if v <= 0 or v % 2 == 0:
                raise ValueError(f"SearchWindow: {name} must be odd and positive, got {v}")
        if not (self.resolution > 0.0):
            raise ValueError("SearchWindow: resolution must be positive")
        if self.n_theta > 1 and not (self.theta_step > 0.0):
            raise ValueError("SearchWindow: theta_step must be positive")

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.n_theta, self.y_cells, self.x_cells)

    def theta_candidates(self) -> np.ndarray:
        """Heading offsets, symmetric about zero (zero always included)."""
        return (np.arange(self.n_theta) - (self.n_theta - 1) / 2.0) * self.theta_step

    def x_offsets(self) -> np.ndarray:
        return (np.arange(self.x_cells) - (self.x_cells - 1) / 2.0) * self.resolution

    def y_offsets(self) -> np.ndarray:
        return (np.arange(self.y_cells) - (self.y_cells - 1) / 2.0) * self.resolution

    def pose_of(self, it: int, iy: int, ix: int) -> Pose2D:
        """World pose hypothesis of cell ``(it, iy, ix)``."""
        return compose(self.center, Pose2D(self.x_offsets()[ix],
                                           self.y_offsets()[iy],
                                           self.theta_candidates()[it]))

    def recentered(self, center: Pose2D) -> "SearchWindow":
        return replace(self, center=center)


@dataclass(frozen=True)
class ScoreVolume:
    """Scores over a :class:`SearchWindow`: shape (n_theta, ny, nx).

    Dtype follows the input embeddings — float32 in the standard
    pipeline, float64 on the high-precision verification path.
    """

    scores: np.ndarray
    window: SearchWindow

    def __post_init__(self):
        if self.scores.shape != self.window.shape:
            raise ValueError(f"ScoreVolume: scores shape {self.scores.shape} "
                             f"does not match window {self.window.shape}")


def _as_stack(a: np.ndarray) -> np.ndarray:
    if a.ndim == 2:
        return a[None]
    if a.ndim == 3:
        return a
    raise ValueError(f"expected (H, W) or (C, H, W) array, got shape {a.shape}")


def masked_score(a: np.ndarray, a_mask: np.ndarray,
                 b: np.ndarray, b_mask: np.ndarray,
                 normalization: str = "global") -> float:
    """Sparsity-normalized masked correlation of two same-shape embeddings.

    With ``normalization="global"`` the score is
    ``<a * [a_mask], b * [b_mask]> / (||a_mask||_0 * ||b_mask||_0)``
    (inner product over all channels and cells; denominators count
    observed *cells*).  With ``"overlap"`` the inner product is divided
    by the number of cells observed in both grids instead.  Either mask
    empty (or empty overlap) yields 0.0.
    """
    a = _as_stack(a)
    b = _as_stack(b)
    if a.shape != b.shape or a_mask.shape != a.shape[1:] or b_mask.shape != b.shape[1:]:
        raise ValueError("masked_score: shape mismatch")
    num = float(np.einsum("chw,chw->", a * a_mask, b * b_mask, dtype=np.float64))
    if normalization == "global":
        den = float(np.count_nonzero(a_mask)) * float(np.count_nonzero(b_mask))
    elif normalization == "overlap":
        den = float(np.count_nonzero(a_mask & b_mask))
    else:
        raise ValueError(f"masked_score: unknown normalization {normalization!r}")
    if den == 0.0:
        return 0.0
    return num / den


# ---------------------------------------------------------------------------
# Rotation candidates
# ---------------------------------------------------------------------------

_ROTATION_SAMPLERS: dict[tuple[int, int, float], BilinearSampler] = {}


def _rotation_sampler(rows: int, cols: int, theta: float) -> BilinearSampler:
    """Sampler that rotates grid content *forward* by ``theta`` about the
    grid center (same semantics as ``grid.warp`` with a pure rotation).
    Cached: the sampler depends only on shape and angle."""
    key = (rows, cols, round(float(theta), 12))
    samp = _ROTATION_SAMPLERS.get(key)
    if samp is None:
        geom = GridGeometry(rows, cols, 1.0)
        samp = pose_sampler(geom, geom, Pose2D(0.0, 0.0, -theta))
        _ROTATION_SAMPLERS[key] = samp
    return samp


@dataclass(frozen=True)
class RotatedStack:
    """Online embedding pre-rotated to every candidate heading.

    ``gated[i]`` is the embedding at heading ``thetas[i]`` with
    masked-out cells zeroed; ``counts[i]`` is the observed-cell count of
    the rotated mask; ``masks[i]`` the rotated boolean masks.
    """

    gated: list
    masks: list
    counts: np.ndarray
    thetas: np.ndarray


def rotate_embedding(emb: np.ndarray, mask: np.ndarray,
                     window: SearchWindow) -> RotatedStack:
    """Build rotated, mask-gated copies of the online embedding for each
    candidate heading of ``window``.  Masks are resampled alongside the
    data and re-binarized at 0.5 coverage; newly exposed cells read zero."""
    emb = _as_stack(emb)
    if mask.shape != emb.shape[1:]:
        raise ValueError("rotate_embedding: mask shape mismatch")
    thetas = window.theta_candidates()
    gated, masks, counts = [], [], []
    mask_f = mask.astype(emb.dtype)
    for th in thetas:
        if th == 0.0:
            m = mask.copy()
            g = emb * mask_f
        else:
            samp = _rotation_sampler(emb.shape[1], emb.shape[2], float(th))
            m = samp.apply(mask_f) >= 0.5
            g = samp.apply(emb) * m
        gated.append(np.ascontiguousarray(g))
        masks.append(m)
        counts.append(np.count_nonzero(m))
    return RotatedStack(gated=gated, masks=masks,
                        counts=np.asarray(counts, dtype=np.float64),
                        thetas=thetas)


def _check_extents(online_shape, map_shape, window: SearchWindow):
    ho, wo = online_shape
    rm, cm = map_shape
    dy, dx = rm - ho, cm - wo
    if dy < window.y_cells - 1 or dx < window.x_cells - 1:
        raise ValueError(
            f"insufficient map window extent: map {map_shape} vs online "
            f"{online_shape} leaves {dy + 1}x{dx + 1} offsets, window needs "
            f"{window.y_cells}x{window.x_cells}")
    if dy % 2 or dx % 2:
        raise ValueError(
            "map window / online size difference must be even in both axes "
            f"so the window can be centered (got {dy}, {dx})")
    return dy, dx


def _window_slice(dy: int, dx: int, window: SearchWindow):
    y0 = dy // 2 - (window.y_cells - 1) // 2
    x0 = dx // 2 - (window.x_cells - 1) // 2
    return y0, x0


# ---------------------------------------------------------------------------
# Score volumes
# ---------------------------------------------------------------------------

def score_from_stack_spatial(stack: RotatedStack, map_emb: np.ndarray,
                             map_mask: np.ndarray, window: SearchWindow,
                             normalization: str = "global") -> ScoreVolume:
    """Direct sliding-offset evaluation of the score volume (reference path).

    Accumulates in float64.  Quadratic in window area; used as the
    ground-truth implementation and as the baseline for benchmarking.
    """
    map_emb = _as_stack(map_emb)
    a0 = stack.gated[0]
    dy, dx = _check_extents(a0.shape[1:], map_emb.shape[1:], window)
    y0, x0 = _window_slice(dy, dx, window)
    ho, wo = a0.shape[1:]

    out_dtype = np.result_type(a0, map_emb)
    gated_map = (map_emb * map_mask).astype(np.float64)
    n_map = float(np.count_nonzero(map_mask))
    scores = np.zeros(window.shape, dtype=np.float64)
    for it in range(window.n_theta):
        a = stack.gated[it].astype(np.float64)
        m = stack.masks[it]
        for iy in range(window.y_cells):
            for ix in range(window.x_cells):
                r, c = y0 + iy, x0 + ix
                sub = gated_map[:, r:r + ho, c:c + wo]
                num = np.einsum("chw,chw->", a, sub)
                if normalization == "global":
                    den = stack.counts[it] * n_map
                elif normalization == "overlap":
                    den = float(np.count_nonzero(
                        m & map_mask[r:r + ho, c:c + wo]))
                else:
                    raise ValueError(f"unknown normalization {normalization!r}")
                scores[it, iy, ix] = num / den if den > 0.0 else 0.0
    return ScoreVolume(scores=scores.astype(out_dtype), window=window)


def score_from_stack_fft(stack: RotatedStack, map_emb: np.ndarray,
                         map_mask: np.ndarray, window: SearchWindow,
                         normalization: str = "global") -> ScoreVolume:
    """FFT evaluation of the score volume via the convolution theorem.

    One forward transform of the gated map is shared across rotations;
    each rotation costs one forward and one inverse transform.  The
    cross-correlation ``sum_u a[u] * m[v+u]`` appears in the inverse
    transform of ``conj(F[a]) * F[m]`` at the valid offsets, which are
    then cropped to the centered search window.
    """
    map_emb = _as_stack(map_emb)
    a0 = stack.gated[0]
    dy, dx = _check_extents(a0.shape[1:], map_emb.shape[1:], window)
    y0, x0 = _window_slice(dy, dx, window)
    ho, wo = a0.shape[1:]
    rm, cm = map_emb.shape[1:]

    # Only offsets 0..dy / 0..dx are consumed, and for those the kernel
    # lies fully inside the map, so circular correlation at any transform
    # size >= the map size is wrap-free.  Padding to map + kernel - 1 (the
    # full linear-correlation size) would roughly quadruple the work.
    fshape = (scipy.fft.next_fast_len(rm),
              scipy.fft.next_fast_len(cm))
    gated_map = map_emb * map_mask
    fmap = scipy.fft.rfft2(gated_map, s=fshape, axes=(-2, -1))
    n_map = float(np.count_nonzero(map_mask))
    if normalization == "overlap":
        # Count correlations in float64 so rounding to integer is exact.
        fmask_map = scipy.fft.rfft2(map_mask.astype(np.float64), s=fshape)
    elif normalization != "global":
        raise ValueError(f"unknown normalization {normalization!r}")

    ys = slice(y0, y0 + window.y_cells)
    xs = slice(x0, x0 + window.x_cells)
    scores = np.empty(window.shape, dtype=np.result_type(a0, map_emb))
    for it in range(window.n_theta):
        fa = scipy.fft.rfft2(stack.gated[it], s=fshape, axes=(-2, -1))
        prod = np.sum(np.conj(fa) * fmap, axis=0)
        corr = scipy.fft.irfft2(prod, s=fshape)[:dy + 1, :dx + 1]
        num = corr[ys, xs].astype(np.float64)
        if normalization == "global":
            den = stack.counts[it] * n_map
            win = num / den if den > 0.0 else np.zeros_like(num)
        else:
            fm = scipy.fft.rfft2(stack.masks[it].astype(np.float64), s=fshape)
            ov = scipy.fft.irfft2(np.conj(fm) * fmask_map, s=fshape)[:dy + 1, :dx + 1]
            ov = np.rint(ov[ys, xs]).astype(np.float64)
            win = np.where(ov > 0.0, num / np.maximum(ov, 1.0), 0.0)
        scores[it] = win.astype(scores.dtype)
    return ScoreVolume(scores=scores, window=window)


def score_volume_spatial(online_emb, online_mask, map_emb, map_mask,
                         window: SearchWindow,
                         normalization: str = "global") -> ScoreVolume:
    """Rotate + spatially correlate; see :func:`score_from_stack_spatial`."""
    stack = rotate_embedding(online_emb, online_mask, window)
    return score_from_stack_spatial(stack, map_emb, map_mask, window, normalization)


def score_volume_fft(online_emb, online_mask, map_emb, map_mask,
                     window: SearchWindow,
                     normalization: str = "global") -> ScoreVolume:
    """Rotate + FFT-correlate; see :func:`score_from_stack_fft`."""
    stack = rotate_embedding(online_emb, online_mask, window)
    return score_from_stack_fft(stack, map_emb, map_mask, window, normalization)
