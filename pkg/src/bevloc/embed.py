"""Fully-convolutional embedding network, implemented directly in numpy.

The network maps a single-channel BEV intensity image to a multi-channel
embedding of the same spatial size: a stack of 3x3 same-padded
convolutions with instance normalization and leaky-ReLU on the hidden
layers and a linear final layer.  Forward and reverse passes are written
against plain GEMMs so the whole model (and its gradients) can be
verified against finite differences without a framework dependency.

``params=None`` everywhere denotes the identity embedding: the input
image passed through unchanged as a 1-channel stack.  That is the
handcrafted baseline the learned embeddings are compared against.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

LEAKY_SLOPE = 0.1
NORM_EPS = 1e-5

_ACT_CODES = {"linear": 0, "leaky_relu": 1}
_ACT_NAMES = {v: k for k, v in _ACT_CODES.items()}


@dataclass(frozen=True)
class LayerSpec:
    """Shape and options of one convolution layer."""

    in_channels: int
    out_channels: int
    kernel: int = 3
    norm: bool = True
    activation: str = "leaky_relu"

    def __post_init__(self):
        if self.kernel <= 0 or self.kernel % 2 == 0:
            raise ValueError("LayerSpec: kernel must be odd and positive")
        if self.in_channels <= 0 or self.out_channels <= 0:
            raise ValueError("LayerSpec: channel counts must be positive")
        if self.activation not in _ACT_CODES:
            raise ValueError(f"LayerSpec: unknown activation {self.activation!r}")


def default_arch(embed_dim: int, width: int = 16, depth: int = 6) -> list[LayerSpec]:
    """Standard embedding head: ``depth`` 3x3 layers, ``width`` hidden
    channels, normalized leaky-ReLU hidden layers, linear output."""
    if depth < 1:
        raise ValueError("default_arch: depth must be >= 1")
    specs = []
    for i in range(depth):
        last = i == depth - 1
        specs.append(LayerSpec(
            in_channels=1 if i == 0 else width,
            out_channels=embed_dim if last else width,
            kernel=3,
            norm=not last,
            activation="linear" if last else "leaky_relu",
        ))
    return specs


@dataclass
class LayerParams:
    """Parameters of one layer: ``weight`` is (out, in, k, k)."""

    weight: np.ndarray
    bias: np.ndarray
    gamma: np.ndarray | None = None
    beta: np.ndarray | None = None

    def arrays(self):
        out = [self.weight, self.bias]
        if self.gamma is not None:
            out += [self.gamma, self.beta]
        return out


@dataclass
class FcnParams:
    """Full parameter set: one :class:`LayerParams` per :class:`LayerSpec`."""

    specs: list[LayerSpec]
    layers: list[LayerParams]

    @property
    def embed_dim(self) -> int:
        return self.specs[-1].out_channels

    def astype(self, dtype) -> "FcnParams":
        layers = [LayerParams(
            weight=lp.weight.astype(dtype),
            bias=lp.bias.astype(dtype),
            gamma=None if lp.gamma is None else lp.gamma.astype(dtype),
            beta=None if lp.beta is None else lp.beta.astype(dtype),
        ) for lp in self.layers]
        return FcnParams(specs=list(self.specs), layers=layers)

    def copy(self) -> "FcnParams":
        return self.astype(self.layers[0].weight.dtype)


def init_params(specs: list[LayerSpec], seed: int = 0) -> FcnParams:
    """He (fan-in) initialization in float32; unit norm scales, zero biases."""
    rng = np.random.default_rng(seed)
    layers = []
    for sp in specs:
        fan_in = sp.in_channels * sp.kernel * sp.kernel
        w = rng.normal(0.0, np.sqrt(2.0 / fan_in),
                       size=(sp.out_channels, sp.in_channels, sp.kernel, sp.kernel))
        layers.append(LayerParams(
            weight=w.astype(np.float32),
            bias=np.zeros(sp.out_channels, dtype=np.float32),
            gamma=np.ones(sp.out_channels, dtype=np.float32) if sp.norm else None,
            beta=np.zeros(sp.out_channels, dtype=np.float32) if sp.norm else None,
        ))
    return FcnParams(specs=list(specs), layers=layers)


def zero_grads(params: FcnParams) -> FcnParams:
    g = params.astype(params.layers[0].weight.dtype)
    for lp in g.layers:
        for a in lp.arrays():
            a.fill(0.0)
    return g


# ---------------------------------------------------------------------------
# Convolution primitives (k^2-shift GEMM formulation)
# ---------------------------------------------------------------------------

def _conv_same(xp: np.ndarray, w: np.ndarray, b: np.ndarray,
               out_hw: tuple[int, int]) -> np.ndarray:
    """``xp`` is the zero-padded input (C_in, H+2p, W+2p); returns
    (C_out, H, W).  Each kernel tap is one (C_out x C_in) GEMM against a
    shifted view of the input."""
    h, wd = out_hw
    k = w.shape[2]
    acc = np.zeros((w.shape[0], h * wd), dtype=np.result_type(xp, w))
    for u in range(k):
        for v in range(k):
            win = xp[:, u:u + h, v:v + wd].reshape(xp.shape[0], -1)
            acc += w[:, :, u, v] @ win
    return (acc + b[:, None]).reshape(w.shape[0], h, wd)


def _pad(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (p, p), (p, p)))


@dataclass
class _LayerCache:
    x_padded: np.ndarray
    pre_norm: np.ndarray | None
    x_hat: np.ndarray | None
    inv_std: np.ndarray | None
    pre_act: np.ndarray


def _forward_layer(sp: LayerSpec, lp: LayerParams, x: np.ndarray,
                   keep_cache: bool):
    p = sp.kernel // 2
    xp = _pad(x, p)
    z = _conv_same(xp, lp.weight, lp.bias, x.shape[1:])
    if sp.norm:
        mu = z.mean(axis=(1, 2), keepdims=True)
        var = z.var(axis=(1, 2), keepdims=True)
        inv_std = 1.0 / np.sqrt(var + np.asarray(NORM_EPS, dtype=z.dtype))
        x_hat = (z - mu) * inv_std
        a = lp.gamma[:, None, None] * x_hat + lp.beta[:, None, None]
    else:
        x_hat = inv_std = None
        a = z
    if sp.activation == "leaky_relu":
        y = np.where(a > 0, a, np.asarray(LEAKY_SLOPE, dtype=a.dtype) * a)
    else:
        y = a
    cache = _LayerCache(
        x_padded=xp if keep_cache else None,
        pre_norm=z if (keep_cache and sp.norm) else None,
        x_hat=x_hat if keep_cache else None,
        inv_std=inv_std if keep_cache else None,
        pre_act=a if keep_cache else None,
    ) if keep_cache else None
    return y, cache


def _coerce_input(image: np.ndarray) -> np.ndarray:
    if image.ndim == 2:
        return image[None]
    if image.ndim == 3:
        return image
    raise ValueError(f"expected (H, W) or (C, H, W) input, got {image.shape}")


def forward(params: FcnParams | None, image: np.ndarray) -> np.ndarray:
    """Embed an image; returns (embed_dim, H, W) in the input's dtype.

    ``params=None`` is the identity embedding (the image itself as a
    1-channel stack).
    """
    x = _coerce_input(np.asarray(image))
    if params is None:
        return x
    if x.shape[0] != params.specs[0].in_channels:
        raise ValueError(
            f"forward: input has {x.shape[0]} channels, network expects "
            f"{params.specs[0].in_channels}")
    for sp, lp in zip(params.specs, params.layers):
        x, _ = _forward_layer(sp, lp, x, keep_cache=False)
    if not np.all(np.isfinite(x)):
        raise FloatingPointError("forward: non-finite activations "
                                 "(diverged parameters or invalid input)")
    return x


def forward_cached(params: FcnParams, image: np.ndarray):
    """Forward pass that retains per-layer activations for :func:`backward`."""
    x = _coerce_input(np.asarray(image))
    caches = []
    for sp, lp in zip(params.specs, params.layers):
        x, cache = _forward_layer(sp, lp, x, keep_cache=True)
        caches.append(cache)
    if not np.all(np.isfinite(x)):
        raise FloatingPointError("forward: non-finite activations "
                                 "(diverged parameters or invalid input)")
    return x, caches


def backward(params: FcnParams, caches, grad_out: np.ndarray):
    """Exact reverse-mode pass.

    Returns ``(grad_params, grad_input)`` where ``grad_params`` mirrors
    the :class:`FcnParams` structure and ``grad_input`` has the shape of
    the network input.
    """
    grads = zero_grads(params)
    g = grad_out
    for sp, lp, cache, glp in zip(reversed(params.specs), reversed(params.layers),
                                  reversed(caches), reversed(grads.layers)):
        if sp.activation == "leaky_relu":
            slope = np.asarray(LEAKY_SLOPE, dtype=g.dtype)
            g = g * np.where(cache.pre_act > 0, g.dtype.type(1.0), slope)
        if sp.norm:
            glp.beta[...] = g.sum(axis=(1, 2))
            glp.gamma[...] = (g * cache.x_hat).sum(axis=(1, 2))
            gx = g * lp.gamma[:, None, None]
            mean_gx = gx.mean(axis=(1, 2), keepdims=True)
            mean_gx_xhat = (gx * cache.x_hat).mean(axis=(1, 2), keepdims=True)
            g = cache.inv_std * (gx - mean_gx - cache.x_hat * mean_gx_xhat)
        # Convolution backward.
        h, wd = g.shape[1:]
        k = sp.kernel
        p = k // 2
        glp.bias[...] = g.sum(axis=(1, 2))
        g_flat = g.reshape(g.shape[0], -1)
        xp = cache.x_padded
        gxp = np.zeros_like(xp)
        for u in range(k):
            for v in range(k):
                win = xp[:, u:u + h, v:v + wd].reshape(xp.shape[0], -1)
                glp.weight[:, :, u, v] = g_flat @ win.T
                gxp[:, u:u + h, v:v + wd] += (
                    lp.weight[:, :, u, v].T @ g_flat).reshape(-1, h, wd)
        g = gxp[:, p:p + h, p:p + wd] if p else gxp
    return grads, g


# ---------------------------------------------------------------------------
# Checkpoint format (FCN1)
# ---------------------------------------------------------------------------

_MAGIC = b"FCN1"
_VERSION = 1


def _write_block(f, params: FcnParams):
    f.write(struct.pack("<I", len(params.specs)))
    for sp in params.specs:
        f.write(struct.pack("<IIIBBxx", sp.in_channels, sp.out_channels,
                            sp.kernel, int(sp.norm), _ACT_CODES[sp.activation]))
    for lp in params.layers:
        for arr in lp.arrays():
            f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.off = 0

    def unpack(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.off + size > len(self.blob):
            raise ValueError("checkpoint truncated")
        vals = struct.unpack_from(fmt, self.blob, self.off)
        self.off += size
        return vals

    def array(self, shape) -> np.ndarray:
        n = int(np.prod(shape))
        size = 4 * n
        if self.off + size > len(self.blob):
            raise ValueError("checkpoint truncated")
        arr = np.frombuffer(self.blob, dtype="<f4", count=n, offset=self.off)
        self.off += size
        return arr.reshape(shape).astype(np.float32)


def _read_block(r: _Reader) -> FcnParams:
    (n_layers,) = r.unpack("<I")
    if n_layers == 0 or n_layers > 64:
        raise ValueError(f"checkpoint: implausible layer count {n_layers}")
    specs = []
    for _ in range(n_layers):
        cin, cout, k, norm, act = r.unpack("<IIIBBxx")
        if act not in _ACT_NAMES:
            raise ValueError(f"checkpoint: unknown activation code {act}")
        specs.append(LayerSpec(cin, cout, k, bool(norm), _ACT_NAMES[act]))
    layers = []
    for sp in specs:
        w = r.array((sp.out_channels, sp.in_channels, sp.kernel, sp.kernel))
        b = r.array((sp.out_channels,))
        gamma = beta = None
        if sp.norm:
            gamma = r.array((sp.out_channels,))
            beta = r.array((sp.out_channels,))
        layers.append(LayerParams(w, b, gamma, beta))
    return FcnParams(specs=specs, layers=layers)


def save_checkpoint(path, params_online: FcnParams, params_map: FcnParams) -> None:
    """Write both embedding branches to an FCN1 file.

    Layout (little-endian): magic ``FCN1``; u32 version; u32 block count
    (always 2: online branch then map branch).  Each block: u32 layer
    count; per layer u32 in/out channels, u32 kernel, u8 norm flag, u8
    activation code, 2 pad bytes; then the raw float32 parameter arrays
    of every layer in declaration order (weight, bias, [gamma, beta]).
    """
    if params_online.embed_dim != params_map.embed_dim:
        raise ValueError("save_checkpoint: branch embedding dims differ")
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<II", _VERSION, 2))
        _write_block(f, params_online)
        _write_block(f, params_map)


def load_checkpoint(path) -> tuple[FcnParams, FcnParams]:
    """Read an FCN1 checkpoint; returns ``(params_online, params_map)``."""
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 12 or blob[:4] != _MAGIC:
        raise ValueError("load_checkpoint: not an FCN1 file (bad magic)")
    r = _Reader(blob)
    r.off = 4
    version, n_blocks = r.unpack("<II")
    if version != _VERSION:
        raise ValueError(f"load_checkpoint: unsupported version {version}")
    if n_blocks != 2:
        raise ValueError(f"load_checkpoint: expected 2 branches, found {n_blocks}")
    online = _read_block(r)
    map_branch = _read_block(r)
    if r.off != len(blob):
        raise ValueError("load_checkpoint: trailing bytes after parameters")
    if online.embed_dim != map_branch.embed_dim:
        raise ValueError("load_checkpoint: branch embedding dims differ "
                         f"({online.embed_dim} vs {map_branch.embed_dim})")
    return online, map_branch
