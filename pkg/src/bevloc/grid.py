"""Bird's-eye-view intensity grids and their resampling operations.

A grid stores per-cell mean surface reflectivity in ``[0, 1]`` together
with an observation mask; cells that were never observed carry intensity
exactly zero so that downstream correlation treats them as absent rather
than as dark surface.

Geometry conventions used throughout:

* rows index the lateral (y) axis, columns the longitudinal (x) axis;
* the grid's local frame has its origin at the center of the grid, so
  cell ``(r, c)`` has local center
  ``((c - (cols-1)/2) * res, (r - (rows-1)/2) * res)``;
* ``origin`` is the world pose of the *center of cell (0, 0)* (the
  corner cell), with the grid axes aligned to the origin heading.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .pose import Pose2D, compose, inverse, inverse_compose, transform_points


@dataclass(frozen=True)
class GridGeometry:
    """Shape and scale of a grid: ``rows`` x ``cols`` cells at ``resolution`` m/cell."""

    rows: int
    cols: int
    resolution: float = 0.05

    def __post_init__(self):
        if self.rows <= 0 or self.cols <= 0:
            raise ValueError("GridGeometry: rows and cols must be positive")
        if not (self.resolution > 0.0):
            raise ValueError("GridGeometry: resolution must be positive")


@dataclass(frozen=True)
class BevGrid:
    """Bird's-eye-view intensity image with an observation mask.

    Attributes
    ----------
    data : ndarray, shape (rows, cols), float32
        Mean intensity per cell in ``[0, 1]``; exactly 0 where unobserved.
    mask : ndarray, shape (rows, cols), bool
        True where the cell holds at least one observation.
    resolution : float
        Cell edge length in meters.
    origin : Pose2D
        World pose of the center of cell (0, 0).
    """

    data: np.ndarray
    mask: np.ndarray
    resolution: float
    origin: Pose2D = field(default_factory=Pose2D)

    def __post_init__(self):
        if self.data.ndim != 2 or self.mask.shape != self.data.shape:
            raise ValueError("BevGrid: data/mask shape mismatch")
        if self.data.dtype != np.float32 or self.mask.dtype != np.bool_:
            raise ValueError("BevGrid: data must be float32 and mask bool")
        if not (self.resolution > 0.0):
            raise ValueError("BevGrid: resolution must be positive")
        if np.any(self.data[~self.mask] != 0.0):
            raise ValueError("BevGrid: unobserved cells must hold intensity 0")

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def geometry(self) -> GridGeometry:
        return GridGeometry(self.rows, self.cols, self.resolution)

    def center_pose(self) -> Pose2D:
        """World pose of the grid center (the local-frame origin)."""
        return compose(
            self.origin,
            Pose2D((self.cols - 1) / 2.0 * self.resolution,
                   (self.rows - 1) / 2.0 * self.resolution, 0.0),
        )


def local_cell_centers(geom: GridGeometry):
    """Local (x, y) center coordinates: returns ``(xs[cols], ys[rows])``."""
    xs = (np.arange(geom.cols, dtype=np.float64) - (geom.cols - 1) / 2.0) * geom.resolution
    ys = (np.arange(geom.rows, dtype=np.float64) - (geom.rows - 1) / 2.0) * geom.resolution
    return xs, ys


# ---------------------------------------------------------------------------
# Bilinear resampling
# ---------------------------------------------------------------------------

class BilinearSampler:
    """Precomputed bilinear gather with an exact transpose (scatter-add).

    Sampling coordinates are fractional *cell indices* into the source
    grid; samples falling outside the source read as zero.  The object
    is linear in its input, so ``apply_transpose`` implements the exact
    adjoint used for gradient propagation through resampling.
    """

    def __init__(self, row_coords: np.ndarray, col_coords: np.ndarray,
                 src_shape: tuple[int, int]):
        if row_coords.shape != col_coords.shape:
            raise ValueError("BilinearSampler: coordinate shape mismatch")
        self.out_shape = row_coords.shape
        self.src_shape = src_shape
        rows, cols = src_shape

        r = row_coords.ravel().astype(np.float64)
        c = col_coords.ravel().astype(np.float64)
        r0 = np.floor(r).astype(np.int64)
        c0 = np.floor(c).astype(np.int64)
        fr = (r - r0).astype(np.float32)
        fc = (c - c0).astype(np.float32)

        n = r.size
        idx = np.empty((4, n), dtype=np.int64)
        w = np.empty((4, n), dtype=np.float32)
        for k, (dr, dc) in enumerate(((0, 0), (0, 1), (1, 0), (1, 1))):
            rr = r0 + dr
            cc = c0 + dc
            valid = (rr >= 0) & (rr < rows) & (cc >= 0) & (cc < cols)
            wr = (1.0 - fr) if dr == 0 else fr
            wc = (1.0 - fc) if dc == 0 else fc
            w[k] = np.where(valid, wr * wc, 0.0)
            idx[k] = np.where(valid, rr * cols + cc, 0)
        self._idx = idx
        self._w = w

    def apply(self, src: np.ndarray) -> np.ndarray:
        """Gather: ``src`` has shape ``(..., rows, cols)``; leading axes broadcast."""
        lead = src.shape[:-2]
        flat = src.reshape(lead + (-1,))
        out = np.zeros(lead + (self._idx.shape[1],), dtype=src.dtype)
        for k in range(4):
            out += flat[..., self._idx[k]] * self._w[k]
        return out.reshape(lead + self.out_shape)

    def apply_transpose(self, grad: np.ndarray) -> np.ndarray:
        """Scatter-add adjoint of :meth:`apply`."""
        lead = grad.shape[:-2]
        g = grad.reshape(lead + (-1,))
        out = np.zeros(lead + (self.src_shape[0] * self.src_shape[1],), dtype=grad.dtype)
        for k in range(4):
            contrib = g * self._w[k]
            if lead:
                for pos in np.ndindex(lead):
                    np.add.at(out[pos], self._idx[k], contrib[pos])
            else:
                np.add.at(out, self._idx[k], contrib)
        return out.reshape(lead + self.src_shape)


def pose_sampler(out_geom: GridGeometry, src_geom: GridGeometry,
                 rel: Pose2D) -> BilinearSampler:
    """Sampler that reads, for each output cell, the source value at the
    location of that cell once the output frame is placed at pose ``rel``
    inside the source's local frame (both frames centered mid-grid)."""
    xs, ys = local_cell_centers(out_geom)
    gx = rel.x + xs[None, :] * np.cos(rel.theta) - ys[:, None] * np.sin(rel.theta)
    gy = rel.y + xs[None, :] * np.sin(rel.theta) + ys[:, None] * np.cos(rel.theta)
    rf = gy / src_geom.resolution + (src_geom.rows - 1) / 2.0
    cf = gx / src_geom.resolution + (src_geom.cols - 1) / 2.0
    return BilinearSampler(rf, cf, (src_geom.rows, src_geom.cols))


def resample_grid(grid: BevGrid, sampler: BilinearSampler,
                  origin: Pose2D, mask_threshold: float = 0.5) -> BevGrid:
    """Resample ``grid`` through ``sampler``; masks are interpolated and
    re-binarized at ``mask_threshold``, and data is re-zeroed where the
    output mask is false so the unobserved-cells-are-zero invariant holds."""
    data = sampler.apply(grid.data)
    mcov = sampler.apply(grid.mask.astype(np.float32))
    mask = mcov >= mask_threshold
    data = np.where(mask, data, np.float32(0.0)).astype(np.float32)
    return BevGrid(data=data, mask=mask, resolution=grid.resolution, origin=origin)


# ---------------------------------------------------------------------------
# Core grid operations
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Sweep:
    """One motion-compensated LiDAR sweep.

    ``points`` holds ``(x, y, intensity)`` rows in the sweep's own capture
    frame; ``pose_delta`` is the capture pose expressed in the frame of
    the most recent sweep of the accumulation window.
    """

    points: np.ndarray
    pose_delta: Pose2D = field(default_factory=Pose2D)

    def __post_init__(self):
        if self.points.ndim != 2 or self.points.shape[1] != 3:
            raise ValueError(f"Sweep: expected (n, 3) points, got {self.points.shape}")


def rasterize(sweeps, geom: GridGeometry) -> BevGrid:
    """Accumulate sweeps into a vehicle-frame BEV grid of shape ``geom``.

    Each sweep's points are brought into the newest frame via its
    ``pose_delta``, binned into cells (a point at local ``(x, y)`` lands
    in column ``floor(x/res + cols/2)`` / row ``floor(y/res + rows/2)``),
    and averaged per cell.  Out-of-extent points are dropped.  The
    returned grid's origin places the vehicle at the grid center.

    Raises ``ValueError`` when the combined point set is empty.
    """
    xs, ys, vs = [], [], []
    for sw in sweeps:
        if sw.points.shape[0] == 0:
            continue
        world = transform_points(sw.pose_delta, sw.points[:, :2])
        xs.append(world[:, 0])
        ys.append(world[:, 1])
        vs.append(sw.points[:, 2].astype(np.float64))
    if not xs:
        raise ValueError("rasterize: empty point set across all sweeps")
    x = np.concatenate(xs)
    y = np.concatenate(ys)
    v = np.concatenate(vs)

    col = np.floor(x / geom.resolution + geom.cols / 2.0).astype(np.int64)
    row = np.floor(y / geom.resolution + geom.rows / 2.0).astype(np.int64)
    keep = (row >= 0) & (row < geom.rows) & (col >= 0) & (col < geom.cols)
    flat = row[keep] * geom.cols + col[keep]
    ncell = geom.rows * geom.cols
    counts = np.bincount(flat, minlength=ncell)
    sums = np.bincount(flat, weights=v[keep], minlength=ncell)
    mask = counts > 0
    data = np.zeros(ncell, dtype=np.float64)
    np.divide(sums, counts, out=data, where=mask)

    origin = Pose2D(-(geom.cols - 1) / 2.0 * geom.resolution,
                    -(geom.rows - 1) / 2.0 * geom.resolution, 0.0)
    return BevGrid(
        data=data.reshape(geom.rows, geom.cols).astype(np.float32),
        mask=mask.reshape(geom.rows, geom.cols),
        resolution=geom.resolution,
        origin=origin,
    )


def warp(grid: BevGrid, offset: Pose2D) -> BevGrid:
    """Rigidly move the grid *content* by ``offset`` within the grid frame.

    A feature at local pose ``p`` before the warp appears at
    ``compose(offset, p)`` afterwards; rotation is about the grid center.
    Implemented as inverse-map bilinear resampling, so regions that map
    from outside the source become unobserved.  Requires
    ``|offset.theta| < pi``.
    """
    if not abs(offset.theta) < np.pi:
        raise ValueError("warp: |theta| must be < pi")
    # Output cell at local pose q reads the source at inverse(offset) . q.
    sampler = pose_sampler(grid.geometry, grid.geometry, inverse(offset))
    return resample_grid(grid, sampler, grid.origin)


def crop_window(map_grid: BevGrid, center: Pose2D, rows: int, cols: int) -> BevGrid:
    """Extract a ``rows`` x ``cols`` window of the map, centered at the world
    pose ``center`` and axis-aligned with ``center``'s heading.

    The window is resampled bilinearly at the map's resolution; cells whose
    footprint falls outside the mapped region come back unobserved.  Raises
    ``ValueError`` if the window lies entirely outside the map bounds.
    """
    out_geom = GridGeometry(rows, cols, map_grid.resolution)
    # Window-center pose expressed in the map's center frame.
    rel = inverse_compose(center, map_grid.center_pose())
    sampler = pose_sampler(out_geom, map_grid.geometry, rel)
    out_origin = compose(center,
                         Pose2D(-(cols - 1) / 2.0 * map_grid.resolution,
                                -(rows - 1) / 2.0 * map_grid.resolution, 0.0))
    out = resample_grid(map_grid, sampler, out_origin)
    if not out.mask.any():
        # Distinguish "window off the map" (an addressing bug upstream)
        # from "window on the map but over unobserved cells".
        xs, ys = local_cell_centers(out_geom)
        gx = rel.x + xs[None, :] * np.cos(rel.theta) - ys[:, None] * np.sin(rel.theta)
        gy = rel.y + xs[None, :] * np.sin(rel.theta) + ys[:, None] * np.cos(rel.theta)
        half_x = map_grid.cols * map_grid.resolution / 2.0
        half_y = map_grid.rows * map_grid.resolution / 2.0
        inside = (np.abs(gx) <= half_x) & (np.abs(gy) <= half_y)
        if not inside.any():
            raise ValueError("crop_window: window entirely outside map bounds")
    return out


# ---------------------------------------------------------------------------
# Map file format (BVG1)
# ---------------------------------------------------------------------------

_MAGIC = b"BVG1"
_VERSION = 1


def save_map(path, grid: BevGrid) -> None:
    """Write a grid in the BVG1 binary layout.

    Layout (all little-endian): 16-byte header (magic ``BVG1``, u32
    version, 8 reserved zero bytes); u32 rows; u32 cols; f32 resolution;
    origin pose as 3 f64; then ``rows*cols`` f32 intensities in row-major
    order; then ``rows*cols`` u8 mask bytes.
    """
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<I", _VERSION))
        f.write(b"\x00" * 8)
        f.write(struct.pack("<II", grid.rows, grid.cols))
        f.write(struct.pack("<f", grid.resolution))
        f.write(struct.pack("<3d", grid.origin.x, grid.origin.y, grid.origin.theta))
        f.write(np.ascontiguousarray(grid.data, dtype="<f4").tobytes())
        f.write(np.ascontiguousarray(grid.mask, dtype=np.uint8).tobytes())


def load_map(path) -> BevGrid:
    """Read a BVG1 map; raises ``ValueError`` on bad magic, version, or size."""
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 16 or blob[:4] != _MAGIC:
        raise ValueError("load_map: not a BVG1 file (bad magic)")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != _VERSION:
        raise ValueError(f"load_map: unsupported BVG1 version {version}")
    rows, cols = struct.unpack_from("<II", blob, 16)
    (resolution,) = struct.unpack_from("<f", blob, 24)
    ox, oy, oth = struct.unpack_from("<3d", blob, 28)
    off = 52
    n = rows * cols
    expected = off + 4 * n + n
    if len(blob) != expected:
        raise ValueError(
            f"load_map: truncated or oversized file ({len(blob)} bytes, expected {expected})")
    data = np.frombuffer(blob, dtype="<f4", count=n, offset=off).reshape(rows, cols)
    mask = np.frombuffer(blob, dtype=np.uint8, count=n, offset=off + 4 * n)
    mask = mask.reshape(rows, cols).astype(bool)
    data = np.where(mask, data, np.float32(0.0)).astype(np.float32)
    return BevGrid(data=data, mask=mask, resolution=float(resolution),
                   origin=Pose2D(ox, oy, oth))
