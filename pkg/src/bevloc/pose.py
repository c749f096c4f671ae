"""Planar rigid-body pose algebra.

A pose ``(x, y, theta)`` encodes the transform from a body frame to a
reference frame: rotate by ``theta``, then translate by ``(x, y)``.
Composition and its inverse are the usual SE(2) group operations; all
angles are normalized to the half-open interval ``(-pi, pi]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * math.pi


def wrap_angle(theta):
    """Normalize an angle (scalar or ndarray) to ``(-pi, pi]``.

    Exactly ``-pi`` maps to ``+pi`` so the representation is unique.
    Raises ``ValueError`` on non-finite input.
    """
    arr = np.asarray(theta, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError("wrap_angle: non-finite angle")
    wrapped = arr - TWO_PI * np.round(arr / TWO_PI)
    wrapped = np.where(wrapped <= -math.pi, wrapped + TWO_PI, wrapped)
    if np.isscalar(theta) or np.ndim(theta) == 0:
        return float(wrapped)
    return wrapped


@dataclass(frozen=True, slots=True)
class Pose2D:
    """Planar pose: translation ``(x, y)`` in meters, heading ``theta`` in radians.

    Attributes
    ----------
    x, y : float
        Position of the body origin in the reference frame.
    theta : float
        Heading, normalized to ``(-pi, pi]`` on construction.
    """

    x: float = 0.0
    y: float = 0.0
    theta: float = 0.0

    def __post_init__(self):
        for v in (self.x, self.y, self.theta):
            if not math.isfinite(v):
                raise ValueError(f"Pose2D: non-finite component {v!r}")
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "theta", wrap_angle(float(self.theta)))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta], dtype=np.float64)

    @staticmethod
    def from_array(v) -> "Pose2D":
        v = np.asarray(v, dtype=np.float64)
        return Pose2D(float(v[0]), float(v[1]), float(v[2]))


def compose(a: Pose2D, b: Pose2D) -> Pose2D:
    """Pose composition ``a . b``: apply ``b`` in the frame of ``a``.

    Returns the pose of a frame that is reached by first moving to ``a``
    and then moving by ``b`` expressed in ``a``'s body frame.
    """
    c, s = math.cos(a.theta), math.sin(a.theta)
    return Pose2D(
        a.x + b.x * c - b.y * s,
        a.y + b.x * s + b.y * c,
        wrap_angle(a.theta + b.theta),
    )


def inverse_compose(a: Pose2D, b: Pose2D) -> Pose2D:
    """Relative pose of ``a`` expressed in the body frame of ``b``.

    The defining identity is ``compose(b, inverse_compose(a, b)) == a``.
    """
    c, s = math.cos(b.theta), math.sin(b.theta)
    dx, dy = a.x - b.x, a.y - b.y
    return Pose2D(
        dx * c + dy * s,
        -dx * s + dy * c,
        wrap_angle(a.theta - b.theta),
    )


def inverse(a: Pose2D) -> Pose2D:
    """Group inverse: ``compose(a, inverse(a))`` is the identity pose."""
    return inverse_compose(Pose2D(), a)


def transform_points(pose: Pose2D, points) -> np.ndarray:
    """Map points from the pose's body frame into the reference frame.

    Parameters
    ----------
    points : array-like, shape (n, 2)
        Body-frame coordinates.

    Returns
    -------
    ndarray, shape (n, 2), float64
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError(f"transform_points: expected (n, 2), got {pts.shape}")
    c, s = math.cos(pose.theta), math.sin(pose.theta)
    out = np.empty_like(pts)
    out[:, 0] = pose.x + pts[:, 0] * c - pts[:, 1] * s
    out[:, 1] = pose.y + pts[:, 0] * s + pts[:, 1] * c
    return out
