"""Planar pose algebra: composition, relative poses, angle wrapping."""

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bevloc.pose import (Pose2D, compose, inverse, inverse_compose,
                         transform_points, wrap_angle)

coords = st.floats(-50.0, 50.0, allow_nan=False, allow_infinity=False)
headings = st.floats(-10.0, 10.0, allow_nan=False, allow_infinity=False)
poses = st.builds(Pose2D, coords, coords, headings)


def angle_diff(a: float, b: float) -> float:
    return abs(wrap_angle(a - b))


def assert_pose_close(a: Pose2D, b: Pose2D, tol: float = 1e-9):
    assert abs(a.x - b.x) <= tol
    assert abs(a.y - b.y) <= tol
    assert angle_diff(a.theta, b.theta) <= tol


# ---------------------------------------------------------------------------
# wrap_angle
# ---------------------------------------------------------------------------

def test_wrap_examples():
    assert wrap_angle(0.0) == 0.0
    assert wrap_angle(3.0 * math.pi) == pytest.approx(math.pi, abs=1e-12)
    assert wrap_angle(-math.pi) == pytest.approx(math.pi, abs=0.0)
    assert wrap_angle(math.pi) == pytest.approx(math.pi, abs=0.0)
    assert wrap_angle(-3.5 * math.pi) == pytest.approx(0.5 * math.pi, abs=1e-12)


def test_wrap_array():
    out = wrap_angle(np.array([0.0, 3.0 * math.pi, -math.pi]))
    assert out.shape == (3,)
    assert np.allclose(out, [0.0, math.pi, math.pi], atol=1e-12)


@given(headings, st.integers(-3, 3))
def test_wrap_range_and_periodicity(theta, k):
    w = wrap_angle(theta)
    assert -math.pi < w <= math.pi
    assert angle_diff(w, wrap_angle(theta + 2.0 * math.pi * k)) <= 1e-9


@pytest.mark.parametrize("bad", [math.nan, math.inf, -math.inf])
def test_wrap_rejects_non_finite(bad):
    with pytest.raises(ValueError):
        wrap_angle(bad)


# ---------------------------------------------------------------------------
# Pose2D construction
# ---------------------------------------------------------------------------

def test_pose_wraps_heading_on_construction():
    assert Pose2D(0.0, 0.0, 3.0 * math.pi).theta == pytest.approx(math.pi)
    assert Pose2D(0.0, 0.0, -math.pi).theta == pytest.approx(math.pi)


def test_pose_rejects_non_finite():
    for bad in (Pose2D, ):
        with pytest.raises(ValueError):
            bad(math.nan, 0.0, 0.0)
        with pytest.raises(ValueError):
            bad(0.0, math.inf, 0.0)
        with pytest.raises(ValueError):
            bad(0.0, 0.0, math.nan)


def test_pose_array_roundtrip():
    p = Pose2D(1.5, -2.0, 0.3)
    arr = p.as_array()
    assert arr.dtype == np.float64 and arr.shape == (3,)
    assert_pose_close(Pose2D.from_array(arr), p, 0.0)


# ---------------------------------------------------------------------------
# compose / inverse_compose examples
# ---------------------------------------------------------------------------

def test_compose_identity_is_neutral():
    p = Pose2D(3.0, 4.0, 0.5)
    assert_pose_close(compose(Pose2D(), p), p, 1e-12)
    assert_pose_close(compose(p, Pose2D()), p, 1e-12)


def test_compose_quarter_turn():
    out = compose(Pose2D(1.0, 0.0, math.pi / 2.0), Pose2D(1.0, 0.0, 0.0))
    assert_pose_close(out, Pose2D(1.0, 1.0, math.pi / 2.0), 1e-12)


def test_compose_two_half_turns_cancel():
    out = compose(Pose2D(0.0, 0.0, math.pi), Pose2D(0.0, 0.0, math.pi))
    assert out.x == 0.0 and out.y == 0.0
    assert angle_diff(out.theta, 0.0) <= 1e-12


def test_inverse_compose_self_is_identity():
    p = Pose2D(2.0, -1.0, 1.2)
    assert_pose_close(inverse_compose(p, p), Pose2D(), 0.0)


def test_inverse_examples():
    assert_pose_close(inverse(Pose2D()), Pose2D(), 0.0)
    p = Pose2D(1.0, 0.0, math.pi / 2.0)
    assert_pose_close(compose(p, inverse(p)), Pose2D(), 1e-12)


# ---------------------------------------------------------------------------
# Group properties
# ---------------------------------------------------------------------------

@given(poses, poses)
def test_relative_pose_roundtrip(a, b):
    assert_pose_close(compose(b, inverse_compose(a, b)), a, 1e-9)


@given(poses, poses)
def test_compose_then_subtract(a, b):
    assert_pose_close(inverse_compose(compose(a, b), a), b, 1e-9)


@given(poses, poses, poses)
def test_associativity(a, b, c):
    assert_pose_close(compose(compose(a, b), c), compose(a, compose(b, c)),
                      1e-9)


@given(poses)
def test_inverse_roundtrip(a):
    assert_pose_close(compose(a, inverse(a)), Pose2D(), 1e-9)
    assert_pose_close(compose(inverse(a), a), Pose2D(), 1e-9)


@given(poses, poses)
def test_heading_always_wrapped(a, b):
    for p in (compose(a, b), inverse_compose(a, b), inverse(a)):
        assert -math.pi < p.theta <= math.pi


# ---------------------------------------------------------------------------
# transform_points
# ---------------------------------------------------------------------------

def test_transform_points_quarter_turn():
    pts = transform_points(Pose2D(0.0, 0.0, math.pi / 2.0),
                           np.array([[1.0, 0.0]]))
    assert np.allclose(pts, [[0.0, 1.0]], atol=1e-12)


def test_transform_points_translation():
    pts = transform_points(Pose2D(2.0, -3.0, 0.0),
                           np.array([[1.0, 1.0], [0.0, 0.0]]))
    assert np.allclose(pts, [[3.0, -2.0], [2.0, -3.0]], atol=1e-12)


@given(poses, st.lists(st.tuples(coords, coords), min_size=1, max_size=8))
def test_transform_points_roundtrip(p, raw):
    pts = np.array(raw, dtype=np.float64)
    back = transform_points(inverse(p), transform_points(p, pts))
    assert np.max(np.abs(back - pts)) <= 1e-9


def test_transform_points_matches_compose():
    p = Pose2D(0.7, -0.3, 0.9)
    q = Pose2D(1.1, 0.4, 0.0)
    via_compose = compose(p, q)
    via_points = transform_points(p, np.array([[q.x, q.y]]))[0]
    assert np.allclose(via_points, [via_compose.x, via_compose.y], atol=1e-12)


def test_transform_points_rejects_bad_shape():
    with pytest.raises(ValueError):
        transform_points(Pose2D(), np.zeros((2, 3)))
    with pytest.raises(ValueError):
        transform_points(Pose2D(), np.zeros(4))
