import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from navstack.geometry import Point2, Point3, Pose, UndefinedBearingError, bearing_to, normalize_angle

from oracles import wrap

finite = st.floats(min_value=-1e6, max_value=1e6, allow_nan=False)
coord = st.floats(min_value=-100, max_value=100, allow_nan=False)


@pytest.mark.parametrize(
    "a, expected",
    [(0.0, 0.0), (3 * math.pi, math.pi), (-3.5 * math.pi, 0.5 * math.pi), (-math.pi, math.pi), (math.pi, math.pi)],
)
def test_normalize_angle_examples(a, expected):
    assert normalize_angle(a) == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize("bad", [math.inf, -math.inf, math.nan])
def test_normalize_angle_rejects_non_finite(bad):
    with pytest.raises(ValueError):
        normalize_angle(bad)


@given(finite)
def test_normalize_range_and_idempotence(a):
    n = normalize_angle(a)
    assert -math.pi < n <= math.pi
    assert normalize_angle(n) == n
    # differs from the input by a whole number of turns
    turns = (a - n) / (2 * math.pi)
    assert abs(turns - round(turns)) < 1e-9 * max(1.0, abs(a))


def _same_angle(a, b, tol=1e-9):
    """Equal, or both at the +/-pi seam where rounding may pick either side."""
    return abs(a - b) <= tol or (abs(abs(a) - math.pi) <= tol and abs(abs(b) - math.pi) <= tol)


@given(st.floats(min_value=-1e3, max_value=1e3, allow_nan=False))
def test_normalize_is_2pi_periodic(a):
    assert _same_angle(normalize_angle(a + 2 * math.pi), normalize_angle(a))


@given(st.floats(min_value=-50, max_value=50, allow_nan=False))
def test_normalize_matches_naive_oracle(a):
    assert _same_angle(normalize_angle(a), wrap(a))


@given(st.floats(min_value=-10, max_value=10, allow_nan=False), st.floats(min_value=-10, max_value=10, allow_nan=False))
def test_difference_antisymmetry(a, b):
    s = normalize_angle(normalize_angle(a - b) + normalize_angle(b - a))
    # zero, except at the boundary where both differences are +pi
    assert abs(s) < 1e-9 or abs(s - math.pi) < 1e-9 or abs(s + math.pi) < 1e-9


@pytest.mark.parametrize(
    "to, expected",
    [((1.0, 0.0), 0.0), ((0.0, 1.0), math.pi / 2), ((-1.0, -1.0), -3 * math.pi / 4)],
)
def test_bearing_to_examples(to, expected):
    assert bearing_to(Point2(0.0, 0.0), Point2(*to)) == pytest.approx(expected, abs=1e-15)


def test_bearing_to_coincident_points():
    with pytest.raises(UndefinedBearingError):
        bearing_to(Point2(1.0, 2.0), Point2(1.0, 2.0 + 1e-13))


@given(coord, coord, coord, coord)
def test_bearing_reverse_is_opposite(x1, y1, x2, y2):
    p, q = Point2(x1, y1), Point2(x2, y2)
    if math.hypot(x2 - x1, y2 - y1) < 1e-6:
        return
    forward = bearing_to(p, q)
    back = normalize_angle(bearing_to(q, p) + math.pi)
    assert math.cos(forward - back) == pytest.approx(1.0, abs=1e-12)
    assert -math.pi < forward <= math.pi


def test_pose_normalizes_and_rejects_non_finite():
    assert Pose(0, 0, 3 * math.pi).theta == pytest.approx(math.pi)
    with pytest.raises(ValueError):
        Pose(math.nan, 0.0, 0.0)
    with pytest.raises(ValueError):
        Point2(0.0, math.inf)
    with pytest.raises(ValueError):
        Point3(0.0, 0.0, math.nan)
