"""Planar angle arithmetic and the value types shared across the stack."""
from __future__ import annotations

import math
from dataclasses import dataclass

TWO_PI = 2.0 * math.pi
EPS_POS = 1e-12  # coincident-point tolerance for bearings, meters


class UndefinedBearingError(ValueError):
    """Raised when a bearing is requested between (nearly) coincident points."""


def normalize_angle(a: float) -> float:
    """Wrap ``a`` into (-pi, pi].

    ``math.remainder`` is exact, so the result differs from ``a`` by an exact
    multiple of the float ``2*pi`` and in-range inputs come back unchanged.
    """
    if -math.pi < a <= math.pi:
        return a
    try:
        r = math.remainder(a, TWO_PI)
    except ValueError:
        r = math.nan
    if r != r:
        raise ValueError(f"angle must be finite, got {a!r}")
    if r <= -math.pi:
        r = math.pi
    return r


def angle_diff(a: float, b: float) -> float:
    """Signed difference ``a - b`` wrapped into (-pi, pi]."""
    return normalize_angle(a - b)


@dataclass(frozen=True)
class Point2:
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"non-finite point ({self.x}, {self.y})")


@dataclass(frozen=True)
class Point3:
    x: float
    y: float
    z: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y) and math.isfinite(self.z)):
            raise ValueError(f"non-finite point ({self.x}, {self.y}, {self.z})")

    @property
    def xy(self) -> Point2:
        return Point2(self.x, self.y)


@dataclass(frozen=True)
class Pose:
    """Planar pose in the global frame; ``theta`` is normalized on construction."""

    x: float
    y: float
    theta: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"non-finite position ({self.x}, {self.y})")
        if not -math.pi < self.theta <= math.pi:
            object.__setattr__(self, "theta", normalize_angle(self.theta))

    @property
    def position(self) -> Point2:
        return Point2(self.x, self.y)

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.x, self.y, self.theta)


def bearing_to(src, dst) -> float:
    """Four-quadrant bearing of ``dst`` as seen from ``src``, in (-pi, pi].

    Accepts anything with ``x`` and ``y`` attributes (Point2, Pose).
    """
    dx = dst.x - src.x
    dy = dst.y - src.y
    if math.hypot(dx, dy) < EPS_POS:
        raise UndefinedBearingError(
            f"bearing undefined between coincident points ({src.x}, {src.y})"
        )
    return normalize_angle(math.atan2(dy, dx))


def distance(a, b) -> float:
    return math.hypot(b.x - a.x, b.y - a.y)
