"""Differential-drive dead reckoning.

Wheel angular speeds are turned into wheel displacements, then into a pose
update that advances the position along the mid-step heading. The same
module provides the linearization of that update used by the EKF.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import Pose, normalize_angle

DEFAULT_MAX_WHEEL_SPEED = 10.0  # rad/s


@dataclass(frozen=True)
class RobotGeometry:
    wheel_radius: float = 0.1
    wheelbase: float = 0.4
    body_radius: float = 0.2
    body_height: float = 1.1
    max_wheel_speed: float = DEFAULT_MAX_WHEEL_SPEED

    def __post_init__(self):
        for name in ("wheel_radius", "wheelbase", "body_radius", "body_height", "max_wheel_speed"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be positive, got {value!r}")
        # anything taller than the slice band's upper edge could not pass under it
        if self.body_height >= 1.2:
            raise ValueError(f"body_height must be below 1.2 m, got {self.body_height}")


@dataclass(frozen=True)
class WheelSpeeds:
    omega_L: float
    omega_R: float
    max_speed: float = field(default=DEFAULT_MAX_WHEEL_SPEED, compare=False)

    def __post_init__(self):
        limit = self.max_speed * (1.0 + 1e-12)
        if abs(self.omega_L) <= limit and abs(self.omega_R) <= limit:
            return  # also false for NaN, which falls through to the checks below
        for name in ("omega_L", "omega_R"):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise ValueError(f"{name} must be finite, got {value!r}")
            if abs(value) > self.max_speed * (1.0 + 1e-12):
                raise ValueError(f"|{name}| = {abs(value)} exceeds {self.max_speed} rad/s")


@dataclass(frozen=True)
class OdometryIncrement:
    ds_L: float
    ds_R: float
    ds: float
    dtheta: float


def wheel_increment(u: WheelSpeeds, dt: float, geom: RobotGeometry) -> OdometryIncrement:
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt!r}")
    ds_L = dt * geom.wheel_radius * u.omega_L
    ds_R = dt * geom.wheel_radius * u.omega_R
    return OdometryIncrement(
        ds_L=ds_L,
        ds_R=ds_R,
        ds=(ds_L + ds_R) / 2.0,
        dtheta=(ds_R - ds_L) / geom.wheelbase,
    )


def increment_from_displacements(ds_L: float, ds_R: float, geom: RobotGeometry) -> OdometryIncrement:
    return OdometryIncrement(ds_L, ds_R, (ds_L + ds_R) / 2.0, (ds_R - ds_L) / geom.wheelbase)


def pose_update(p: Pose, inc: OdometryIncrement) -> Pose:
    if not (math.isfinite(inc.ds) and math.isfinite(inc.dtheta)):
        raise ValueError("odometry increment must be finite")
    heading = p.theta + inc.dtheta / 2.0
    return Pose(
        p.x + inc.ds * math.cos(heading),
        p.y + inc.ds * math.sin(heading),
        normalize_angle(p.theta + inc.dtheta),
    )


def process_jacobians(p: Pose, inc: OdometryIncrement, geom: RobotGeometry):
    """Return ``(A, W)``: derivatives of :func:`pose_update` with respect to
    the pose (3x3) and to the wheel displacements ``(ds_R, ds_L)`` (3x2).

    The column order of ``W`` matches the ``diag(ω_R², ω_L²)`` layout of the
    process-noise matrix.
    """
    m = p.theta + inc.dtheta / 2.0
    c, s = math.cos(m), math.sin(m)
    ds = inc.ds
    L = geom.wheelbase
    A = np.array([
        [1.0, 0.0, -ds * s],
        [0.0, 1.0, ds * c],
        [0.0, 0.0, 1.0],
    ])
    W = np.array([
        [0.5 * c - ds * s / (2.0 * L), 0.5 * c + ds * s / (2.0 * L)],
        [0.5 * s + ds * c / (2.0 * L), 0.5 * s - ds * c / (2.0 * L)],
        [1.0 / L, -1.0 / L],
    ])
    return A, W


def wheel_speeds_for(v: float, omega: float, geom: RobotGeometry) -> WheelSpeeds:
    """Inverse of the forward model: body (v, ω) to wheel speeds.

    If either wheel would exceed ``geom.max_wheel_speed`` both are scaled by
    the same factor, which keeps the path curvature.
    """
    half = omega * geom.wheelbase / 2.0
    w_R = (v + half) / geom.wheel_radius
    w_L = (v - half) / geom.wheel_radius
    peak = max(abs(w_R), abs(w_L))
    if peak > geom.max_wheel_speed:
        scale = geom.max_wheel_speed / peak
        w_R *= scale
        w_L *= scale
    return WheelSpeeds(omega_L=w_L, omega_R=w_R, max_speed=geom.max_wheel_speed)


def body_velocity(u: WheelSpeeds, geom: RobotGeometry) -> tuple[float, float]:
    """Forward model: wheel speeds to body (v, ω)."""
    R = geom.wheel_radius
    return R * (u.omega_R + u.omega_L) / 2.0, R * (u.omega_R - u.omega_L) / geom.wheelbase
