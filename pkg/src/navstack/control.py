"""Velocity-command generators.

Two controllers share the robot: a Lyapunov-based pose stabilizer working in
polar coordinates (distance to the goal, heading error to the goal line,
approach angle), and a potential-field avoider that takes over while an
obstacle sits inside the frontal sector and influence radius.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

from .geometry import EPS_POS, Point2, Pose, bearing_to, normalize_angle

EPS_GOAL = 0.02  # m; inside this radius the polar dynamics are not used
SINC_SERIES_BELOW = 1e-6


class Mode(str, Enum):
    GOAL_SEEK = "GOAL_SEEK"
    AVOID = "AVOID"
    TERMINAL = "TERMINAL"


class Source(str, Enum):
    ULTRASONIC = "ultrasonic"
    LASER = "laser"


@dataclass(frozen=True)
class NavVariables:
    rho: float
    alpha: float
    phi: float

    def __post_init__(self):
        if not self.rho >= 0:
            raise ValueError(f"rho must be >= 0, got {self.rho!r}")
        if not -math.pi < self.alpha <= math.pi:
            object.__setattr__(self, "alpha", normalize_angle(self.alpha))
        if not -math.pi < self.phi <= math.pi:
            object.__setattr__(self, "phi", normalize_angle(self.phi))


@dataclass(frozen=True)
class LyapunovGains:
    """Defaults put the linearized (alpha, phi) loop at critical damping,
    lambda^2 + k_alpha lambda + k_v^2 h = (lambda + 1)^2, so the angles settle
    at twice the rate at which rho shrinks."""

    k_v: float = 0.5
    k_alpha: float = 2.0
    h_weight: float = 4.0

    def __post_init__(self):
        for name in ("k_v", "k_alpha", "h_weight"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class PotentialFieldParams:
    k_att: float = 10.0
    k_rep: float = 10.0
    d0: float = 0.7
    sector_half_angle: float = math.radians(60.0)
    d_min: float = 0.05
    hysteresis: float = 0.05
    angular_hysteresis: float = math.radians(30.0)
    exit_dwell: float = 0.75  # s the exit condition must hold before AVOID ends

    def __post_init__(self):
        for name in ("k_att", "k_rep", "d0", "sector_half_angle", "d_min"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.hysteresis < 0 or self.angular_hysteresis < 0 or self.exit_dwell < 0:
            raise ValueError("hysteresis bands must be >= 0")
        if self.sector_half_angle + self.angular_hysteresis > math.pi:
            raise ValueError("sector plus angular hysteresis exceeds the full circle")


@dataclass(frozen=True)
class VelocityLimits:
    v_max: float = 0.5
    omega_max: float = 1.5


@dataclass(frozen=True)
class VelocityCommand:
    v: float = 0.0
    omega: float = 0.0


@dataclass(frozen=True)
class ObstacleReading:
    distance: float
    bearing: float
    source: Source = Source.ULTRASONIC

    def __post_init__(self):
        if not self.distance > 0:
            raise ValueError(f"obstacle distance must be positive, got {self.distance!r}")
        object.__setattr__(self, "bearing", normalize_angle(self.bearing))


def saturate_scaled(cmd: VelocityCommand, limits: VelocityLimits | None) -> VelocityCommand:
    """Scale v and ω by one common factor so both fit; keeps the curvature."""
    if limits is None:
        return cmd
    s = 1.0
    if abs(cmd.v) > limits.v_max:
        s = limits.v_max / abs(cmd.v)
    if abs(cmd.omega) * s > limits.omega_max:
        s = limits.omega_max / abs(cmd.omega)
    return VelocityCommand(cmd.v * s, cmd.omega * s) if s < 1.0 else cmd


def saturate_clip(cmd: VelocityCommand, limits: VelocityLimits | None) -> VelocityCommand:
    if limits is None:
        return cmd
    return VelocityCommand(
        max(-limits.v_max, min(limits.v_max, cmd.v)),
        max(-limits.omega_max, min(limits.omega_max, cmd.omega)),
    )


# --- Lyapunov pose stabilization -------------------------------------------

def navigation_variables(current: Pose, goal: Pose, eps_goal: float = EPS_GOAL) -> NavVariables:
    dx = goal.x - current.x
    dy = goal.y - current.y
    rho = math.hypot(dx, dy)
    if rho < eps_goal:
        return NavVariables(rho, 0.0, 0.0)
    line = math.atan2(dy, dx)
    return NavVariables(rho, normalize_angle(line - current.theta), normalize_angle(line - goal.theta))


def lyapunov_value(nv: NavVariables, gains: LyapunovGains) -> float:
    return nv.rho**2 / 2.0 + (nv.alpha**2 + gains.h_weight * nv.phi**2) / 2.0


def _sinc(a: float) -> float:
    if abs(a) < SINC_SERIES_BELOW:
        return 1.0 - a * a / 6.0
    return math.sin(a) / a


def lyapunov_control(
    nv: NavVariables, gains: LyapunovGains, limits: VelocityLimits | None = None
) -> VelocityCommand:
    """v = k_v ρ cos α;  ω = k_α α + k_v cos α (sin α / α)(α + h φ).

    With these, dV/dt = -k_v ρ² cos² α - k_α α² along the polar dynamics.
    Saturation scales both components together, which only rescales dV/dt.
    """
    ca = math.cos(nv.alpha)
    v = gains.k_v * nv.rho * ca
    omega = gains.k_alpha * nv.alpha + gains.k_v * ca * _sinc(nv.alpha) * (
        nv.alpha + gains.h_weight * nv.phi
    )
    return saturate_scaled(VelocityCommand(v, omega), limits)


def closed_loop_nav_dynamics(nv: NavVariables, cmd: VelocityCommand, eps_goal: float = EPS_GOAL):
    """Time derivatives (dρ, dα, dφ) of the polar navigation variables."""
    if nv.rho <= eps_goal:
        raise ValueError(f"polar dynamics are singular at rho={nv.rho} <= {eps_goal}")
    turn = cmd.v * math.sin(nv.alpha) / nv.rho
    return (-cmd.v * math.cos(nv.alpha), -cmd.omega + turn, turn)


def lyapunov_rate(nv: NavVariables, gains: LyapunovGains) -> float:
    """Closed form of dV/dt under :func:`lyapunov_control` (unsaturated)."""
    return -gains.k_v * nv.rho**2 * math.cos(nv.alpha) ** 2 - gains.k_alpha * nv.alpha**2


# --- potential field ---------------------------------------------------------

def attractive_command(
    robot: Pose, goal: Point2, params: PotentialFieldParams, limits: VelocityLimits | None = None
) -> VelocityCommand:
    if math.hypot(goal.x - robot.x, goal.y - robot.y) < EPS_POS:
        return VelocityCommand(0.0, 0.0)
    theta_goal = bearing_to(robot, goal)
    v = -params.k_att * (
        (robot.x - goal.x) * math.cos(theta_goal) + (robot.y - goal.y) * math.sin(theta_goal)
    )
    omega = -params.k_att * normalize_angle(robot.theta - theta_goal)
    return saturate_clip(VelocityCommand(v, omega), limits)


def repulsive_magnitude(d_obs: float, params: PotentialFieldParams) -> float:
    """Repulsive speed of one obstacle; distances below ``d_min`` are
    clamped to ``d_min`` to bound the 1/d² growth."""
    if not d_obs > 0:
        raise ValueError("obstacle distance must be positive")
    d = max(d_obs, params.d_min)
    if d >= params.d0:
        return 0.0
    return 0.5 * params.k_rep * (1.0 / d - 1.0 / params.d0) / (d * d)


def frontal_readings(
    readings: Sequence[ObstacleReading],
    params: PotentialFieldParams,
    radius: float,
    half_angle: float | None = None,
) -> list[ObstacleReading]:
    half = params.sector_half_angle if half_angle is None else half_angle
    return [r for r in readings if r.distance < radius and -half < r.bearing < half]


def nearest_frontal(readings, params: PotentialFieldParams, radius: float):
    inside = frontal_readings(readings, params, radius)
    return min(inside, key=lambda r: (r.distance, r.bearing)) if inside else None


def avoidance_side(reading: ObstacleReading, heading_offset: float = 0.0) -> int:
    """+1 when the obstacle is front-right (escape to the left), -1 when it
    is front-left. Dead ahead counts as front-right.

    Right and left are judged against the robot heading rotated by
    ``heading_offset``. Passing ``theta - theta_goal`` judges them against
    the goal line, the same reference the escape heading is built from;
    the two coincide whenever the robot faces the goal.
    """
    return 1 if normalize_angle(reading.bearing + heading_offset) <= 0.0 else -1


def goal_line_offset(robot: Pose, goal: Point2) -> float:
    """``theta - theta_goal``, or 0 when the robot sits on the goal."""
    if math.hypot(goal.x - robot.x, goal.y - robot.y) < EPS_POS:
        return 0.0
    return normalize_angle(robot.theta - bearing_to(robot, goal))


def escape_command(
    robot: Pose,
    goal: Point2,
    readings: Sequence[ObstacleReading],
    params: PotentialFieldParams,
    side: int,
    limits: VelocityLimits | None = None,
) -> VelocityCommand:
    """Steer to the goal line rotated by the sector half-angle towards
    ``side`` (+1 left, -1 right), slowed by the repulsive magnitude of the
    nearest frontal reading inside ``d0``.

    Only the nearest reading counts: a dense scan returns many readings off
    one surface, and summing them would stall the robot in front of any
    wall-like obstacle.
    """
    if math.hypot(goal.x - robot.x, goal.y - robot.y) < EPS_POS:
        return VelocityCommand(0.0, 0.0)
    theta_goal = bearing_to(robot, goal)
    theta_obs = theta_goal + side * params.sector_half_angle
    v_att = -params.k_att * (
        (robot.x - goal.x) * math.cos(theta_goal) + (robot.y - goal.y) * math.sin(theta_goal)
    )
    nearest = nearest_frontal(readings, params, params.d0)
    v_rep = repulsive_magnitude(nearest.distance, params) if nearest is not None else 0.0
    omega = -params.k_att * normalize_angle(robot.theta - theta_obs)
    return saturate_clip(VelocityCommand(max(0.0, v_att - v_rep), omega), limits)


def avoidance_command(
    robot: Pose,
    goal: Point2,
    readings: Sequence[ObstacleReading],
    params: PotentialFieldParams,
    limits: VelocityLimits | None = None,
    side: int | None = None,
) -> VelocityCommand:
    """Attractive command in free space; otherwise :func:`escape_command`
    away from the nearest frontal obstacle inside ``d0``.

    ``side`` pins the escape direction; by default it follows the nearest
    reading's side of the goal line.
    """
    nearest = nearest_frontal(readings, params, params.d0)
    if nearest is None:
        return attractive_command(robot, goal, params, limits)
    if side is None:
        side = avoidance_side(nearest, goal_line_offset(robot, goal))
    return escape_command(robot, goal, readings, params, side, limits)


def guidance_mode(
    readings: Sequence[ObstacleReading],
    nav: NavVariables,
    params: PotentialFieldParams,
    previous: Mode = Mode.GOAL_SEEK,
) -> Mode:
    """Switch to AVOID when a frontal reading is inside ``d0``; leave it only
    once no reading is inside ``d0 + hysteresis`` within the sector widened
    by ``angular_hysteresis``. Obstacles farther away than the goal itself
    are ignored.

    The angular band matters as much as the distance band: a fixed-bearing
    sensor near the sector edge flickers in and out as the robot turns back
    towards the goal after an escape.
    """
    if not readings:
        return Mode.GOAL_SEEK
    if previous is Mode.AVOID:
        radius = params.d0 + params.hysteresis
        half = params.sector_half_angle + params.angular_hysteresis
    else:
        radius, half = params.d0, params.sector_half_angle
    relevant = [r for r in frontal_readings(readings, params, radius, half) if r.distance < nav.rho]
    return Mode.AVOID if relevant else Mode.GOAL_SEEK


class GuidanceController:
    """Mode-switching controller for one robot, called once every ``dt``.

    Holds only the current mode, the escape side chosen when the current
    avoidance episode began, and how long the exit condition has held.
    """

    def __init__(
        self,
        gains: LyapunovGains = LyapunovGains(),
        pf_params: PotentialFieldParams = PotentialFieldParams(),
        limits: VelocityLimits = VelocityLimits(),
        eps_goal: float = EPS_GOAL,
        heading_tolerance: float = math.radians(3.0),
        dt: float = 0.02,
    ):
        if not dt > 0:
            raise ValueError("dt must be positive")
        self.gains = gains
        self.pf_params = pf_params
        self.limits = limits
        self.eps_goal = eps_goal
        self.heading_tolerance = heading_tolerance
        self.dt = dt
        self.mode = Mode.GOAL_SEEK
        self.side: int | None = None
        self.clear_for = 0.0

    def command(self, pose: Pose, goal: Pose, readings: Sequence[ObstacleReading] = (), nav=None):
        """Return ``(command, nav_variables, mode)`` for the pose estimate.

        ``nav`` may carry the navigation variables already computed for this
        pose and goal.
        """
        if nav is None:
            nav = navigation_variables(pose, goal, self.eps_goal)
        if nav.rho < self.eps_goal:
            self.mode, self.side = Mode.TERMINAL, None
            err = normalize_angle(goal.theta - pose.theta)
            if abs(err) < self.heading_tolerance:
                return VelocityCommand(0.0, 0.0), nav, self.mode
            omega = self.gains.k_alpha * err
            return saturate_clip(VelocityCommand(0.0, omega), self.limits), nav, self.mode
        previous = self.mode if self.mode is not Mode.TERMINAL else Mode.GOAL_SEEK
        mode = guidance_mode(readings, nav, self.pf_params, previous)
        if previous is Mode.AVOID and mode is not Mode.AVOID:
            # debounce: stay in AVOID until the exit condition has persisted
            self.clear_for += self.dt
            if self.clear_for < self.pf_params.exit_dwell - 1e-9:
                mode = Mode.AVOID
        else:
            self.clear_for = 0.0
        self.mode = mode
        if self.mode is Mode.AVOID:
            if previous is not Mode.AVOID or self.side is None:
                nearest = nearest_frontal(readings, self.pf_params, self.pf_params.d0)
                self.side = avoidance_side(nearest, goal_line_offset(pose, goal.position))
            cmd = escape_command(pose, goal.position, readings, self.pf_params,
                                 self.side, self.limits)
        else:
            self.side = None
            cmd = lyapunov_control(nav, self.gains, self.limits)
        return cmd, nav, self.mode
