"""Closed-loop scenario engine.

Each step: the guidance controller acts on the *estimated* pose, the command
becomes wheel speeds, the true pose is integrated with noisy wheel speeds,
and the estimator predicts from the commanded speeds (the odometry reading)
and corrects with synthesized absolute measurements.

Randomness comes from numpy's PCG64 bit generator seeded through
``SeedSequence``; Gaussian draws use ``Generator.standard_normal``. For a given
numpy version the stream is identical on every platform, so a scenario seed
replays bit for bit.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Sequence

import numpy as np

from . import kernels
from .control import (
    GuidanceController,
    LyapunovGains,
    Mode,
    ObstacleReading,
    PotentialFieldParams,
    Source,
    VelocityCommand,
    VelocityLimits,
    lyapunov_value,
    navigation_variables,
)
from .ekf import (
    Channel,
    FilterDivergenceError,
    GaussianBelief,
    Landmark,
    Measurement,
    ProcessNoiseParams,
    correct,
    nees,
    predict,
)
from .geometry import Point2, Pose, normalize_angle
from .odometry import RobotGeometry, WheelSpeeds, wheel_speeds_for
from .scan import DEFAULT_BAND, ObstacleMap, ScanConfig, TiltMount, World, simulate_tilt_scan, slice_reduce

VARIANCE_FLOOR = 1e-12  # filter variance used for a channel simulated without noise
CSV_HEADER = "t,x_true,y_true,theta_true,x_est,y_est,theta_est,cov_trace,v,omega,rho,alpha,phi,V,mode"


class EstimatorKind(str, Enum):
    ODOMETRY_ONLY = "odometry"
    EKF = "ekf"


class Status(str, Enum):
    GOAL = "goal"
    T_MAX = "t_max"


@dataclass(frozen=True)
class NoiseSpec:
    wheel_delta: float = 0.01
    compass_sigma: float = 0.02
    lrf_range_sigma: float = 0.02
    lrf_bearing_sigma: float = 0.01
    camera_bearing_sigma: float = 0.02
    ultrasonic_sigma: float = 0.0

    def __post_init__(self):
        for name, value in vars(self).items():
            if not (math.isfinite(value) and value >= 0):
                raise ValueError(f"noise.{name} must be >= 0, got {value!r}")

    def sigma(self, channel: Channel) -> float:
        return {
            Channel.COMPASS: self.compass_sigma,
            Channel.LRF_RANGE: self.lrf_range_sigma,
            Channel.LRF_BEARING: self.lrf_bearing_sigma,
            Channel.CAMERA_BEARING: self.camera_bearing_sigma,
        }[channel]

    def noiseless(self) -> "NoiseSpec":
        return NoiseSpec(0.0, 0.0, 0.0, 0.0, 0.0, 0.0)


@dataclass(frozen=True)
class RangeSensor:
    max_range: float
    fov: float


@dataclass(frozen=True)
class UltrasonicRing:
    """Fixed-bearing range sensors on the body perimeter. Each sensor is
    sampled with ``rays_per_sensor`` rays across its beam width and reports
    the shortest return at its nominal bearing."""

    bearings: tuple[float, ...] = tuple(math.radians(b) for b in (-90, -50, -30, -10, 10, 30, 50, 90))
    max_range: float = 2.0
    height: float = 0.3
    beam_width: float = math.radians(15.0)
    rays_per_sensor: int = 3


@dataclass(frozen=True)
class MapLaser:
    """Virtual laser over the stored 2D map, seen from the estimated pose."""

    max_range: float = 2.0
    fov: float = math.radians(180.0)
    n_bins: int = 36


@dataclass(frozen=True)
class SensorSuite:
    lrf: RangeSensor = RangeSensor(8.0, math.radians(180.0))
    camera: RangeSensor = RangeSensor(5.0, math.radians(60.0))
    ultrasonic: UltrasonicRing | None = UltrasonicRing()
    map_laser: MapLaser = MapLaser()


@dataclass(frozen=True)
class EstimatorSpec:
    kind: EstimatorKind = EstimatorKind.EKF
    channels: tuple[Channel, ...] = (Channel.COMPASS, Channel.LRF_RANGE, Channel.LRF_BEARING)
    initial_sigma_xy: float = 1e-3
    initial_sigma_theta: float = 1e-3
    joseph: bool = True
    gate: float | None = None
    # wheel-speed sigma (rad/s) the filter adds for process-model error, so
    # the covariance cannot collapse when the wheel noise is zero
    model_sigma: float = 0.01

    @property
    def label(self) -> str:
        if self.kind is EstimatorKind.ODOMETRY_ONLY:
            return "odometry"
        return "ekf(" + "+".join(c.value for c in self.channels) + ")"


@dataclass(frozen=True)
class MappingSpec:
    scan_pose: Pose = Pose(0.0, 0.0, 0.0)
    mount: TiltMount = TiltMount()
    config: ScanConfig = ScanConfig()
    band: tuple[float, float] = DEFAULT_BAND


@dataclass(frozen=True)
class GoalTolerance:
    rho: float = 0.05
    alpha: float = math.radians(3.0)
    phi: float = math.radians(5.0)
    waypoint_radius: float = 0.15


@dataclass(frozen=True)
class Scenario:
    start: Pose
    goals: tuple[Pose, ...]
    name: str = "scenario"
    world: World = World()
    landmarks: tuple[Landmark, ...] = ()
    geometry: RobotGeometry = RobotGeometry()
    gains: LyapunovGains = LyapunovGains()
    pf_params: PotentialFieldParams = PotentialFieldParams()
    limits: VelocityLimits = VelocityLimits()
    noise: NoiseSpec = NoiseSpec()
    sensors: SensorSuite = SensorSuite()
    estimator: EstimatorSpec = EstimatorSpec()
    mapping: MappingSpec | None = None
    tolerance: GoalTolerance = GoalTolerance()
    dt: float = 0.02
    t_max: float = 60.0
    seed: int = 1

    def __post_init__(self):
        if not (0 < self.dt <= 0.1):
            raise ValueError(f"dt must be in (0, 0.1], got {self.dt!r}")
        if not self.t_max > 0:
            raise ValueError("t_max must be positive")
        if not self.goals:
            raise ValueError("at least one goal pose is required")
        if int(self.seed) != self.seed or self.seed < 0:
            raise ValueError("seed must be a non-negative integer")


@dataclass
class StepRecord:
    t: float
    true_pose: Pose
    est_pose: Pose
    cov_trace: float
    v: float
    omega: float
    rho: float
    alpha: float
    phi: float
    V: float
    mode: str
    nees: float = math.nan
    cov: tuple[float, ...] = field(default=(), repr=False)  # row-major 3x3, not exported to CSV

    def csv_row(self) -> str:
        values = (
            self.t, *self.true_pose.as_tuple(), *self.est_pose.as_tuple(), self.cov_trace,
            self.v, self.omega, self.rho, self.alpha, self.phi, self.V,
        )
        return ",".join(repr(float(v)) for v in values) + "," + self.mode


@dataclass
class TrajectoryLog:
    records: list[StepRecord] = field(default_factory=list)
    status: Status | None = None
    obstacle_map: ObstacleMap | None = None
    encounters: list[str] = field(default_factory=list)
    min_clearance: float = math.inf

    def append(self, rec: StepRecord) -> None:
        if self.records and not rec.t > self.records[-1].t:
            raise ValueError("log times must be strictly increasing")
        self.records.append(rec)

    def __len__(self) -> int:
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records], dtype=float)

    def to_csv(self) -> str:
        return CSV_HEADER + "\n" + "".join(r.csv_row() + "\n" for r in self.records)

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(self.to_csv())


class ScenarioDivergence(RuntimeError):
    """The estimator diverged; ``log`` holds the steps completed so far."""

    def __init__(self, message: str, log: TrajectoryLog):
        super().__init__(message)
        self.log = log


# --- truth and sensors -------------------------------------------------------

MAX_RK4_STEP = 0.05  # s; longer intervals are split into equal substeps


def integrate_truth(p: Pose, cmd: VelocityCommand, dt: float) -> Pose:
    """Classical fourth-order Runge-Kutta integration of the unicycle model
    with (v, ω) held over ``dt``."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    n = math.ceil(dt / MAX_RK4_STEP - 1e-9)
    if n > 1:
        for _ in range(n):
            p = _rk4_step(p, cmd, dt / n)
        return p
    return _rk4_step(p, cmd, dt)


def _rk4_step(p: Pose, cmd: VelocityCommand, dt: float) -> Pose:
    return Pose(*_rk4_xyt(p.x, p.y, p.theta, cmd.v, cmd.omega, dt))


def _rk4_xyt(px: float, py: float, th: float, v: float, w: float, dt: float):
    c1, s1 = math.cos(th), math.sin(th)
    c2, s2 = math.cos(th + 0.5 * dt * w), math.sin(th + 0.5 * dt * w)
    c4, s4 = math.cos(th + dt * w), math.sin(th + dt * w)
    # stages 2 and 3 share the same heading because omega is constant
    x = px + dt / 6.0 * (v * c1 + 2 * (v * c2) + 2 * (v * c2) + v * c4)
    y = py + dt / 6.0 * (v * s1 + 2 * (v * s2) + 2 * (v * s2) + v * s4)
    return x, y, normalize_angle(th + dt * w)


def _visible(pose: Pose, lx: float, ly: float, sensor: RangeSensor):
    dx = lx - pose.x
    dy = ly - pose.y
    r = math.hypot(dx, dy)
    if r > sensor.max_range or r < 1e-9:
        return None
    b = normalize_angle(math.atan2(dy, dx) - pose.theta)
    if abs(b) > sensor.fov / 2.0:
        return None
    return r, b


def synthesize_measurements(
    true_pose: Pose,
    landmarks: Sequence[Landmark],
    noise: NoiseSpec,
    rng: np.random.Generator,
    channels: Sequence[Channel] = (Channel.COMPASS, Channel.LRF_RANGE, Channel.LRF_BEARING),
    sensors: SensorSuite = SensorSuite(),
) -> list[Measurement]:
    """True measurement plus a Gaussian draw for each enabled channel.

    Landmark channels are emitted only for landmarks inside the sensor's
    range and field of view. One standard-normal draw is consumed per
    emitted measurement even when its sigma is zero, so the random stream
    does not depend on the noise levels.
    """
    meta: list = []
    rows = _MeasurementSource(landmarks, noise, channels, sensors).draw(true_pose, rng, meta)
    return [Measurement(ch, row[1], row[2], lm_id) for row, (ch, lm_id) in zip(rows, meta)]


_KERNEL_KIND = {
    Channel.COMPASS: 0,
    Channel.LRF_RANGE: 1,
    Channel.LRF_BEARING: 2,
    Channel.CAMERA_BEARING: 2,
}


class _MeasurementSource:
    """Per-scenario measurement synthesizer. Channel flags, sigmas and
    landmark coordinates are resolved once instead of every step.

    :meth:`draw` returns kernel rows ``(kind, value, variance, lx, ly)``;
    when ``meta`` is a list, ``(channel, landmark_id)`` is appended to it
    for every row.
    """

    def __init__(self, landmarks, noise: NoiseSpec, channels, sensors: SensorSuite):
        channels = [Channel(c) for c in channels]
        self.landmarks = [(lm, lm.position.x, lm.position.y) for lm in landmarks]
        self.lrf = sensors.lrf
        self.camera = sensors.camera
        self.compass = Channel.COMPASS in channels
        self.use_range = Channel.LRF_RANGE in channels
        self.use_lrf_bearing = Channel.LRF_BEARING in channels
        self.use_lrf = self.use_range or self.use_lrf_bearing
        self.use_camera = Channel.CAMERA_BEARING in channels
        self.sigma = {c: noise.sigma(c) for c in _KERNEL_KIND}
        self.var = {c: max(v * v, VARIANCE_FLOOR) for c, v in self.sigma.items()}

    def draw(self, true_pose: Pose, rng: np.random.Generator, meta: list | None = None) -> list:
        rows = []
        sigma, var = self.sigma, self.var
        if self.compass:
            value = normalize_angle(true_pose.theta + sigma[Channel.COMPASS] * rng.standard_normal())
            rows.append((0, value, var[Channel.COMPASS], 0.0, 0.0))
            if meta is not None:
                meta.append((Channel.COMPASS, None))
        for lm, lx, ly in self.landmarks:
            if self.use_lrf:
                seen = _visible(true_pose, lx, ly, self.lrf)
                if seen is not None:
                    if self.use_range:
                        value = seen[0] + sigma[Channel.LRF_RANGE] * rng.standard_normal()
                        rows.append((1, value, var[Channel.LRF_RANGE], lx, ly))
                        if meta is not None:
                            meta.append((Channel.LRF_RANGE, lm.id))
                    if self.use_lrf_bearing:
                        value = normalize_angle(seen[1] + sigma[Channel.LRF_BEARING] * rng.standard_normal())
                        rows.append((2, value, var[Channel.LRF_BEARING], lx, ly))
                        if meta is not None:
                            meta.append((Channel.LRF_BEARING, lm.id))
            if self.use_camera:
                seen = _visible(true_pose, lx, ly, self.camera)
                if seen is not None:
                    value = normalize_angle(seen[1] + sigma[Channel.CAMERA_BEARING] * rng.standard_normal())
                    rows.append((2, value, var[Channel.CAMERA_BEARING], lx, ly))
                    if meta is not None:
                        meta.append((Channel.CAMERA_BEARING, lm.id))
        return rows


def ultrasonic_readings(
    true_pose: Pose,
    world: World,
    ring: UltrasonicRing,
    body_radius: float,
    rng: np.random.Generator | None = None,
    sigma: float = 0.0,
    arrays=None,
) -> list[ObstacleReading]:
    boxes, cyls = arrays if arrays is not None else world.arrays()
    if boxes.size == 0 and cyls.size == 0:
        return []
    n_rays = ring.rays_per_sensor
    offsets = np.linspace(-ring.beam_width / 2, ring.beam_width / 2, n_rays) if n_rays > 1 else np.zeros(1)
    bearings = np.asarray(ring.bearings)
    mount = true_pose.theta + bearings
    origins = np.column_stack([
        true_pose.x + body_radius * np.cos(mount),
        true_pose.y + body_radius * np.sin(mount),
        np.full(bearings.size, ring.height),
    ])
    ray_angles = (mount[:, None] + offsets[None, :]).ravel()
    dirs = np.column_stack([np.cos(ray_angles), np.sin(ray_angles), np.zeros(ray_angles.size)])
    _, ranges = kernels.cast_rays(np.repeat(origins, n_rays, axis=0), dirs, boxes, cyls, ring.max_range)
    nearest = ranges.reshape(bearings.size, n_rays).min(axis=1)
    readings = []
    for b, d in zip(bearings.tolist(), nearest.tolist()):
        if rng is not None and sigma > 0:
            d = d + sigma * rng.standard_normal()
        if d <= ring.max_range:
            readings.append(ObstacleReading(max(d, 1e-3), b, Source.ULTRASONIC))
    return readings


def map_readings(est_pose: Pose, map_points: np.ndarray, laser: MapLaser, body_radius: float):
    if map_points.size == 0:
        return []
    dist, bearing = kernels.sector_scan(
        map_points, est_pose.x, est_pose.y, est_pose.theta,
        laser.max_range, body_radius, laser.n_bins, laser.fov / 2.0,
    )
    return [
        ObstacleReading(max(d, 1e-3), b, Source.LASER)
        for d, b in zip(dist.tolist(), bearing.tolist())
        if math.isfinite(d)
    ]


def build_map(s: Scenario) -> ObstacleMap | None:
    if s.mapping is None:
        return None
    frames = simulate_tilt_scan(s.world.mapped(), s.mapping.mount, s.mapping.config, s.mapping.scan_pose)
    return slice_reduce(frames, s.mapping.band)


# --- closed loop -----------------------------------------------------------

def _goal_reached(nav, est: Pose, goal: Pose, tol: GoalTolerance, eps_goal: float) -> bool:
    if nav.rho >= tol.rho:
        return False
    if nav.rho < eps_goal:
        return abs(normalize_angle(est.theta - goal.theta)) < tol.alpha
    return abs(nav.alpha) < tol.alpha and abs(nav.phi) < tol.phi


_KERNEL_FAILURE = {
    1: "innovation covariance is ill-conditioned",
    2: "state covariance lost positive semi-definiteness",
    3: "robot position coincides with a landmark",
}


class _KernelFilter:
    """Filter state held in a flat buffer and advanced by the fused kernels.

    Same mathematics as :func:`ekf.predict` / :func:`ekf.correct`; used on
    the simulation hot path, where building validated beliefs every step
    dominates the run time.
    """

    def __init__(self, belief: GaussianBelief, geom: RobotGeometry, params: ProcessNoiseParams, joseph: bool):
        self.buf = np.array([*belief.mean.as_tuple(), *belief.cov.ravel()], dtype=float)
        self.geom = geom
        self.delta = params.delta
        self.floor = params.floor
        self.joseph = joseph

    @property
    def mean(self) -> Pose:
        b = self.buf
        return Pose(float(b[0]), float(b[1]), float(b[2]))

    def cov_trace(self) -> float:
        b = self.buf
        return float(b[3] + b[7] + b[11])

    def covariance(self) -> tuple[float, ...]:
        return tuple(self.buf[3:].tolist())

    def nees(self, truth: Pose) -> float:
        return float(kernels.nees3(self.buf, truth.x, truth.y, truth.theta))

    def record_fields(self, truth: Pose):
        """(trace, NEES, row-major covariance) with a single buffer read."""
        b = self.buf.tolist()
        return b[3] + b[7] + b[11], self.nees(truth), tuple(b[3:])

    def _check(self, status: int) -> None:
        if status:
            raise FilterDivergenceError(_KERNEL_FAILURE[status])

    def predict(self, u: WheelSpeeds, dt: float) -> None:
        g = self.geom
        self._check(kernels.ekf_predict(self.buf, u.omega_R, u.omega_L, dt, g.wheel_radius, g.wheelbase,
                                         self.delta, self.floor))

    def correct(self, source: _MeasurementSource, truth: Pose, rng) -> None:
        rows = source.draw(truth, rng)
        if rows:
            self._check(kernels.ekf_correct(self.buf, rows, self.joseph))


class _ReferenceFilter:
    """Belief advanced by the validated reference functions (needed for gating)."""

    def __init__(self, belief, geom, params, joseph, gate, landmarks):
        self.belief = belief
        self.geom = geom
        self.params = params
        self.joseph = joseph
        self.gate = gate
        self.landmarks = landmarks

    @property
    def mean(self) -> Pose:
        return self.belief.mean

    def cov_trace(self) -> float:
        return float(np.trace(self.belief.cov))

    def covariance(self) -> tuple[float, ...]:
        return tuple(self.belief.cov.ravel().tolist())

    def nees(self, truth: Pose) -> float:
        return nees(self.belief, truth)

    def record_fields(self, truth: Pose):
        return self.cov_trace(), self.nees(truth), self.covariance()

    def predict(self, u, dt) -> None:
        self.belief = predict(self.belief, u, dt, self.geom, self.params)

    def correct(self, source: _MeasurementSource, truth: Pose, rng) -> None:
        meta: list = []
        rows = source.draw(truth, rng, meta)
        z = [Measurement(ch, row[1], row[2], lm_id) for row, (ch, lm_id) in zip(rows, meta)]
        self.belief = correct(self.belief, z, self.landmarks, joseph=self.joseph, gate=self.gate)


def run_scenario(
    s: Scenario,
    controller: GuidanceController | None = None,
    on_step: Callable[[StepRecord], None] | None = None,
) -> TrajectoryLog:
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(s.seed))))
    geom = s.geometry
    params = ProcessNoiseParams(s.noise.wheel_delta, s.estimator.model_sigma ** 2)
    est_spec = s.estimator
    if controller is None:
        controller = GuidanceController(s.gains, s.pf_params, s.limits, dt=s.dt)
    log = TrajectoryLog()
    obstacle_map = build_map(s)
    log.obstacle_map = obstacle_map
    map_points = obstacle_map.as_array() if obstacle_map is not None else np.zeros((0, 2))
    world_arrays = s.world.arrays()
    landmark_index = {lm.id: lm for lm in s.landmarks}
    fuse = est_spec.kind is EstimatorKind.EKF and est_spec.channels
    source = _MeasurementSource(s.landmarks, s.noise, est_spec.channels, s.sensors)

    truth = s.start
    belief = GaussianBelief.from_sigmas(s.start, est_spec.initial_sigma_xy, est_spec.initial_sigma_theta)
    if est_spec.gate is None:
        filt = _KernelFilter(belief, geom, params, est_spec.joseph)
    else:
        filt = _ReferenceFilter(belief, geom, params, est_spec.joseph, est_spec.gate, landmark_index)
    goal_idx = 0
    dt = s.dt
    n_steps = int(math.floor(s.t_max / dt + 1e-9))
    prev_mode = Mode.GOAL_SEEK
    # loop invariants hoisted out of the per-step path
    goals, last_goal = s.goals, len(s.goals) - 1
    tolerance, gains, eps_goal = s.tolerance, s.gains, controller.eps_goal
    ring, laser, us_sigma = s.sensors.ultrasonic, s.sensors.map_laser, s.noise.ultrasonic_sigma
    clearance_at, height = s.world.clearance, geom.body_height
    use_map = map_points.size > 0
    sd = math.sqrt(s.noise.wheel_delta)
    R, L = geom.wheel_radius, geom.wheelbase
    normal = rng.standard_normal
    append = log.append
    zero = VelocityCommand(0.0, 0.0)
    for k in range(n_steps + 1):
        t = k * dt
        est = filt.mean
        goal = goals[goal_idx]
        final = goal_idx == last_goal
        nav = navigation_variables(est, goal, eps_goal)
        if not final and nav.rho < tolerance.waypoint_radius:
            goal_idx += 1
            goal = goals[goal_idx]
            final = goal_idx == last_goal
            nav = navigation_variables(est, goal, eps_goal)
        done = final and _goal_reached(nav, est, goal, tolerance, eps_goal)

        clearance, nearest_name = clearance_at(truth.x, truth.y, height)
        if clearance < log.min_clearance:
            log.min_clearance = clearance
        if done or k == n_steps:
            cmd, mode = zero, controller.mode
        else:
            readings = []
            if ring is not None:
                readings += ultrasonic_readings(truth, s.world, ring, geom.body_radius,
                                                rng, us_sigma, world_arrays)
            if use_map:
                readings += map_readings(est, map_points, laser, geom.body_radius)
            cmd, nav, mode = controller.command(est, goal, readings, nav)
            if mode is Mode.AVOID and prev_mode is not Mode.AVOID:
                log.encounters.append(nearest_name)
        trace, step_nees, cov = filt.record_fields(truth)
        rec = StepRecord(
            t, truth, est, trace, cmd.v, cmd.omega,
            nav.rho, nav.alpha, nav.phi, lyapunov_value(nav, gains), mode.value,
            step_nees, cov,
        )
        append(rec)
        if on_step is not None:
            on_step(rec)
        if done:
            log.status = Status.GOAL
            return log
        if k == n_steps:
            break
        prev_mode = mode

        u = wheel_speeds_for(cmd.v, cmd.omega, geom)
        # actual wheel speeds: standard deviation proportional to commanded speed
        w_R = u.omega_R + sd * abs(u.omega_R) * normal()
        w_L = u.omega_L + sd * abs(u.omega_L) * normal()
        v_true, w_true = R * (w_R + w_L) / 2.0, R * (w_R - w_L) / L
        if dt <= MAX_RK4_STEP:
            truth = Pose(*_rk4_xyt(truth.x, truth.y, truth.theta, v_true, w_true, dt))
        else:
            truth = integrate_truth(truth, VelocityCommand(v_true, w_true), dt)
        try:
            filt.predict(u, dt)
            if fuse:
                filt.correct(source, truth, rng)
        except FilterDivergenceError as exc:
            log.status = None
            raise ScenarioDivergence(str(exc), log) from exc
    log.status = Status.T_MAX
    return log


# --- Monte Carlo -------------------------------------------------------------

def derived_seed(seed: int, run_index: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(run_index)]).generate_state(1, np.uint32)[0])


@dataclass(frozen=True)
class EstimatorSummary:
    label: str
    n_runs: int
    final_position_rmse: float
    trajectory_rmse: float
    mean_nees: float
    goal_rate: float


@dataclass(frozen=True)
class RunResult:
    """Per-run error statistics used by :func:`monte_carlo`."""

    index: int
    seed: int
    final_sq_error: float
    traj_sq_errors: tuple[float, ...]
    nees: tuple[float, ...]
    reached_goal: bool


def run_result(log: TrajectoryLog, index: int, seed: int) -> RunResult:
    sq = tuple((r.true_pose.x - r.est_pose.x) ** 2 + (r.true_pose.y - r.est_pose.y) ** 2 for r in log.records)
    return RunResult(index, seed, sq[-1], sq, tuple(r.nees for r in log.records), log.status is Status.GOAL)


def summarize(label: str, results: Sequence[RunResult]) -> EstimatorSummary:
    """Aggregate per-run results. Runs are sorted by index first, so the
    summary does not depend on the order in which runs finished."""
    results = sorted(results, key=lambda r: r.index)
    n = len(results)
    traj = [e for r in results for e in r.traj_sq_errors]
    nees_all = [e for r in results for e in r.nees]
    return EstimatorSummary(
        label=label,
        n_runs=n,
        final_position_rmse=math.sqrt(math.fsum(r.final_sq_error for r in results) / n),
        trajectory_rmse=math.sqrt(math.fsum(traj) / len(traj)),
        mean_nees=math.fsum(nees_all) / len(nees_all),
        goal_rate=sum(r.reached_goal for r in results) / n,
    )


def monte_carlo(
    s: Scenario, n_runs: int, configs: Sequence[EstimatorSpec] | None = None
) -> list[EstimatorSummary]:
    """Run each estimator configuration ``n_runs`` times on seeds derived
    from ``s.seed`` (the same seeds for every configuration)."""
    if n_runs < 1:
        raise ValueError("n_runs must be >= 1")
    if configs is None:
        configs = default_configs(s)
    summaries = []
    for cfg in configs:
        results = []
        for i in range(n_runs):
            seed = derived_seed(s.seed, i)
            results.append(run_result(run_scenario(replace(s, estimator=cfg, seed=seed)), i, seed))
        summaries.append(summarize(cfg.label, results))
    return summaries


def default_configs(s: Scenario) -> list[EstimatorSpec]:
    ekf = s.estimator if s.estimator.kind is EstimatorKind.EKF else replace(s.estimator, kind=EstimatorKind.EKF)
    return [replace(ekf, kind=EstimatorKind.ODOMETRY_ONLY), ekf]


def noiseless(s: Scenario) -> Scenario:
    return replace(s, noise=s.noise.noiseless())
