"""Extended Kalman filter over the planar pose.

Odometry drives the prediction step only. The correction step fuses absolute
measurements: compass heading, laser range and bearing to known landmarks,
and camera bearing to known landmarks. The wheel-speed channels exist so the
full measurement-noise layout can be assembled, but :func:`correct` refuses
them because odometry is already consumed by :func:`predict`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Mapping, Sequence

import numpy as np

from .geometry import EPS_POS, Point2, Pose, UndefinedBearingError, normalize_angle
from .odometry import RobotGeometry, WheelSpeeds, pose_update, process_jacobians, wheel_increment

SYM_TOL = 1e-9
PSD_TOL = 1e-12
MAX_CONDITION = 1e12
CHI2_1DOF_99 = 6.634896601021214


class FilterDivergenceError(RuntimeError):
    """Covariance lost symmetry/positive semidefiniteness or became singular."""


class Channel(str, Enum):
    WHEEL_SPEED_L = "wheel_speed_left"
    WHEEL_SPEED_R = "wheel_speed_right"
    COMPASS = "compass_heading"
    LRF_RANGE = "lrf_range"
    LRF_BEARING = "lrf_bearing"
    CAMERA_BEARING = "camera_bearing"

    @property
    def needs_landmark(self) -> bool:
        return self in (Channel.LRF_RANGE, Channel.LRF_BEARING, Channel.CAMERA_BEARING)

    @property
    def is_angular(self) -> bool:
        return self in (Channel.COMPASS, Channel.LRF_BEARING, Channel.CAMERA_BEARING)


# Diagonal layout of the measurement-noise matrix as published for this robot.
PAPER_CHANNEL_ORDER = (
    Channel.WHEEL_SPEED_L,
    Channel.WHEEL_SPEED_R,
    Channel.COMPASS,
    Channel.LRF_RANGE,
    Channel.LRF_BEARING,
    Channel.CAMERA_BEARING,
)


def check_covariance(cov: np.ndarray) -> None:
    if cov.shape != (3, 3) or not np.all(np.isfinite(cov)):
        raise FilterDivergenceError("covariance must be a finite 3x3 matrix")
    if np.max(np.abs(cov - cov.T)) > SYM_TOL:
        raise FilterDivergenceError("covariance is not symmetric")
    min_eig = np.linalg.eigvalsh(cov)[0]
    if min_eig < -PSD_TOL:
        raise FilterDivergenceError(f"covariance not PSD (min eigenvalue {min_eig:.3e})")


@dataclass(frozen=True)
class GaussianBelief:
    mean: Pose
    cov: np.ndarray

    def __post_init__(self):
        cov = np.array(self.cov, dtype=float)
        check_covariance(cov)
        cov.setflags(write=False)
        object.__setattr__(self, "cov", cov)

    @classmethod
    def from_sigmas(cls, mean: Pose, sigma_xy: float, sigma_theta: float) -> "GaussianBelief":
        return cls(mean, np.diag([sigma_xy**2, sigma_xy**2, sigma_theta**2]))

    @property
    def vector(self) -> np.ndarray:
        return np.array(self.mean.as_tuple())


@dataclass(frozen=True)
class ProcessNoiseParams:
    """``delta`` scales the wheel-speed variance with speed squared.
    ``floor`` is a constant wheel-speed variance ((rad/s)^2) added on top; it
    accounts for process-model error and is zero unless asked for."""

    delta: float = 0.01
    floor: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.delta) and self.delta >= 0):
            raise ValueError(f"delta must be >= 0, got {self.delta!r}")
        if not (math.isfinite(self.floor) and self.floor >= 0):
            raise ValueError(f"floor must be >= 0, got {self.floor!r}")


@dataclass(frozen=True)
class Landmark:
    id: str
    position: Point2


@dataclass(frozen=True)
class Measurement:
    channel: Channel
    value: float
    variance: float
    landmark_id: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "channel", Channel(self.channel))
        if not (math.isfinite(self.variance) and self.variance > 0):
            raise ValueError(f"measurement variance must be positive, got {self.variance!r}")
        if not math.isfinite(self.value):
            raise ValueError("measurement value must be finite")
        if self.channel.needs_landmark and self.landmark_id is None:
            raise ValueError(f"{self.channel.value} measurement requires a landmark_id")


def process_noise_Q(u: WheelSpeeds, params: ProcessNoiseParams) -> np.ndarray:
    """Wheel-speed noise covariance, ordered (right, left); standard deviation
    grows in proportion to each wheel's speed."""
    return np.diag([params.delta * u.omega_R**2 + params.floor, params.delta * u.omega_L**2 + params.floor])


def symmetrize(P: np.ndarray) -> np.ndarray:
    return (P + P.T) / 2.0


def predict(
    belief: GaussianBelief,
    u: WheelSpeeds,
    dt: float,
    geom: RobotGeometry,
    params: ProcessNoiseParams,
) -> GaussianBelief:
    inc = wheel_increment(u, dt, geom)
    A, W = process_jacobians(belief.mean, inc, geom)
    # Q is over wheel speeds; W is over wheel displacements (ds = dt*R*omega)
    Q_disp = (dt * geom.wheel_radius) ** 2 * process_noise_Q(u, params)
    P = A @ belief.cov @ A.T + W @ Q_disp @ W.T
    return GaussianBelief(pose_update(belief.mean, inc), symmetrize(P))


def measurement_predict(mean: Pose, channel: Channel, landmark: Landmark | None = None):
    """Expected measurement ``h(x)`` and its 1x3 Jacobian row."""
    channel = Channel(channel)
    if channel is Channel.COMPASS:
        return mean.theta, np.array([0.0, 0.0, 1.0])
    if not channel.needs_landmark:
        raise ValueError(f"{channel.value} is not an absolute pose measurement")
    if landmark is None:
        raise ValueError(f"{channel.value} requires a landmark")
    dx = landmark.position.x - mean.x
    dy = landmark.position.y - mean.y
    r2 = dx * dx + dy * dy
    r = math.sqrt(r2)
    if r < EPS_POS:
        raise UndefinedBearingError(f"robot coincides with landmark {landmark.id!r}")
    if channel is Channel.LRF_RANGE:
        return r, np.array([-dx / r, -dy / r, 0.0])
    h = normalize_angle(math.atan2(dy, dx) - mean.theta)
    return h, np.array([dy / r2, -dx / r2, -1.0])


def build_R(measurements: Sequence[Measurement]) -> np.ndarray:
    variances = []
    for m in measurements:
        if not m.variance > 0:
            raise ValueError(f"nonpositive variance for {m.channel.value}")
        variances.append(m.variance)
    return np.diag(variances)


def _landmark_index(landmarks) -> Mapping[str, Landmark]:
    if landmarks is None:
        return {}
    if isinstance(landmarks, Mapping):
        return landmarks
    return {lm.id: lm for lm in landmarks}


def innovations(belief: GaussianBelief, measurements: Sequence[Measurement], landmarks):
    """Stacked residuals ``z - h(x)`` (angles wrapped) and the Jacobian ``H``."""
    index = _landmark_index(landmarks)
    residual = np.empty(len(measurements))
    H = np.empty((len(measurements), 3))
    for i, m in enumerate(measurements):
        if m.channel in (Channel.WHEEL_SPEED_L, Channel.WHEEL_SPEED_R):
            raise ValueError("wheel-speed channels enter through predict(), not correct()")
        landmark = None
        if m.channel.needs_landmark:
            try:
                landmark = index[m.landmark_id]
            except KeyError:
                raise KeyError(f"unknown landmark_id {m.landmark_id!r}") from None
        h, row = measurement_predict(belief.mean, m.channel, landmark)
        r = m.value - h
        residual[i] = normalize_angle(r) if m.channel.is_angular else r
        H[i] = row
    return residual, H


def correct(
    belief: GaussianBelief,
    measurements: Sequence[Measurement],
    landmarks: Iterable[Landmark] | Mapping[str, Landmark] | None = None,
    *,
    joseph: bool = True,
    gate: float | None = None,
) -> GaussianBelief:
    """Fuse a batch of measurements in one stacked update.

    ``joseph=False`` uses the short ``(I - KH) P`` covariance form; the
    default Joseph form gives the same result on well-conditioned problems
    but cannot lose positive semidefiniteness through rounding.
    ``gate`` is a per-channel chi-square threshold (e.g. ``CHI2_1DOF_99``);
    measurements whose normalized innovation exceeds it are dropped.
    """
    if not measurements:
        return belief
    residual, H = innovations(belief, measurements, landmarks)
    R = build_R(measurements)
    P = belief.cov
    S = H @ P @ H.T + R
    if gate is not None:
        keep = residual**2 / np.diag(S) <= gate
        if not keep.all():
            residual, H = residual[keep], H[keep]
            R = R[np.ix_(keep, keep)]
            if residual.size == 0:
                return belief
            S = H @ P @ H.T + R
    if np.linalg.cond(S) > MAX_CONDITION:
        raise FilterDivergenceError("innovation covariance is singular or ill-conditioned")
    K = np.linalg.solve(S, H @ P).T  # P H^T S^-1, with P and S symmetric
    dx = K @ residual
    mean = Pose(
        belief.mean.x + dx[0],
        belief.mean.y + dx[1],
        normalize_angle(belief.mean.theta + dx[2]),
    )
    I_KH = np.eye(3) - K @ H
    if joseph:
        P_post = I_KH @ P @ I_KH.T + K @ R @ K.T
    else:
        P_post = I_KH @ P
    return GaussianBelief(mean, symmetrize(P_post))


def nees(belief: GaussianBelief, truth: Pose) -> float:
    """Normalized estimation error squared of ``belief`` against ``truth``."""
    e = np.array([
        truth.x - belief.mean.x,
        truth.y - belief.mean.y,
        normalize_angle(truth.theta - belief.mean.theta),
    ])
    return float(e @ np.linalg.solve(belief.cov, e))
