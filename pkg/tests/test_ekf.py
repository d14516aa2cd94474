import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from navstack import _kernels_py, kernels
from navstack.ekf import (
    CHI2_1DOF_99,
    PAPER_CHANNEL_ORDER,
    Channel,
    FilterDivergenceError,
    GaussianBelief,
    Landmark,
    Measurement,
    ProcessNoiseParams,
    build_R,
    correct,
    measurement_predict,
    nees,
    predict,
    process_noise_Q,
)
from navstack.geometry import Point2, Pose, UndefinedBearingError
from navstack.odometry import RobotGeometry, WheelSpeeds, process_jacobians, wheel_increment

from oracles import central_difference, scalar_kalman

GEOM = RobotGeometry()
LM = Landmark("L0", Point2(3.0, 4.0))
LANDMARKS = [LM, Landmark("L1", Point2(-2.0, 5.0))]

coord = st.floats(min_value=-5, max_value=5, allow_nan=False)
heading = st.floats(min_value=-3.1, max_value=3.1, allow_nan=False)
wheel = st.floats(min_value=-10, max_value=10, allow_nan=False)


@st.composite
def covariances(draw, scale=1e-2):
    a = np.array(draw(st.lists(st.floats(min_value=-1, max_value=1), min_size=9, max_size=9))).reshape(3, 3)
    jitter = draw(st.floats(min_value=1e-8, max_value=1.0))
    return scale * (a @ a.T + jitter * np.eye(3))


@st.composite
def beliefs(draw):
    return GaussianBelief(Pose(draw(coord), draw(coord), draw(heading)), draw(covariances()))


def assert_valid(b: GaussianBelief):
    assert np.max(np.abs(b.cov - b.cov.T)) <= 1e-9
    assert np.linalg.eigvalsh(b.cov)[0] >= -1e-12
    assert -math.pi < b.mean.theta <= math.pi


# --- process model -------------------------------------------------------------

@pytest.mark.parametrize(
    "delta, wr, wl, expected",
    [(0.01, 2.0, 1.0, [0.04, 0.01]), (0.01, 0.0, 0.0, [0.0, 0.0]), (0.0, 3.0, -2.0, [0.0, 0.0])],
)
def test_process_noise_Q_examples(delta, wr, wl, expected):
    Q = process_noise_Q(WheelSpeeds(omega_L=wl, omega_R=wr), ProcessNoiseParams(delta))
    assert np.allclose(Q, np.diag(expected), atol=1e-15)


def test_process_noise_floor_is_additive():
    Q = process_noise_Q(WheelSpeeds(1.0, 2.0), ProcessNoiseParams(0.01, floor=1e-4))
    assert np.allclose(Q, np.diag([0.04 + 1e-4, 0.01 + 1e-4]), atol=1e-15)
    with pytest.raises(ValueError):
        ProcessNoiseParams(-0.1)


def test_predict_at_rest_is_identity():
    b = GaussianBelief(Pose(1, 2, 0.3), np.diag([0.1, 0.2, 0.3]))
    out = predict(b, WheelSpeeds(0.0, 0.0), 0.02, GEOM, ProcessNoiseParams(0.05))
    assert out.mean == b.mean
    assert np.array_equal(out.cov, b.cov)


def test_predict_from_zero_covariance_is_rank_two():
    b = GaussianBelief(Pose(0, 0, 0), np.zeros((3, 3)))
    u = WheelSpeeds(3.0, 3.0)
    out = predict(b, u, 0.1, GEOM, ProcessNoiseParams(0.01))
    inc = wheel_increment(u, 0.1, GEOM)
    _, W = process_jacobians(b.mean, inc, GEOM)
    Q = (0.1 * GEOM.wheel_radius) ** 2 * process_noise_Q(u, ProcessNoiseParams(0.01))
    assert np.allclose(out.cov, W @ Q @ W.T, atol=1e-18)
    assert np.linalg.matrix_rank(out.cov, tol=1e-15) <= 2


@given(beliefs(), wheel, wheel, st.floats(min_value=0, max_value=0.1))
def test_predict_keeps_invariants_and_adds_noise(b, wl, wr, delta):
    u = WheelSpeeds(wl, wr)
    out = predict(b, u, 0.02, GEOM, ProcessNoiseParams(delta))
    assert_valid(out)
    A, _ = process_jacobians(b.mean, wheel_increment(u, 0.02, GEOM), GEOM)
    assert np.trace(out.cov) >= np.trace(A @ b.cov @ A.T) - 1e-15


# --- measurement model -----------------------------------------------------------

def test_measurement_predict_examples():
    h, H = measurement_predict(Pose(0, 0, 0), Channel.COMPASS)
    assert h == 0 and np.array_equal(H, [0, 0, 1])
    h, H = measurement_predict(Pose(0, 0, 0), Channel.LRF_RANGE, LM)
    assert h == pytest.approx(5.0) and np.allclose(H, [-0.6, -0.8, 0.0])
    h, _ = measurement_predict(Pose(0, 0, 0), Channel.LRF_BEARING, Landmark("a", Point2(1, 0)))
    assert h == 0.0


def test_measurement_predict_errors():
    with pytest.raises(UndefinedBearingError):
        measurement_predict(Pose(3, 4, 0), Channel.LRF_BEARING, LM)
    with pytest.raises(ValueError):
        measurement_predict(Pose(0, 0, 0), Channel.LRF_RANGE, None)


@pytest.mark.parametrize("channel", [Channel.COMPASS, Channel.LRF_RANGE, Channel.LRF_BEARING, Channel.CAMERA_BEARING])
@given(x=coord, y=coord, th=st.floats(min_value=-3.0, max_value=3.0))
def test_measurement_jacobian_matches_finite_differences(channel, x, y, th):
    assume(math.hypot(LM.position.x - x, LM.position.y - y) > 0.1)
    lm = LM if channel.needs_landmark else None
    h0, H = measurement_predict(Pose(x, y, th), channel, lm)

    def f(s):
        h, _ = measurement_predict(Pose(*s), channel, lm)
        d = h - h0
        return (d + math.pi) % (2 * math.pi) - math.pi if channel.is_angular else d

    fd = central_difference(f, [x, y, th])
    assert np.max(np.abs(H - fd)) / max(1.0, np.max(np.abs(fd))) < 1e-6


# --- correction --------------------------------------------------------------------

def test_build_R_examples():
    assert np.array_equal(build_R([Measurement(Channel.COMPASS, 0.0, 0.01)]), [[0.01]])
    ms = [Measurement(Channel.COMPASS, 0, 1.0), Measurement(Channel.LRF_RANGE, 1, 2.0, "L0"),
          Measurement(Channel.LRF_BEARING, 0, 3.0, "L0")]
    assert np.array_equal(build_R(ms), np.diag([1.0, 2.0, 3.0]))
    paper = [Measurement(c, 0.0, float(k + 1), "L0") for k, c in enumerate(PAPER_CHANNEL_ORDER)]
    R = build_R(paper)
    assert R.shape == (6, 6) and np.array_equal(np.diag(R), [1, 2, 3, 4, 5, 6])
    assert PAPER_CHANNEL_ORDER[:2] == (Channel.WHEEL_SPEED_L, Channel.WHEEL_SPEED_R)


def test_measurement_validation():
    with pytest.raises(ValueError):
        Measurement(Channel.COMPASS, 0.0, 0.0)
    with pytest.raises(ValueError):
        Measurement(Channel.LRF_RANGE, 1.0, 0.1)


def test_uninformative_measurement_leaves_belief():
    b = GaussianBelief(Pose(0.1, 0.2, 0.3), np.diag([0.01, 0.02, 0.03]))
    out = correct(b, [Measurement(Channel.COMPASS, 1.0, 0.03 * 1e12)], LANDMARKS)
    assert np.allclose(out.vector, b.vector, rtol=1e-3)
    assert np.allclose(out.cov, b.cov, rtol=1e-3)


def test_scalar_compass_update_matches_hand_kalman():
    b = GaussianBelief(Pose(0, 0, 0), np.diag([0.0, 0.0, 1.0]))
    out = correct(b, [Measurement(Channel.COMPASS, 0.4, 1.0)], joseph=False)
    k, post = scalar_kalman(1.0, 1.0)
    assert k == 0.5
    assert out.mean.theta == pytest.approx(k * 0.4)
    assert out.cov[2, 2] == pytest.approx(post)


def test_perfect_compass_pins_heading():
    b = GaussianBelief(Pose(0, 0, 0.2), np.diag([0.01, 0.01, 0.1]))
    out = correct(b, [Measurement(Channel.COMPASS, -0.7, 1e-14)])
    assert out.mean.theta == pytest.approx(-0.7, abs=1e-6)


def test_angle_residual_wraps():
    b = GaussianBelief(Pose(0, 0, math.pi - 0.01), np.diag([0.0, 0.0, 1.0]))
    out = correct(b, [Measurement(Channel.COMPASS, -math.pi + 0.01, 1.0)])
    # the short way round crosses the seam; the update moves by 0.01, not ~pi
    assert abs(abs(out.mean.theta) - math.pi) < 0.011


def test_correct_errors():
    b = GaussianBelief(Pose(0, 0, 0), np.diag([0.01, 0.01, 0.01]))
    with pytest.raises(KeyError):
        correct(b, [Measurement(Channel.LRF_RANGE, 1.0, 0.1, "nope")], LANDMARKS)
    with pytest.raises(ValueError):
        correct(b, [Measurement(Channel.WHEEL_SPEED_L, 1.0, 0.1)], LANDMARKS)
    zero = GaussianBelief(Pose(0, 0, 0), np.zeros((3, 3)))
    ill = [Measurement(Channel.COMPASS, 0.0, 1.0), Measurement(Channel.COMPASS, 0.0, 1e-13)]
    with pytest.raises(FilterDivergenceError):
        correct(zero, ill)


def test_gate_drops_outliers_only():
    b = GaussianBelief(Pose(0, 0, 0), np.diag([0.01, 0.01, 0.01]))
    z = [Measurement(Channel.COMPASS, 0.05, 0.01), Measurement(Channel.LRF_RANGE, 9.0, 1e-4, "L0")]
    gated = correct(b, z, LANDMARKS, gate=CHI2_1DOF_99)
    only_compass = correct(b, z[:1], LANDMARKS)
    assert np.allclose(gated.vector, only_compass.vector)
    assert np.allclose(gated.cov, only_compass.cov)


def _measurements(b, rng_vals):
    out = [Measurement(Channel.COMPASS, b.mean.theta + rng_vals[0], 1e-3)]
    for k, lm in enumerate(LANDMARKS):
        r, _ = measurement_predict(b.mean, Channel.LRF_RANGE, lm)
        a, _ = measurement_predict(b.mean, Channel.LRF_BEARING, lm)
        out.append(Measurement(Channel.LRF_RANGE, r + rng_vals[1 + k], 4e-4, lm.id))
        out.append(Measurement(Channel.CAMERA_BEARING, a + rng_vals[3 + k], 4e-4, lm.id))
    return out


noise5 = st.lists(st.floats(min_value=-0.05, max_value=0.05), min_size=5, max_size=5)


@given(beliefs(), noise5)
def test_correct_keeps_invariants_and_shrinks_trace(b, noise):
    assume(min(math.hypot(lm.position.x - b.mean.x, lm.position.y - b.mean.y) for lm in LANDMARKS) > 0.5)
    for joseph in (True, False):
        out = correct(b, _measurements(b, noise), LANDMARKS, joseph=joseph)
        assert_valid(out)
        assert np.trace(out.cov) <= np.trace(b.cov) + 1e-12


@given(beliefs(), noise5)
def test_joseph_and_short_forms_agree(b, noise):
    assume(min(math.hypot(lm.position.x - b.mean.x, lm.position.y - b.mean.y) for lm in LANDMARKS) > 0.5)
    z = _measurements(b, noise)
    a = correct(b, z, LANDMARKS, joseph=True)
    s = correct(b, z, LANDMARKS, joseph=False)
    assert np.allclose(a.vector, s.vector, atol=1e-9)
    assert np.allclose(a.cov, s.cov, atol=1e-9)


def test_joint_and_sequential_updates_agree():
    b = GaussianBelief(Pose(0.5, -0.3, 0.2), np.diag([1e-4, 2e-4, 1e-4]))
    r, _ = measurement_predict(b.mean, Channel.LRF_RANGE, LM)
    z = [Measurement(Channel.COMPASS, 0.2 + 1e-4, 1e-3), Measurement(Channel.LRF_RANGE, r - 1e-4, 1e-3, "L0")]
    joint = correct(b, z, LANDMARKS)
    seq = correct(correct(b, z[:1], LANDMARKS), z[1:], LANDMARKS)
    assert np.allclose(joint.vector, seq.vector, atol=1e-6)


def test_nees_matches_definition():
    P = np.array([[0.04, 0.01, 0.0], [0.01, 0.09, 0.002], [0.0, 0.002, 0.01]])
    b = GaussianBelief(Pose(1.0, 2.0, 0.5), P)
    e = np.array([0.1, -0.2, 0.05])
    assert nees(b, Pose(1.1, 1.8, 0.55)) == pytest.approx(e @ np.linalg.inv(P) @ e)


# --- fused kernels versus the reference functions ------------------------------------

BACKENDS = [_kernels_py] + ([kernels._impl] if kernels.BACKEND == "cython" else [])


def _rows(z, index):
    kind = {Channel.COMPASS: 0, Channel.LRF_RANGE: 1, Channel.LRF_BEARING: 2, Channel.CAMERA_BEARING: 2}
    rows = []
    for m in z:
        lm = index.get(m.landmark_id)
        rows.append((kind[m.channel], m.value, m.variance, lm.position.x if lm else 0.0, lm.position.y if lm else 0.0))
    return rows


@pytest.mark.parametrize("backend", BACKENDS, ids=lambda m: m.__name__)
@given(b=beliefs(), wl=wheel, wr=wheel, noise=noise5, joseph=st.booleans())
def test_fused_kernels_match_reference(backend, b, wl, wr, noise, joseph):
    params = ProcessNoiseParams(0.01, 1e-4)
    u = WheelSpeeds(wl, wr)
    ref = predict(b, u, 0.02, GEOM, params)
    assume(min(math.hypot(lm.position.x - ref.mean.x, lm.position.y - ref.mean.y) for lm in LANDMARKS) > 0.5)
    buf = np.array([*b.mean.as_tuple(), *b.cov.ravel()])
    assert backend.ekf_predict(buf, wr, wl, 0.02, GEOM.wheel_radius, GEOM.wheelbase, 0.01, 1e-4) == 0
    assert np.allclose(buf[:3], ref.vector, rtol=1e-12, atol=1e-12)
    assert np.allclose(buf[3:].reshape(3, 3), ref.cov, rtol=1e-9, atol=1e-15)
    buf[:] = [*ref.mean.as_tuple(), *ref.cov.ravel()]
    z = _measurements(ref, noise)
    post = correct(ref, z, LANDMARKS, joseph=joseph)
    assert backend.ekf_correct(buf, _rows(z, {lm.id: lm for lm in LANDMARKS}), joseph) == 0
    assert np.allclose(buf[:3], post.vector, rtol=1e-9, atol=1e-12)
    assert np.allclose(buf[3:].reshape(3, 3), post.cov, rtol=1e-7, atol=1e-15)
    assert backend.nees3(buf, 0.1, 0.2, 0.3) == pytest.approx(
        nees(GaussianBelief(Pose(*buf[:3]), buf[3:].reshape(3, 3)), Pose(0.1, 0.2, 0.3)), rel=1e-6)


@pytest.mark.parametrize("backend", BACKENDS, ids=lambda m: m.__name__)
def test_fused_kernel_status_codes(backend):
    buf = np.array([3.0, 4.0, 0.0, *np.diag([1e-2, 1e-2, 1e-2]).ravel()])
    assert backend.ekf_correct(buf, [(1, 1.0, 0.01, 3.0, 4.0)], True) == 3
    zero = np.array([0.0, 0.0, 0.0, *np.zeros(9)])
    assert backend.ekf_correct(zero, [(0, 0.0, 1.0, 0, 0), (0, 0.0, 1e-13, 0, 0)], True) == 1
    bad = np.array([0.0, 0.0, 0.0, *np.diag([1.0, -1.0, 1.0]).ravel()])
    assert backend.ekf_predict(bad, 1.0, 1.0, 0.02, 0.1, 0.4, 0.01) == 2
    assert backend.nees3(bad, 0, 0, 0) == math.inf
