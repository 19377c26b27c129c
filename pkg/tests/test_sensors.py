import numpy as np
import pytest

from fimselect.errors import ConfigError, GeometryError
from fimselect.params import AgentPath, ParamLayout, ParamVector, motion_position
from fimselect.sensors import (
    SPEED_OF_LIGHT,
    CameraSensor,
    DopplerSensor,
    FixedOrientation,
    LinearSensor,
    LookAtOrientation,
    MeasurementSpec,
    ToaSensor,
    camera_mean,
    doppler_mean,
    doppler_sigma_from_ppb,
    intrinsics,
    look_at_rotation,
    measurement_jacobian,
    measurement_mean,
    synthesize,
    toa_mean,
)

from oracles import LAYOUT, five_point_jacobian, mean_fun, project, random_geometry, rel_error

STILL = AgentPath.from_waypoints([[0, 0, 0, 0], [10, 0, 0, 0]])


def theta_at(position, velocity=(0, 0, 0), nuisance=None):
    return ParamVector(LAYOUT, LAYOUT.pack([*position, *velocity, 0, 0, 0], nuisance))


# ---------------------------------------------------------------- ToA


def test_toa_examples():
    spec = MeasurementSpec(ToaSensor("toa1", STILL, 1.0), 2.0, 2.0, symbol=0)
    assert toa_mean(theta_at([1000, 0, 0]), spec) == pytest.approx(1000.0, abs=1e-12)
    spec = MeasurementSpec(ToaSensor("toa1", STILL, 1.0), 2.0, 2.0, symbol=2)
    assert toa_mean(theta_at([600, 800, 0], nuisance={"toa1": [10, 5]}), spec) == pytest.approx(1025.0, abs=1e-12)


def test_toa_matches_direct_formula(rng):
    for _ in range(20):
        theta, spec = random_geometry(rng, "toa")
        q = motion_position(theta, spec.time, spec.t_start)
        period, offset = theta.block("toa1")
        expected = np.linalg.norm(q - spec.sensor.path.position(spec.time)) + period * spec.symbol + offset
        assert toa_mean(theta, spec) == pytest.approx(expected, rel=1e-13)


def test_toa_is_affine_in_clock_terms(rng):
    theta, spec = random_geometry(rng, "toa")
    base = theta.with_values(theta.values.copy())
    base.values[LAYOUT.slot("toa1")] = 0.0
    rho = toa_mean(base, spec)
    period, offset = theta.block("toa1")
    assert toa_mean(theta, spec) == rho + period * spec.symbol + offset


def test_toa_colocated_raises():
    spec = MeasurementSpec(ToaSensor("toa1", STILL, 1.0), 1.0, 0.0)
    with pytest.raises(GeometryError):
        toa_mean(theta_at([0, 0, 0]), spec)


# ---------------------------------------------------------------- Doppler


def test_doppler_examples():
    spec = MeasurementSpec(DopplerSensor("rf1", STILL, 1.0), 1.0, 1.0)
    assert doppler_mean(theta_at([100, 0, 0], nuisance={"rf1": [3.5]}), spec) == pytest.approx(3.5)
    receding = theta_at([100, 0, 0], velocity=[5, 0, 0])
    assert doppler_mean(receding, spec) == pytest.approx(-5.0, abs=1e-12)


def test_doppler_approach_recede_antisymmetric(rng):
    spec = MeasurementSpec(DopplerSensor("rf1", STILL, 1.0), 1.0, 1.0)
    for _ in range(10):
        pos, vel = rng.uniform(-100, 100, 3), rng.uniform(-10, 10, 3)
        assert doppler_mean(theta_at(pos, vel), spec) == -doppler_mean(theta_at(pos, -vel), spec)


def test_doppler_sigma_from_ppb():
    assert doppler_sigma_from_ppb(33.0) == pytest.approx(33e-9 * SPEED_OF_LIGHT, rel=1e-12)
    assert doppler_sigma_from_ppb(33.0, 2.4e9) == pytest.approx(doppler_sigma_from_ppb(33.0, 1e9), rel=1e-12)


# ---------------------------------------------------------------- camera


def _camera(R=np.eye(3), A=None):
    A = intrinsics(50, 50) if A is None else A
    return CameraSensor("cam1", STILL, FixedOrientation(R), A, 0.64 * np.eye(2))


def test_camera_examples():
    spec = MeasurementSpec(_camera(), 1.0, 1.0)
    assert np.allclose(camera_mean(theta_at([0, 0, 10]), spec), [0, 0], atol=1e-15)
    assert np.allclose(camera_mean(theta_at([1, 0, 10]), spec), [5, 0], atol=1e-12)


def test_camera_matches_homogeneous_projection(rng):
    for _ in range(20):
        theta, spec = random_geometry(rng, "camera")
        sensor = spec.sensor
        q = motion_position(theta, spec.time, spec.t_start)
        expected = project(sensor.orientation(spec.time), sensor.intrinsics, q, sensor.path.position(spec.time))
        assert np.allclose(camera_mean(theta, spec), expected, rtol=1e-12, atol=1e-10)


def test_camera_scale_invariance(rng):
    theta, spec = random_geometry(rng, "camera")
    before = camera_mean(theta, spec)
    M, m = spec.sensor.projection_rows(spec.time)
    spec.sensor._rows[float(spec.time)] = (3.7 * M, 3.7 * m)
    assert np.allclose(camera_mean(theta, spec), before, rtol=1e-12, atol=1e-12)


def test_camera_behind_raises_and_bad_rotation_rejected():
    spec = MeasurementSpec(_camera(), 1.0, 1.0)
    with pytest.raises(GeometryError):
        camera_mean(theta_at([0, 0, -10]), spec)
    skewed = MeasurementSpec(_camera(R=np.diag([1.0, 1.0, 2.0])), 1.0, 1.0)
    with pytest.raises(ConfigError):
        camera_mean(theta_at([0, 0, 10]), skewed)


def test_camera_jacobian_motion_blocks_vanish_at_window_start():
    spec = MeasurementSpec(_camera(), 4.0, 4.0)
    J = measurement_jacobian(theta_at([20, -10, 30], [1, 2, 3]), spec)
    assert not J[:, 3:9].any() and J[:, :3].any()


def test_intrinsics_validation():
    with pytest.raises(ConfigError):
        _camera(A=np.array([[50, 0, 0], [1, 50, 0], [0, 0, 1.0]]))


def test_look_at_rotation_points_optical_axis():
    R = look_at_rotation([3.0, 4.0, 0.0])
    assert np.allclose(R @ R.T, np.eye(3), atol=1e-12) and np.linalg.det(R) > 0
    assert np.allclose(R[2], [0.6, 0.8, 0.0])
    # image y axis points down when up is +z
    assert R[1][2] < 0
    path = AgentPath.from_waypoints([[0, 10, 0, 0], [1, 10, 0, 0]])
    look = LookAtOrientation(path, [0, 0, 0])
    assert np.allclose(look(0.5)[2], [-1, 0, 0])


# ------------------------------------------------------- Jacobians vs FD


@pytest.mark.parametrize("kind", ["toa", "doppler", "camera"])
def test_jacobians_match_five_point_stencil(rng, kind):
    for _ in range(20):
        theta, spec = random_geometry(rng, kind)
        J = measurement_jacobian(theta, spec)
        fd = five_point_jacobian(mean_fun(theta, spec), theta.values)
        assert J.shape == (spec.dim, LAYOUT.total_dim)
        assert rel_error(J, fd) <= 1e-6


def test_linear_sensor_mean_and_jacobian():
    H = np.arange(24.0).reshape(2, 12)
    spec = MeasurementSpec(LinearSensor("lin", H, np.eye(2), offset=np.array([1.0, -1.0])), 0.0, 0.0)
    th = ParamVector(LAYOUT, np.ones(12))
    assert np.allclose(measurement_mean(th, spec), H.sum(axis=1) + [1, -1])
    assert np.array_equal(measurement_jacobian(th, spec), H)


# ---------------------------------------------------------------- synthesis


def _specs(path, n=50):
    toa = ToaSensor("toa1", path, 2.0)
    rf = DopplerSensor("rf1", path, 0.5)
    return [MeasurementSpec(toa, t, 0.0, symbol=i) for i, t in enumerate(np.linspace(0, 10, n))] + [
        MeasurementSpec(rf, t, 0.0) for t in np.linspace(0, 10, n)
    ]


PATH = AgentPath.from_waypoints([[0, -100, 50, 10], [10, 100, 60, 10]])


def test_zero_noise_synthesis_is_exact():
    th = theta_at([5, 5, 5], [1, 0, 0])
    specs = [MeasurementSpec(ToaSensor("toa1", PATH, 0.0), t, 0.0) for t in (1.0, 2.0)]
    for m in synthesize(th, specs, seed=9):
        assert np.array_equal(m.value, measurement_mean(th, m.spec))


def test_synthesis_deterministic_and_stream_isolated():
    th = theta_at([5, 5, 5], [1, 0, 0])
    specs = _specs(PATH)
    a = [m.value for m in synthesize(th, specs, 7)]
    b = [m.value for m in synthesize(th, specs, 7)]
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    # dropping the Doppler sensor leaves the ToA draws unchanged
    toa_only = [m.value for m in synthesize(th, specs[:50], 7)]
    assert all(np.array_equal(x, y) for x, y in zip(a[:50], toa_only))
    c = [m.value for m in synthesize(th, specs, 8)]
    assert not np.array_equal(a[0], c[0])


def test_synthesis_noise_std():
    th = theta_at([5, 5, 5])
    spec = MeasurementSpec(ToaSensor("toa1", STILL, 2.5), 1.0, 0.0)
    values = np.array([m.value[0] for m in synthesize(th, [spec] * 100_000, 3)])
    assert abs(values.std() / 2.5 - 1) < 0.02
