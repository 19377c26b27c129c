"""Independent reference computations used across the test suite."""
import numpy as np

from fimselect.params import AgentPath, ParamLayout, ParamVector, motion_position
from fimselect.sensors import (
    CameraSensor,
    DopplerSensor,
    FixedOrientation,
    MeasurementSpec,
    ToaSensor,
    intrinsics,
    look_at_rotation,
    measurement_mean,
)

LAYOUT = ParamLayout((("toa1", "toa"), ("rf1", "doppler")))


def five_point_jacobian(fun, x):
    """Central 5-point stencil with per-component step ``1e-4 * max(1, |x_j|)``."""
    x = np.asarray(x, dtype=float)
    cols = []
    for j in range(x.size):
        h = 1e-4 * max(1.0, abs(x[j]))
        e = np.zeros_like(x)
        e[j] = h
        cols.append((-fun(x + 2 * e) + 8 * fun(x + e) - 8 * fun(x - e) + fun(x - 2 * e)) / (12 * h))
    return np.column_stack(cols)


def rel_error(a, b):
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


def project(R, A, target, agent):
    """Pinhole projection via homogeneous coordinates: ``A R (q - p)`` dehomogenized."""
    h = A @ (R @ (np.asarray(target) - np.asarray(agent)))
    return h[:2] / h[2]


def random_geometry(rng, kind):
    """A random ``(theta, spec)`` pair for one sensor kind with nondegenerate geometry."""
    start = rng.uniform(-300, 300, 3)
    end = start + rng.uniform(-200, 200, 3)
    path = AgentPath.from_waypoints([[0.0, *start], [10.0, *end]])
    t0 = rng.uniform(-2.0, 1.0)
    t = rng.uniform(0.5, 9.5)
    motion = np.concatenate([rng.uniform(-50, 50, 3), rng.uniform(-5, 5, 3), rng.uniform(-0.5, 0.5, 3)])
    values = LAYOUT.pack(motion, {"toa1": rng.uniform(-10, 10, 2), "rf1": rng.uniform(-20, 20, 1)})
    theta = ParamVector(LAYOUT, values)
    if kind == "toa":
        sensor = ToaSensor("toa1", path, 1.0)
        spec = MeasurementSpec(sensor, t, t0, symbol=int(rng.integers(0, 50)))
    elif kind == "doppler":
        sensor = DopplerSensor("rf1", path, 1.0)
        spec = MeasurementSpec(sensor, t, t0)
    else:
        # camera roughly facing the target so the depth is comfortably positive
        q = motion_position(theta, t, t0)
        forward = q - path.position(t) + rng.normal(0, 5.0, 3)
        R = look_at_rotation(forward, rng.standard_normal(3))
        A = intrinsics(rng.uniform(30, 80), rng.uniform(30, 80), rng.uniform(-1, 1), rng.uniform(-5, 5), rng.uniform(-5, 5))
        sensor = CameraSensor("cam1", path, FixedOrientation(R), A, 0.64 * np.eye(2))
        spec = MeasurementSpec(sensor, t, t0)
    return theta, spec


def mean_fun(theta, spec):
    return lambda v: measurement_mean(theta.with_values(v), spec)
