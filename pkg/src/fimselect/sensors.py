"""Measurement mean functions, their Jacobians, and noisy synthesis.

All Jacobians are returned as dense ``(dim, p)`` arrays over the full
parameter vector; rows are gradients of one measurement component.
"""
from __future__ import annotations

import logging
import zlib
from dataclasses import dataclass
from typing import Callable, Sequence, Union

import numpy as np

from .errors import ConfigError, GeometryError
from .params import (
    SPATIAL_DIM,
    AgentPath,
    ParamVector,
    motion_jacobians,
    motion_position,
    motion_velocity,
)

logger = logging.getLogger(__name__)

RHO_MIN = 1e-6  # m
DEPTH_MIN = 1e-3  # m
SPEED_OF_LIGHT = 299_792_458.0  # m/s


def _check_sigma(sigma: float, what: str) -> float:
    sigma = float(sigma)
    if not np.isfinite(sigma) or sigma < 0:
        raise ConfigError(f"{what} must be a finite nonnegative std. dev., got {sigma}")
    return sigma


@dataclass(frozen=True, eq=False)
class ToaSensor:
    """Times of arrival of periodic RF symbols, scaled to metres.

    ``sigma == 0`` is accepted so noise-free measurements can be synthesized,
    but such a sensor cannot contribute information (its covariance is singular).
    """

    sensor_id: str
    path: AgentPath
    sigma: float
    symbol_base: int = 0

    sensor_type = "toa"
    dim = 1

    def __post_init__(self):
        object.__setattr__(self, "sigma", _check_sigma(self.sigma, "ToA sigma"))

    @property
    def noise_cov(self) -> np.ndarray:
        return np.array([[self.sigma**2]])


@dataclass(frozen=True, eq=False)
class DopplerSensor:
    """Carrier frequency shift scaled by wavelength (a range rate in m/s)."""

    sensor_id: str
    path: AgentPath
    sigma: float

    sensor_type = "doppler"
    dim = 1

    def __post_init__(self):
        object.__setattr__(self, "sigma", _check_sigma(self.sigma, "Doppler sigma"))

    @property
    def noise_cov(self) -> np.ndarray:
        return np.array([[self.sigma**2]])


def doppler_sigma_from_ppb(ppb: float, carrier_hz: float = 1e9) -> float:
    """Convert a fractional frequency std. dev. (parts per billion) into m/s.

    ``sigma_hz = ppb * 1e-9 * carrier_hz`` and the wavelength scaling
    multiplies by ``c / carrier_hz``, so the carrier cancels.
    """
    sigma_hz = ppb * 1e-9 * carrier_hz
    return sigma_hz * SPEED_OF_LIGHT / carrier_hz


def intrinsics(fx: float, fy: float, skew: float = 0.0, ox: float = 0.0, oy: float = 0.0) -> np.ndarray:
    return np.array([[fx, skew, ox], [0.0, fy, oy], [0.0, 0.0, 1.0]])


def look_at_rotation(forward, up=(0.0, 0.0, 1.0)) -> np.ndarray:
    """World-to-camera rotation whose optical (third) axis points along ``forward``.

    Camera axes are x right, y down, z forward.
    """
    z = np.asarray(forward, dtype=float)
    z = z / np.linalg.norm(z)
    up = np.asarray(up, dtype=float)
    x = np.cross(z, up)
    if np.linalg.norm(x) < 1e-9:
        x = np.cross(z, np.array([0.0, 1.0, 0.0]))
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return np.vstack([x, y, z])


class FixedOrientation:
    def __init__(self, matrix):
        self.matrix = np.asarray(matrix, dtype=float)

    def __call__(self, t: float) -> np.ndarray:
        return self.matrix


class LookAtOrientation:
    """Camera kept pointed at a fixed world point (e.g. the nominal target)."""

    def __init__(self, path: AgentPath, point, up=(0.0, 0.0, 1.0)):
        self.path = path
        self.point = np.asarray(point, dtype=float)
        self.up = np.asarray(up, dtype=float)

    def __call__(self, t: float) -> np.ndarray:
        return look_at_rotation(self.point - self.path.position(t), self.up)


class HeadingOrientation:
    """Camera aligned with the agent's direction of travel."""

    def __init__(self, path: AgentPath, up=(0.0, 0.0, 1.0)):
        self.path = path
        self.up = np.asarray(up, dtype=float)

    def __call__(self, t: float) -> np.ndarray:
        return look_at_rotation(self.path.velocity(t), self.up)


@dataclass(frozen=True, eq=False)
class CameraSensor:
    sensor_id: str
    path: AgentPath
    orientation: Callable[[float], np.ndarray]
    intrinsics: np.ndarray
    pixel_cov: np.ndarray

    sensor_type = "camera"
    dim = 2

    def __post_init__(self):
        A = np.asarray(self.intrinsics, dtype=float)
        if A.shape != (3, 3) or A[2, 2] != 1.0 or A[1, 0] != 0 or A[2, 0] != 0 or A[2, 1] != 0:
            raise ConfigError("camera intrinsics must be upper triangular with A[2,2] = 1")
        cov = np.asarray(self.pixel_cov, dtype=float)
        if cov.shape != (2, 2) or not np.allclose(cov, cov.T) or np.any(np.linalg.eigvalsh(cov) < 0):
            raise ConfigError("camera pixel covariance must be a symmetric PSD 2x2 matrix")
        object.__setattr__(self, "intrinsics", A)
        object.__setattr__(self, "pixel_cov", cov)
        # orientation depends on time only, so projection rows are memoized
        object.__setattr__(self, "_rows", {})

    @property
    def noise_cov(self) -> np.ndarray:
        return self.pixel_cov

    def projection_rows(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(M, m)``: the 2x3 image rows and 1x3 depth row of ``A R_c(t)``."""
        key = float(t)
        cached = self._rows.get(key)
        if cached is None:
            R = np.asarray(self.orientation(key), dtype=float)
            if np.max(np.abs(R @ R.T - np.eye(3))) > 1e-9 or np.linalg.det(R) < 0:
                raise ConfigError(f"camera {self.sensor_id!r}: orientation at t={t} is not a rotation")
            AR = self.intrinsics @ R
            cached = self._rows[key] = (AR[:2], AR[2])
        return cached


@dataclass(frozen=True, eq=False)
class LinearSensor:
    """Measurement linear in the parameters, ``y = H theta + offset``.

    Not part of the scenario schema; used for closed-form estimator checks.
    """

    sensor_id: str
    matrix: np.ndarray
    noise_cov: np.ndarray
    offset: np.ndarray | None = None

    sensor_type = "linear"

    @property
    def dim(self) -> int:
        return np.atleast_2d(self.matrix).shape[0]


Sensor = Union[ToaSensor, DopplerSensor, CameraSensor, LinearSensor]


@dataclass(frozen=True, eq=False)
class MeasurementSpec:
    sensor: Sensor
    time: float
    t_start: float
    symbol: int = 0

    @property
    def dim(self) -> int:
        return self.sensor.dim


@dataclass(frozen=True, eq=False)
class Measurement:
    spec: MeasurementSpec
    value: np.ndarray

    def __post_init__(self):
        value = np.atleast_1d(np.asarray(self.value, dtype=float))
        if value.shape != (self.spec.dim,) or not np.all(np.isfinite(value)):
            raise ConfigError("measurement value must be a finite vector of the sensor's dimension")
        object.__setattr__(self, "value", value)


def _relative(theta: ParamVector, spec: MeasurementSpec):
    p, pdot = spec.sensor.path.sample(spec.time)
    delta = motion_position(theta, spec.time, spec.t_start) - p
    return delta, pdot


def _range(delta: np.ndarray, sensor_id: str, t: float) -> float:
    rho = float(np.linalg.norm(delta))
    if rho < RHO_MIN:
        raise GeometryError(f"sensor {sensor_id!r}: target colocated with agent at t={t}")
    return rho


def toa_mean(theta: ParamVector, spec: MeasurementSpec) -> float:
    delta, _ = _relative(theta, spec)
    rho = _range(delta, spec.sensor.sensor_id, spec.time)
    period, offset = theta.block(spec.sensor.sensor_id)
    return rho + period * spec.symbol + offset


def toa_jacobian(theta: ParamVector, spec: MeasurementSpec) -> np.ndarray:
    delta, _ = _relative(theta, spec)
    rho = _range(delta, spec.sensor.sensor_id, spec.time)
    dq, _ = motion_jacobians(spec.time, spec.t_start, theta.layout)
    row = (delta / rho) @ dq
    sl = theta.layout.slot(spec.sensor.sensor_id)
    row[sl.start] = spec.symbol
    row[sl.start + 1] = 1.0
    return row[None, :]


def range_rate(theta: ParamVector, spec: MeasurementSpec) -> float:
    delta, pdot = _relative(theta, spec)
    rho = _range(delta, spec.sensor.sensor_id, spec.time)
    w = motion_velocity(theta, spec.time, spec.t_start) - pdot
    return float(delta @ w) / rho


def doppler_mean(theta: ParamVector, spec: MeasurementSpec) -> float:
    return theta.block(spec.sensor.sensor_id)[0] - range_rate(theta, spec)


def doppler_jacobian(theta: ParamVector, spec: MeasurementSpec) -> np.ndarray:
    delta, pdot = _relative(theta, spec)
    rho = _range(delta, spec.sensor.sensor_id, spec.time)
    u = delta / rho
    w = motion_velocity(theta, spec.time, spec.t_start) - pdot
    # d(range rate)/d(relative position) and d(range rate)/d(relative velocity)
    d_delta = (w - u * (u @ w)) / rho
    d_w = u
    dq, dqdot = motion_jacobians(spec.time, spec.t_start, theta.layout)
    row = -(d_delta @ dq + d_w @ dqdot)
    row[theta.layout.slot(spec.sensor.sensor_id).start] = 1.0
    return row[None, :]


def _camera_geometry(theta: ParamVector, spec: MeasurementSpec):
    delta, _ = _relative(theta, spec)
    M, m = spec.sensor.projection_rows(spec.time)
    depth = float(m @ delta)
    if depth < DEPTH_MIN:
        raise GeometryError(f"camera {spec.sensor.sensor_id!r}: target behind camera at t={spec.time}")
    return delta, M, m, depth


def camera_mean(theta: ParamVector, spec: MeasurementSpec) -> np.ndarray:
    delta, M, _, depth = _camera_geometry(theta, spec)
    return (M @ delta) / depth


def camera_jacobian(theta: ParamVector, spec: MeasurementSpec) -> np.ndarray:
    delta, M, m, depth = _camera_geometry(theta, spec)
    U = M @ delta
    d_delta = M / depth - np.outer(U, m) / depth**2
    dq, _ = motion_jacobians(spec.time, spec.t_start, theta.layout)
    return d_delta @ dq


def linear_mean(theta: ParamVector, spec: MeasurementSpec) -> np.ndarray:
    sensor = spec.sensor
    out = np.atleast_2d(sensor.matrix) @ theta.values
    return out if sensor.offset is None else out + sensor.offset


def linear_jacobian(theta: ParamVector, spec: MeasurementSpec) -> np.ndarray:
    return np.array(np.atleast_2d(spec.sensor.matrix), dtype=float)


_MEANS = {
    "toa": toa_mean,
    "doppler": doppler_mean,
    "camera": camera_mean,
    "linear": linear_mean,
}
_JACOBIANS = {
    "toa": toa_jacobian,
    "doppler": doppler_jacobian,
    "camera": camera_jacobian,
    "linear": linear_jacobian,
}


def measurement_mean(theta: ParamVector, spec: MeasurementSpec) -> np.ndarray:
    return np.atleast_1d(np.asarray(_MEANS[spec.sensor.sensor_type](theta, spec), dtype=float))


def measurement_jacobian(theta: ParamVector, spec: MeasurementSpec) -> np.ndarray:
    return _JACOBIANS[spec.sensor.sensor_type](theta, spec)


def sensor_stream(seed: int, sensor_id: str) -> np.random.Generator:
    """Independent counter-based generator for one sensor under a master seed."""
    key = zlib.crc32(sensor_id.encode("utf-8"))
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), key])))


def synthesize(theta_true: ParamVector, specs: Sequence[MeasurementSpec], seed: int) -> list[Measurement]:
    """Noisy measurements at ``theta_true``.

    Every sensor draws from its own stream in the order its specs appear, so
    adding or removing another sensor leaves these draws unchanged.
    """
    streams: dict[str, np.random.Generator] = {}
    chols: dict[str, np.ndarray] = {}
    out = []
    for spec in specs:
        sid = spec.sensor.sensor_id
        if sid not in streams:
            streams[sid] = sensor_stream(seed, sid)
            cov = np.atleast_2d(spec.sensor.noise_cov)
            # PSD square root that tolerates zero variance
            vals, vecs = np.linalg.eigh(cov)
            chols[sid] = vecs * np.sqrt(np.clip(vals, 0.0, None))
        mean = measurement_mean(theta_true, spec)
        noise = chols[sid] @ streams[sid].standard_normal(spec.dim)
        out.append(Measurement(spec, mean + noise))
    return out


def valid_at(theta: ParamVector, spec: MeasurementSpec) -> bool:
    try:
        measurement_jacobian(theta, spec)
    except GeometryError as exc:
        logger.warning("dropping measurement: %s", exc)
        return False
    return True


def agent_positions(path: AgentPath, times: Sequence[float]) -> np.ndarray:
    return np.array([path.position(t) for t in times]).reshape(-1, SPATIAL_DIM)
