"""Unknown-parameter layout, target motion model and Gaussian prior.

The stacked parameter vector is laid out as::

    [ position (3) | velocity (3) | curvature (3) | nuisance blocks ... ]

Nuisance blocks belong to individual RF sensors: a time-of-arrival sensor
carries ``(symbol_period, offset)`` and a Doppler sensor carries a single
carrier offset. Both are stored pre-scaled into metres and metres/second so
that the information matrix stays well conditioned.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import cho_solve

from .errors import ConfigError

SPATIAL_DIM = 3
MOTION_DIM = 3 * SPATIAL_DIM

POSITION = slice(0, 3)
VELOCITY = slice(3, 6)
CURVATURE = slice(6, 9)

#: entries per nuisance block kind
BLOCK_SIZES = {"toa": 2, "doppler": 1}


@dataclass(frozen=True)
class ParamLayout:
    """Index map from named blocks to contiguous slots of the parameter vector."""

    nuisance_blocks: tuple[tuple[str, str], ...] = ()
    _slots: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        blocks = tuple((str(sid), str(kind)) for sid, kind in self.nuisance_blocks)
        object.__setattr__(self, "nuisance_blocks", blocks)
        slots = {}
        start = MOTION_DIM
        for sid, kind in blocks:
            if kind not in BLOCK_SIZES:
                raise ConfigError(f"unknown nuisance block kind {kind!r}")
            if sid in slots:
                raise ConfigError(f"sensor {sid!r} declares nuisance parameters twice")
            size = BLOCK_SIZES[kind]
            slots[sid] = slice(start, start + size)
            start += size
        object.__setattr__(self, "_slots", slots)

    @property
    def motion_dim(self) -> int:
        return MOTION_DIM

    @property
    def total_dim(self) -> int:
        return MOTION_DIM + sum(BLOCK_SIZES[kind] for _, kind in self.nuisance_blocks)

    def slot(self, sensor_id: str) -> slice:
        try:
            return self._slots[sensor_id]
        except KeyError:
            raise ConfigError(f"sensor {sensor_id!r} has no nuisance block") from None

    def kind(self, sensor_id: str) -> str:
        return dict(self.nuisance_blocks)[sensor_id]

    def has(self, sensor_id: str) -> bool:
        return sensor_id in self._slots

    def pack(self, motion: Sequence[float], nuisance: dict | None = None) -> np.ndarray:
        """Assemble a flat vector from a 9-vector and a ``{sensor_id: values}`` map."""
        out = np.zeros(self.total_dim)
        out[:MOTION_DIM] = np.asarray(motion, dtype=float).reshape(MOTION_DIM)
        for sid, values in (nuisance or {}).items():
            sl = self.slot(sid)
            out[sl] = np.asarray(values, dtype=float).reshape(sl.stop - sl.start)
        return out

    def unpack(self, values: np.ndarray) -> tuple[np.ndarray, dict]:
        values = np.asarray(values, dtype=float)
        if values.shape != (self.total_dim,):
            raise ConfigError(f"expected vector of length {self.total_dim}, got {values.shape}")
        nuisance = {sid: values[self.slot(sid)].copy() for sid, _ in self.nuisance_blocks}
        return values[:MOTION_DIM].copy(), nuisance


@dataclass
class ParamVector:
    layout: ParamLayout
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.layout.total_dim,):
            raise ConfigError(
                f"parameter vector has shape {self.values.shape}, layout needs {self.layout.total_dim}"
            )

    @property
    def position(self) -> np.ndarray:
        return self.values[POSITION]

    @property
    def velocity(self) -> np.ndarray:
        return self.values[VELOCITY]

    @property
    def curvature(self) -> np.ndarray:
        return self.values[CURVATURE]

    def block(self, sensor_id: str) -> np.ndarray:
        return self.values[self.layout.slot(sensor_id)]

    def with_values(self, values: np.ndarray) -> "ParamVector":
        return ParamVector(self.layout, values)


def check_spd(matrix: np.ndarray, what: str = "matrix", rtol: float = 1e-12) -> np.ndarray:
    """Validate symmetry and positive definiteness; return the lower Cholesky factor."""
    matrix = np.asarray(matrix, dtype=float)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise ConfigError(f"{what} must be square, got shape {matrix.shape}")
    scale = max(np.max(np.abs(matrix)), np.finfo(float).tiny)
    if np.max(np.abs(matrix - matrix.T)) > rtol * scale:
        raise ConfigError(f"{what} is not symmetric")
    try:
        return np.linalg.cholesky(matrix)
    except np.linalg.LinAlgError:
        raise ConfigError(f"{what} is not positive definite") from None


@dataclass
class GaussianPrior:
    mean: ParamVector
    covariance: np.ndarray

    def __post_init__(self):
        self.covariance = np.asarray(self.covariance, dtype=float)
        p = self.mean.layout.total_dim
        if self.covariance.shape != (p, p):
            raise ConfigError(f"prior covariance must be {p}x{p}, got {self.covariance.shape}")
        self.cholesky = check_spd(self.covariance, "prior covariance")

    @property
    def layout(self) -> ParamLayout:
        return self.mean.layout

    def sample(self, rng: np.random.Generator) -> ParamVector:
        z = rng.standard_normal(self.layout.total_dim)
        return self.mean.with_values(self.mean.values + self.cholesky @ z)


class AgentPath:
    """Piecewise-linear agent trajectory through timed waypoints.

    Velocity is the slope of the segment containing ``t``; at an interior
    waypoint the outgoing segment is used, at the final waypoint the incoming
    one. Outside the waypoint span the end segments are extrapolated.
    """

    def __init__(self, times, positions):
        self.times = np.asarray(times, dtype=float)
        self.positions = np.asarray(positions, dtype=float)
        if self.times.ndim != 1 or len(self.times) < 2:
            raise ConfigError("an agent path needs at least two waypoints")
        if self.positions.shape != (len(self.times), SPATIAL_DIM):
            raise ConfigError("waypoint positions must be 3-vectors, one per time")
        if np.any(np.diff(self.times) <= 0):
            raise ConfigError("waypoint times must be strictly increasing")
        self._slopes = np.diff(self.positions, axis=0) / np.diff(self.times)[:, None]

    @classmethod
    def from_waypoints(cls, waypoints) -> "AgentPath":
        arr = np.asarray(waypoints, dtype=float)
        if arr.ndim != 2 or arr.shape[1] != 4:
            raise ConfigError("waypoints must be rows of [t, x, y, z]")
        return cls(arr[:, 0], arr[:, 1:])

    def _segment(self, t: float) -> int:
        i = int(np.searchsorted(self.times, t, side="right")) - 1
        return min(max(i, 0), len(self.times) - 2)

    def position(self, t: float) -> np.ndarray:
        i = self._segment(t)
        return self.positions[i] + (t - self.times[i]) * self._slopes[i]

    def velocity(self, t: float) -> np.ndarray:
        return self._slopes[self._segment(t)].copy()

    def sample(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        i = self._segment(t)
        return self.positions[i] + (t - self.times[i]) * self._slopes[i], self._slopes[i].copy()


def motion_position(theta: ParamVector, t: float, t_start: float) -> np.ndarray:
    s = t - t_start
    return theta.position + s * theta.velocity + 0.5 * s * s * theta.curvature


def motion_velocity(theta: ParamVector, t: float, t_start: float) -> np.ndarray:
    return theta.velocity + (t - t_start) * theta.curvature


def motion_jacobians(t: float, t_start: float, layout: ParamLayout) -> tuple[np.ndarray, np.ndarray]:
    """Derivatives of target position and velocity with respect to the full vector.

    Both are independent of the parameter values because the motion model is
    linear in them.
    """
    s = t - t_start
    eye = np.eye(SPATIAL_DIM)
    dq = np.zeros((SPATIAL_DIM, layout.total_dim))
    dqdot = np.zeros((SPATIAL_DIM, layout.total_dim))
    dq[:, POSITION] = eye
    dq[:, VELOCITY] = s * eye
    dq[:, CURVATURE] = 0.5 * s * s * eye
    dqdot[:, VELOCITY] = eye
    dqdot[:, CURVATURE] = s * eye
    return dq, dqdot


def prior_information(prior: GaussianPrior) -> np.ndarray:
    """Information contributed by the prior: the inverse prior covariance."""
    chol = check_spd(prior.covariance, "prior covariance")
    p = chol.shape[0]
    info = cho_solve((chol, True), np.eye(p))
    return 0.5 * (info + info.T)
