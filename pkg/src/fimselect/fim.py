"""Per-measurement information atoms and the running information matrix.

An atom stores its whitened Jacobian ``G = L^{-1} J`` (with ``Sigma = L L^T``),
so its information is ``G^T G``. The running state keeps a lower Cholesky
factor ``C`` of the current total, which makes the log-det gain of any atom

    log det(I_r + X^T X),   X = C^{-1} G^T

an ``O(r p^2)`` computation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.linalg import solve_triangular

from .errors import ConfigError, NumericalError, UsageError
from .params import ParamVector, check_spd
from .sensors import MeasurementSpec, measurement_jacobian

REFACTOR_EVERY = 64
PSD_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class InfoAtom:
    atom_id: int
    jacobian: np.ndarray
    noise_cov: np.ndarray
    agent_id: str = ""
    sensor_type: str = ""
    time: float = float("nan")
    spec: MeasurementSpec | None = field(default=None, repr=False)
    whitened: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        J = np.atleast_2d(np.asarray(self.jacobian, dtype=float))
        cov = np.atleast_2d(np.asarray(self.noise_cov, dtype=float))
        if cov.shape != (J.shape[0], J.shape[0]):
            raise ConfigError(f"atom {self.atom_id}: noise covariance does not match Jacobian rows")
        chol = check_spd(cov, f"atom {self.atom_id} noise covariance")
        object.__setattr__(self, "jacobian", J)
        object.__setattr__(self, "noise_cov", cov)
        object.__setattr__(self, "whitened", solve_triangular(chol, J, lower=True))

    @property
    def rank(self) -> int:
        return self.whitened.shape[0]

    @property
    def dim(self) -> int:
        return self.whitened.shape[1]

    def information(self) -> np.ndarray:
        Q = self.whitened.T @ self.whitened
        return 0.5 * (Q + Q.T)

    @classmethod
    def from_information(cls, atom_id: int, info: np.ndarray, **meta) -> "InfoAtom":
        """Build an atom from a dense PSD information matrix.

        Eigenvalues below ``-1e-10 * ||Q||`` are rejected; tiny ones are dropped.
        """
        Q = np.asarray(info, dtype=float)
        Q = 0.5 * (Q + Q.T)
        vals, vecs = np.linalg.eigh(Q)
        scale = max(float(np.max(np.abs(vals))), 0.0)
        if scale > 0 and vals[0] < -PSD_TOL * scale:
            raise NumericalError(f"atom {atom_id}: information matrix is not PSD (min eig {vals[0]:.3e})")
        keep = vals > PSD_TOL * scale
        if not np.any(keep):
            rows = np.zeros((1, Q.shape[0]))
        else:
            rows = (vecs[:, keep] * np.sqrt(vals[keep])).T
        return cls(atom_id, rows, np.eye(rows.shape[0]), **meta)


def atom_from_measurement(spec: MeasurementSpec, theta_ref: ParamVector, atom_id: int = 0, **meta) -> InfoAtom:
    """Information of one measurement linearized at ``theta_ref`` (normally the prior mean)."""
    J = measurement_jacobian(theta_ref, spec)
    meta.setdefault("sensor_type", spec.sensor.sensor_type)
    meta.setdefault("time", float(spec.time))
    return InfoAtom(atom_id, J, spec.sensor.noise_cov, spec=spec, **meta)


def stack_whitened(atoms: Sequence[InfoAtom], rank: int | None = None) -> np.ndarray:
    """Whitened Jacobians as an ``(n, r, p)`` array, zero-padded to a common rank."""
    if not atoms:
        return np.zeros((0, rank or 1, 0))
    r = rank or max(a.rank for a in atoms)
    p = atoms[0].dim
    out = np.zeros((len(atoms), r, p))
    for i, a in enumerate(atoms):
        out[i, : a.rank] = a.whitened
    return out


def _logdet_chol(chol: np.ndarray) -> float:
    return 2.0 * float(np.sum(np.log(np.diag(chol))))


def _chol_update(L: np.ndarray, x: np.ndarray) -> None:
    """In-place rank-one update: ``L L^T + x x^T``."""
    x = x.copy()
    n = len(x)
    for k in range(n):
        r = math.hypot(L[k, k], x[k])
        c = r / L[k, k]
        s = x[k] / L[k, k]
        L[k, k] = r
        if k + 1 < n:
            L[k + 1 :, k] = (L[k + 1 :, k] + s * x[k + 1 :]) / c
            x[k + 1 :] = c * x[k + 1 :] - s * L[k + 1 :, k]


@dataclass
class FimState:
    base: np.ndarray
    total: np.ndarray
    factor: np.ndarray
    logdet: float
    base_logdet: float
    chosen: list = field(default_factory=list)
    pushes_since_refactor: int = 0

    @property
    def dim(self) -> int:
        return self.total.shape[0]

    @property
    def f(self) -> float:
        """Normalized log-det criterion of the current selection."""
        return self.logdet - self.base_logdet


def fim_init(base: np.ndarray) -> FimState:
    try:
        chol = check_spd(base, "base information matrix")
    except ConfigError as exc:
        raise NumericalError(str(exc)) from None
    base = np.array(base, dtype=float)
    ld = _logdet_chol(chol)
    return FimState(base=base, total=base.copy(), factor=chol, logdet=ld, base_logdet=ld)


def batch_gains(state: FimState, whitened: np.ndarray) -> np.ndarray:
    """Log-det gains of many atoms (given as a stacked ``(n, r, p)`` array)."""
    n, r, p = whitened.shape
    if n == 0:
        return np.zeros(0)
    rhs = whitened.reshape(n * r, p).T
    X = solve_triangular(state.factor, rhs, lower=True, check_finite=False)
    X = X.T.reshape(n, r, p)
    if r == 1:
        gains = np.log1p(np.einsum("np,np->n", X[:, 0], X[:, 0]))
    elif r == 2:
        a = np.einsum("np,np->n", X[:, 0], X[:, 0])
        c = np.einsum("np,np->n", X[:, 1], X[:, 1])
        b = np.einsum("np,np->n", X[:, 0], X[:, 1])
        gains = np.log1p(a + c + a * c - b * b)
    else:
        S = np.eye(r) + np.einsum("nip,njp->nij", X, X)
        gains = np.linalg.slogdet(S)[1]
    return np.maximum(gains, 0.0)


def logdet_gain(state: FimState, atom: InfoAtom) -> float:
    return float(batch_gains(state, atom.whitened[None, :, :])[0])


def fim_push(state: FimState, atom: InfoAtom) -> FimState:
    """Return a new state with ``atom`` added; the input state is left untouched."""
    if atom.atom_id in state.chosen:
        raise UsageError(f"atom {atom.atom_id} already selected")
    gain = logdet_gain(state, atom)
    total = state.total + atom.information()
    factor = state.factor.copy()
    for row in atom.whitened:
        _chol_update(factor, row)
    pushes = state.pushes_since_refactor + 1
    logdet = state.logdet + gain
    if pushes >= REFACTOR_EVERY:
        factor = np.linalg.cholesky(total)
        logdet = _logdet_chol(factor)
        pushes = 0
    return FimState(
        base=state.base,
        total=total,
        factor=factor,
        logdet=logdet,
        base_logdet=state.base_logdet,
        chosen=[*state.chosen, atom.atom_id],
        pushes_since_refactor=pushes,
    )


def push_all(state: FimState, atoms: Iterable[InfoAtom]) -> FimState:
    for atom in atoms:
        state = fim_push(state, atom)
    return state


@dataclass(frozen=True)
class CriterionReport:
    f_logdet: float
    trace_inv_ratio: float
    max_eig_inv_ratio: float


def criterion_report(state: FimState, base: np.ndarray) -> CriterionReport:
    base = np.asarray(base, dtype=float)
    _, ld_total = np.linalg.slogdet(state.total)
    _, ld_base = np.linalg.slogdet(base)
    f = 0.0 if not state.chosen else float(ld_total - ld_base)
    trace_ratio = np.trace(np.linalg.inv(state.total)) / np.trace(np.linalg.inv(base))
    eig_ratio = np.linalg.eigvalsh(base)[0] / np.linalg.eigvalsh(state.total)[0]
    return CriterionReport(f, float(trace_ratio), float(eig_ratio))


def dense_total(base: np.ndarray, atoms: Iterable[InfoAtom]) -> np.ndarray:
    total = np.array(base, dtype=float)
    for atom in atoms:
        total = total + atom.information()
    return total


def logdet_value(base: np.ndarray, atoms: Iterable[InfoAtom]) -> float:
    """Reference (dense) value of the normalized log-det criterion."""
    atoms = list(atoms)
    if not atoms:
        return 0.0
    return float(np.linalg.slogdet(dense_total(base, atoms))[1] - np.linalg.slogdet(base)[1])


def trace_inverse_value(base: np.ndarray, atoms: Iterable[InfoAtom]) -> float:
    """Normalized mean-square-error criterion recast for maximization: ``1 - tr(FIM^-1)/tr(Q0^-1)``."""
    total = dense_total(base, atoms)
    return 1.0 - np.trace(np.linalg.inv(total)) / np.trace(np.linalg.inv(base))
