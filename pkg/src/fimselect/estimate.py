"""MAP estimation from selected measurements and Monte-Carlo error curves."""
from __future__ import annotations

import logging
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import solve_triangular

from .errors import ConfigError, GeometryError, NumericalError
from .params import POSITION, GaussianPrior, ParamVector, prior_information
from .scenario import Model, Scenario, build_model, build_pools
from .select import (
    CandidatePool,
    SelectionResult,
    brute_force_joint,
    brute_force_select,
    cooperative_select,
    greedy_select,
    independent_select,
    lazy_greedy_select,
    random_select,
)
from .sensors import Measurement, measurement_jacobian, measurement_mean, synthesize

logger = logging.getLogger(__name__)

MAX_ITER = 100
DAMPING_INIT = 1e-3
DAMPING_MIN = 1e-12
DAMPING_MAX = 1e8
STEP_RTOL = 1e-9
MAX_NONCONVERGED_FRAC = 0.05

SELECTORS = ("greedy", "lazy", "random", "independent", "cooperative", "oracle")


@dataclass
class MapEstimate:
    theta_hat: ParamVector
    converged: bool
    iterations: int
    objective: float
    information: np.ndarray
    objective_trace: list = field(default_factory=list, repr=False)


class _Problem:
    """Whitened residuals ``r(theta)`` and their Jacobian for the MAP objective."""

    def __init__(self, measurements: Sequence[Measurement], prior: GaussianPrior):
        self.measurements = list(measurements)
        self.prior = prior
        self.prior_whiten = solve_triangular(prior.cholesky, np.eye(prior.layout.total_dim), lower=True)
        # inverse Cholesky factor of each sensor's noise covariance
        self.whiten = {}
        for m in self.measurements:
            sid = m.spec.sensor.sensor_id
            if sid not in self.whiten:
                cov = np.atleast_2d(m.spec.sensor.noise_cov)
                try:
                    L = np.linalg.cholesky(cov)
                except np.linalg.LinAlgError:
                    raise NumericalError(f"sensor {sid!r}: noise covariance is not positive definite") from None
                self.whiten[sid] = solve_triangular(L, np.eye(len(L)), lower=True)

    def residuals(self, theta: ParamVector) -> np.ndarray:
        parts = [self.prior_whiten @ (theta.values - self.prior.mean.values)]
        for m in self.measurements:
            parts.append(self.whiten[m.spec.sensor.sensor_id] @ (m.value - measurement_mean(theta, m.spec)))
        return np.concatenate(parts)

    def jacobian(self, theta: ParamVector) -> np.ndarray:
        rows = [self.prior_whiten]
        for m in self.measurements:
            rows.append(-self.whiten[m.spec.sensor.sensor_id] @ measurement_jacobian(theta, m.spec))
        return np.vstack(rows)


def map_estimate(
    measurements: Sequence[Measurement],
    prior: GaussianPrior,
    init: ParamVector | None = None,
    max_iter: int = MAX_ITER,
) -> MapEstimate:
    """Levenberg-damped Gauss-Newton on the negative log posterior.

    Minimizes ``1/2 |theta - mu0|^2_{Sigma0^-1} + sum_k 1/2 |y_k - mu_k(theta)|^2_{Sigma_k^-1}``.
    A trial point with singular sensor geometry counts as a rejected step.
    Reaching the damping ceiling or the iteration cap returns the best
    iterate with ``converged=False``.
    """
    problem = _Problem(measurements, prior)
    start = prior.mean if init is None else init
    theta = start.with_values(start.values.copy())
    r = problem.residuals(theta)
    cost = 0.5 * float(r @ r)
    trace = [cost]
    lam = DAMPING_INIT
    p = theta.values.size
    converged = False
    iterations = 0
    while iterations < max_iter and not converged:
        iterations += 1
        J = problem.jacobian(theta)
        g = J.T @ r
        H = J.T @ J
        while True:
            step = np.linalg.solve(H + lam * np.eye(p), -g)
            small = np.linalg.norm(step) < STEP_RTOL * (1.0 + np.linalg.norm(theta.values))
            trial = theta.with_values(theta.values + step)
            try:
                r_new = problem.residuals(trial)
                cost_new = 0.5 * float(r_new @ r_new)
            except GeometryError:
                cost_new = np.inf
            if cost_new <= cost:
                theta, r, cost = trial, r_new, cost_new
                trace.append(cost)
                lam = max(lam / 10.0, DAMPING_MIN)
                converged = bool(small)
                break
            if small:
                # no descent even for a vanishing step: numerically stationary
                converged = True
                break
            lam *= 10.0
            if lam > DAMPING_MAX:
                logger.debug("damping ceiling reached after %d iterations", iterations)
                return MapEstimate(theta, False, iterations, cost, _information(problem, theta), trace)
    return MapEstimate(theta, converged, iterations, cost, _information(problem, theta), trace)


def _information(problem: _Problem, theta: ParamVector) -> np.ndarray:
    J = problem.jacobian(theta)
    H = J.T @ J
    return 0.5 * (H + H.T)


def estimate_with_restart(measurements: Sequence[Measurement], prior: GaussianPrior) -> MapEstimate:
    """Start at the prior mean; if that fails, retry once from a fixed prior-perturbed point."""
    est = map_estimate(measurements, prior)
    if est.converged:
        return est
    offset = prior.cholesky @ np.full(prior.layout.total_dim, 0.5)
    retry = map_estimate(measurements, prior, prior.mean.with_values(prior.mean.values + offset))
    return retry if retry.converged or retry.objective < est.objective else est


@dataclass
class ErrorCurve:
    selector: str
    budgets: list
    rmse_pos: list
    weighted_err: list
    nonconverged: list
    trials: int
    mix: dict = field(default_factory=dict)  # budget -> {sensor_type: mean count per trial}

    def worst_nonconverged_frac(self) -> float:
        return max(self.nonconverged, default=0) / max(self.trials, 1)


def _derived_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(x) for x in parts]).generate_state(1, np.uint64)[0])


def run_selector(
    selector: str,
    pools: Sequence[CandidatePool],
    q0: np.ndarray,
    budget: int | None = None,
    seed: int = 0,
) -> list:
    """Run one selector over all agents; returns one :class:`SelectionResult` per agent.

    ``budget`` overrides every agent's budget when given. For several agents
    ``greedy`` and ``lazy`` select independently; ``random`` uses a distinct
    stream per agent derived from ``seed``.
    """
    if budget is not None:
        pools = [p.with_budget(budget) for p in pools]
    if selector == "greedy":
        return [greedy_select(p, q0) for p in pools]
    if selector == "lazy":
        return [lazy_greedy_select(p, q0) for p in pools]
    if selector == "random":
        return [random_select(p, _derived_seed(seed, i), q0) for i, p in enumerate(pools)]
    if selector == "independent":
        return independent_select(pools, q0).results
    if selector == "cooperative":
        return cooperative_select(pools, q0).results
    if selector == "oracle":
        if len(pools) == 1:
            return [brute_force_select(pools[0], q0)]
        return brute_force_joint(pools, q0).results
    raise ConfigError(f"unknown selector {selector!r}; choose from {', '.join(SELECTORS)}")


@dataclass
class _SweepPlan:
    model: Model
    pools: list
    q0: np.ndarray
    budgets: list
    selectors: list
    seed: int
    fixed: dict


def _selection(plan: _SweepPlan, selector: str, budget: int, trial: int) -> list:
    if selector == "random":
        return run_selector("random", plan.pools, plan.q0, budget, _derived_seed(plan.seed, trial, budget))
    return plan.fixed[(selector, budget)]


def _mean_mix(plan: _SweepPlan, selector: str, budget: int, trials: int) -> dict:
    draws = 1 if selector != "random" else trials
    totals: Counter = Counter()
    for t in range(draws):
        totals.update(selection_mix_report(_selection(plan, selector, budget, t), plan.pools).by_type)
    return {kind: totals[kind] / draws for kind in sorted(totals)}


def _trial(plan: _SweepPlan, trial: int):
    """Errors for every (selector, budget) pair in one trial; ``None`` marks a failure."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([plan.seed, trial])))
    theta_true = plan.model.prior.sample(rng)
    atoms = [a for pool in plan.pools for a in pool.atoms]
    out = {}
    try:
        synthesized = synthesize(theta_true, [a.spec for a in atoms], _derived_seed(plan.seed, trial, 1))
    except GeometryError as exc:
        logger.warning("trial %d: synthesis failed (%s)", trial, exc)
        return {(s, b): None for s in plan.selectors for b in plan.budgets}
    measured = {a.atom_id: m for a, m in zip(atoms, synthesized)}
    for selector in plan.selectors:
        for budget in plan.budgets:
            results = _selection(plan, selector, budget, trial)
            ids = sorted(i for r in results for i in r.chosen)
            est = estimate_with_restart([measured[i] for i in ids], plan.model.prior)
            if not est.converged:
                out[(selector, budget)] = None
                continue
            delta = est.theta_hat.values - theta_true.values
            out[(selector, budget)] = (float(delta[POSITION] @ delta[POSITION]), float(delta @ plan.q0 @ delta))
    return out


def _trial_star(args):
    return _trial(*args)


def monte_carlo_sweep(
    scenario: Scenario | Model,
    budgets: Sequence[int],
    trials: int,
    selectors: Sequence[str],
    seed: int = 0,
    workers: int = 1,
    strict: bool = True,
) -> list:
    """Average estimation error versus per-agent budget for each selector.

    Each trial draws the true parameters from the prior and synthesizes every
    candidate measurement once; all selectors and budgets then share those
    draws. FIM-based selections depend only on the prior mean, so they are
    computed once per budget. Position RMSE covers the position block only;
    ``weighted_err`` is the RMS prior-information-weighted error of the full
    vector. Non-converged trials are excluded from the averages; with
    ``strict`` more than 5% of them raises :class:`NumericalError`.
    """
    if trials < 1:
        raise ConfigError("trials must be at least 1")
    budgets = [int(b) for b in budgets]
    selectors = list(selectors)
    for s in selectors:
        if s not in SELECTORS:
            raise ConfigError(f"unknown selector {s!r}; choose from {', '.join(SELECTORS)}")
    model = scenario if isinstance(scenario, Model) else build_model(scenario)
    _, pools, q0 = build_pools(model)
    fixed = {(s, b): run_selector(s, pools, q0, b) for s in selectors if s != "random" for b in budgets}
    plan = _SweepPlan(model, pools, q0, budgets, selectors, int(seed), fixed)

    if workers > 1 and trials > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            per_trial = list(ex.map(_trial_star, [(plan, t) for t in range(trials)]))
    else:
        per_trial = [_trial(plan, t) for t in range(trials)]

    curves = []
    for s in selectors:
        rmse, werr, bad = [], [], []
        for b in budgets:
            vals = [r[(s, b)] for r in per_trial if r[(s, b)] is not None]
            bad.append(trials - len(vals))
            if vals:
                arr = np.array(vals)
                rmse.append(float(np.sqrt(np.mean(arr[:, 0]))))
                werr.append(float(np.sqrt(np.mean(arr[:, 1]))))
            else:
                rmse.append(float("nan"))
                werr.append(float("nan"))
        mix = {b: _mean_mix(plan, s, b, trials) for b in budgets}
        curves.append(ErrorCurve(s, budgets, rmse, werr, bad, trials, mix))

    if strict:
        for c in curves:
            if c.worst_nonconverged_frac() > MAX_NONCONVERGED_FRAC:
                raise NumericalError(
                    f"selector {c.selector!r}: {max(c.nonconverged)} of {trials} estimates did not converge"
                )
    return curves


@dataclass
class MixReport:
    counts: dict  # (agent_id, sensor_type) -> count
    by_type: dict  # sensor_type -> count
    fractions: dict  # sensor_type -> fraction of all chosen

    @property
    def total(self) -> int:
        return sum(self.by_type.values())


def selection_mix_report(results: Sequence[SelectionResult], pools: Sequence[CandidatePool]) -> MixReport:
    lookup = {}
    for pool in pools:
        lookup.update(pool.by_id())
    counts: Counter = Counter()
    for r in results:
        for i in r.chosen:
            atom = lookup[i]
            counts[(atom.agent_id or r.agent_id, atom.sensor_type)] += 1
    by_type: Counter = Counter()
    for (_, kind), n in counts.items():
        by_type[kind] += n
    total = sum(by_type.values())
    fractions = {k: n / total for k, n in by_type.items()} if total else {}
    return MixReport(dict(counts), dict(by_type), fractions)
