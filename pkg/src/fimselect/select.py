"""Measurement selectors over candidate pools.

All selectors break ties by the lowest atom id. Two gains are considered tied
when they differ by less than ``TIE_RTOL * max(1, |gain|)``, which keeps the
naive and lazy greedy variants in exact agreement despite rounding.
"""
from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError, OracleGuardError
from .fim import (
    FimState,
    InfoAtom,
    batch_gains,
    fim_init,
    fim_push,
    logdet_gain,
    stack_whitened,
)

TIE_RTOL = 1e-12
MAX_COMBINATIONS = 10**6


def _tol(value: float) -> float:
    return TIE_RTOL * max(1.0, abs(value))


@dataclass
class CandidatePool:
    agent_id: str
    atoms: list
    budget: int
    dropped: int = 0
    _whitened: np.ndarray | None = field(default=None, init=False, repr=False)

    def __post_init__(self):
        self.atoms = list(self.atoms)
        if self.budget < 0:
            raise ConfigError(f"agent {self.agent_id!r}: budget must be nonnegative")
        ids = [a.atom_id for a in self.atoms]
        if len(set(ids)) != len(ids):
            raise ConfigError(f"agent {self.agent_id!r}: atom ids are not unique")

    def __len__(self) -> int:
        return len(self.atoms)

    @property
    def whitened(self) -> np.ndarray:
        if self._whitened is None:
            self._whitened = stack_whitened(self.atoms)
        return self._whitened

    def by_id(self) -> dict:
        return {a.atom_id: a for a in self.atoms}

    def with_budget(self, budget: int) -> "CandidatePool":
        pool = CandidatePool(self.agent_id, self.atoms, budget, self.dropped)
        pool._whitened = self._whitened
        return pool


@dataclass
class SelectionResult:
    chosen: list
    gains: list
    f: float
    evaluations: int
    algorithm: str
    agent_id: str = ""


@dataclass
class JointSelection:
    """Per-agent results plus the criterion of the union of all selections."""

    results: list
    joint_f: float
    algorithm: str

    @property
    def chosen(self) -> list:
        return [i for r in self.results for i in r.chosen]


def _pick(gains: np.ndarray, candidates: Sequence[int], atoms: Sequence[InfoAtom]) -> int:
    best = float(np.max(gains))
    tol = _tol(best)
    tied = [c for c, g in zip(candidates, gains) if g >= best - tol]
    return min(tied, key=lambda c: atoms[c].atom_id)


def _greedy(pool: CandidatePool, state: FimState, algorithm: str = "greedy"):
    atoms = pool.atoms
    n_picks = min(pool.budget, len(atoms))
    remaining = list(range(len(atoms)))
    W = pool.whitened
    chosen, gains = [], []
    evaluations = 0
    start_logdet = state.logdet
    for _ in range(n_picks):
        g = batch_gains(state, W[remaining])
        evaluations += len(remaining)
        j = _pick(g, remaining, atoms)
        # report the single-atom gain so batched and lazy runs agree bitwise
        gains.append(logdet_gain(state, atoms[j]))
        state = fim_push(state, atoms[j])
        chosen.append(atoms[j].atom_id)
        remaining.remove(j)
    result = SelectionResult(chosen, gains, state.logdet - start_logdet, evaluations, algorithm, pool.agent_id)
    return result, state


def greedy_select(pool: CandidatePool, base: np.ndarray) -> SelectionResult:
    """Greedy maximization of the log-det gain, one pick per budget unit."""
    return _greedy(pool, fim_init(base))[0]


def _lazy(pool: CandidatePool, state: FimState):
    atoms = pool.atoms
    n_picks = min(pool.budget, len(atoms))
    chosen, gains = [], []
    evaluations = 0
    start_logdet = state.logdet
    if n_picks == 0:
        return SelectionResult([], [], 0.0, 0, "lazy", pool.agent_id), state

    first = batch_gains(state, pool.whitened)
    evaluations += len(atoms)
    # gains computed at the current state; everything else sits in a heap of
    # stale upper bounds keyed by (-bound, atom_id, index)
    fresh = {i: float(g) for i, g in enumerate(first)}
    heap: list = []
    for _ in range(n_picks):
        while heap:
            best_fresh = max(fresh.values()) if fresh else -math.inf
            neg_ub, _, i = heap[0]
            if fresh and -neg_ub < best_fresh - _tol(best_fresh):
                break
            heapq.heappop(heap)
            fresh[i] = logdet_gain(state, atoms[i])
            evaluations += 1
        idx = list(fresh)
        vals = np.array([fresh[i] for i in idx])
        j = _pick(vals, idx, atoms)
        fresh.pop(j)
        gains.append(logdet_gain(state, atoms[j]))
        state = fim_push(state, atoms[j])
        chosen.append(atoms[j].atom_id)
        for i, g in fresh.items():
            heapq.heappush(heap, (-g, atoms[i].atom_id, i))
        fresh = {}
    result = SelectionResult(chosen, gains, state.logdet - start_logdet, evaluations, "lazy", pool.agent_id)
    return result, state


def lazy_greedy_select(pool: CandidatePool, base: np.ndarray) -> SelectionResult:
    """Accelerated greedy using stale gains as upper bounds (valid under diminishing returns).

    Produces the same picks, in the same order, as :func:`greedy_select`.
    """
    return _lazy(pool, fim_init(base))[0]


def _score(order: Sequence[InfoAtom], base: np.ndarray):
    state = fim_init(base)
    gains = []
    for atom in order:
        gains.append(logdet_gain(state, atom))
        state = fim_push(state, atom)
    return gains, state


def random_select(pool: CandidatePool, seed: int, base: np.ndarray | None = None) -> SelectionResult:
    """Uniform sample without replacement; scored against ``base`` when given."""
    k = min(pool.budget, len(pool.atoms))
    rng = np.random.default_rng(seed)
    picks = rng.choice(len(pool.atoms), size=k, replace=False) if k else np.zeros(0, dtype=int)
    order = [pool.atoms[int(i)] for i in picks]
    if base is None:
        gains, f = [math.nan] * k, math.nan
    else:
        gains, state = _score(order, base)
        f = state.f
    return SelectionResult([a.atom_id for a in order], gains, f, 0, "random", pool.agent_id)


def _subset_logdets(Q: np.ndarray, base: np.ndarray, combos: np.ndarray, chunk: int = 20000) -> np.ndarray:
    out = np.empty(len(combos))
    for lo in range(0, len(combos), chunk):
        c = combos[lo : lo + chunk]
        totals = base + Q[c].sum(axis=1) if c.shape[1] else np.broadcast_to(base, (len(c), *base.shape))
        out[lo : lo + chunk] = np.linalg.slogdet(totals)[1]
    return out


def brute_force_select(pool: CandidatePool, base: np.ndarray, max_combinations: int = MAX_COMBINATIONS) -> SelectionResult:
    """Exhaustive maximizer over all subsets of size at most the budget.

    Ties go to the lexicographically smallest sorted id tuple.
    """
    base = np.asarray(base, dtype=float)
    atoms = sorted(pool.atoms, key=lambda a: a.atom_id)
    n = len(atoms)
    k = min(pool.budget, n)
    if math.comb(n, k) > max_combinations:
        raise OracleGuardError(f"C({n}, {k}) = {math.comb(n, k)} subsets exceeds the oracle guard {max_combinations}")
    Q = np.array([a.information() for a in atoms]).reshape(n, *base.shape)
    base_ld = np.linalg.slogdet(base)[1]
    best_f, best_ids, evaluations = 0.0, (), 1
    for size in range(1, k + 1):
        combos = np.array(list(itertools.combinations(range(n), size)), dtype=int)
        values = _subset_logdets(Q, base, combos) - base_ld
        evaluations += len(combos)
        for combo, f in zip(combos, values):
            ids = tuple(atoms[i].atom_id for i in combo)
            if f > best_f + _tol(best_f) or (abs(f - best_f) <= _tol(best_f) and ids < best_ids):
                best_f, best_ids = float(f), ids
    by_id = pool.by_id()
    gains, state = _score([by_id[i] for i in best_ids], base)
    return SelectionResult(list(best_ids), gains, state.f, evaluations, "oracle", pool.agent_id)


def brute_force_joint(pools: Sequence[CandidatePool], q0: np.ndarray, max_combinations: int = MAX_COMBINATIONS) -> JointSelection:
    """Exhaustive joint optimum over the product of the agents' feasible sets.

    The criterion is monotone, so only full-budget subsets are enumerated.
    """
    q0 = np.asarray(q0, dtype=float)
    per_agent = []
    count = 1
    for pool in pools:
        atoms = sorted(pool.atoms, key=lambda a: a.atom_id)
        k = min(pool.budget, len(atoms))
        per_agent.append([tuple(c) for c in itertools.combinations(atoms, k)])
        count *= len(per_agent[-1])
    if count > max_combinations:
        raise OracleGuardError(f"{count} joint subsets exceed the oracle guard {max_combinations}")
    base_ld = np.linalg.slogdet(q0)[1]
    info = [{c: sum((a.information() for a in c), np.zeros_like(q0)) for c in subsets} for subsets in per_agent]
    best_f, best = -math.inf, None
    for choice in itertools.product(*per_agent):
        total = q0 + sum(info[i][c] for i, c in enumerate(choice))
        f = float(np.linalg.slogdet(total)[1] - base_ld)
        if best is None or f > best_f + _tol(best_f):
            best_f, best = f, choice
    state = fim_init(q0)
    results = []
    for pool, subset in zip(pools, best or [() for _ in pools]):
        start = state.logdet
        gains = []
        for atom in subset:
            gains.append(logdet_gain(state, atom))
            state = fim_push(state, atom)
        results.append(SelectionResult([a.atom_id for a in subset], gains, state.logdet - start, 0, "oracle", pool.agent_id))
    return JointSelection(results, max(best_f, 0.0) if best else 0.0, "oracle")


def cooperative_select(pools: Sequence[CandidatePool], q0: np.ndarray) -> JointSelection:
    """Sequential greedy: each agent selects against the information already shared.

    Agent ``i`` starts from ``q0`` plus the information of every selection made
    by agents ``1..i-1`` (list order). Each result's ``f`` is measured against
    the base that agent received; ``joint_f`` is measured against ``q0``.
    Atom ids must be unique across pools.
    """
    state = fim_init(q0)
    results = []
    for pool in pools:
        result, state = _greedy(pool, state, "cooperative")
        results.append(result)
    return JointSelection(results, state.f, "cooperative")


def independent_select(pools: Sequence[CandidatePool], q0: np.ndarray) -> JointSelection:
    """Every agent runs greedy against ``q0`` alone; no information is exchanged."""
    results = [_greedy(pool, fim_init(q0), "independent")[0] for pool in pools]
    return JointSelection(results, joint_value(pools, results, q0), "independent")


def joint_value(pools: Sequence[CandidatePool], results: Sequence[SelectionResult], q0: np.ndarray) -> float:
    """Criterion of the union of several agents' selections, relative to ``q0``."""
    lookup = {}
    for pool in pools:
        lookup.update(pool.by_id())
    state = fim_init(q0)
    for r in results:
        for i in r.chosen:
            state = fim_push(state, lookup[i])
    return state.f
