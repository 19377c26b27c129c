import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from fimselect.fim import InfoAtom
from fimselect.select import CandidatePool

settings.register_profile("default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_spd(rng, p, floor=0.5):
    A = rng.standard_normal((p, p))
    return A @ A.T / p + floor * np.eye(p)


def random_atoms(rng, n, p, start_id=0, ranks=(1, 2), agent_id=""):
    """Atoms with random rank-1 or rank-2 whitened Jacobians and unit noise."""
    atoms = []
    for k in range(n):
        r = int(rng.choice(ranks))
        G = rng.standard_normal((r, p)) * rng.uniform(0.3, 2.0)
        atoms.append(InfoAtom(start_id + k, G, np.eye(r), agent_id=agent_id))
    return atoms


def random_pools(rng, n_agents, n_atoms, budget, p):
    pools, next_id = [], 0
    for a in range(n_agents):
        atoms = random_atoms(rng, n_atoms, p, next_id, agent_id=f"agent{a}")
        next_id += n_atoms
        pools.append(CandidatePool(f"agent{a}", atoms, budget))
    return pools


def dense_logdet(base, atoms):
    """Independent reference: eigenvalue sum of the dense total minus that of the base."""
    total = np.array(base, dtype=float)
    for a in atoms:
        total = total + a.jacobian.T @ np.linalg.solve(a.noise_cov, a.jacobian)
    return float(np.sum(np.log(np.linalg.eigvalsh(total))) - np.sum(np.log(np.linalg.eigvalsh(base))))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
