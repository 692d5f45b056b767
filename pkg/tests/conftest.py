import numpy as np
import pytest
from scipy import stats

import smoothcore as sc

# 2-state chain used across files: strictly positive everywhere
P2 = np.array([[0.7, 0.3], [0.4, 0.6]])
B2 = np.array([[0.8, 0.2], [0.3, 0.7]])
CHI2 = np.array([0.6, 0.4])


def make_history(positions, log_weights, ancestors=None):
    """Hand-built history; ancestors default to zeros."""
    positions = np.asarray(positions)
    log_weights = np.asarray(log_weights, dtype=float)
    steps, n = positions.shape
    if ancestors is None:
        ancestors = np.zeros((steps - 1, n), dtype=np.int64)
    else:
        ancestors = np.asarray(ancestors, dtype=np.int64)
    return sc.ParticleHistory(
        positions=positions, log_weights=log_weights, ancestors=ancestors
    )


def random_hmm(rng, n_states, horizon):
    """Strictly positive random chain plus emissions for one simulated
    symbol sequence."""
    P = rng.uniform(0.2, 1.0, size=(n_states, n_states))
    P /= P.sum(axis=1, keepdims=True)
    B = rng.uniform(0.2, 1.0, size=(n_states, n_states))
    B /= B.sum(axis=1, keepdims=True)
    chi = rng.uniform(0.2, 1.0, size=n_states)
    chi /= chi.sum()
    _, symbols = sc.simulate_finite_hmm(P, B, chi, horizon, rng)
    E = sc.emissions_from_symbols(B, symbols)
    return P, E, chi


@pytest.fixture
def hmm2():
    """Fixed 2-state model over a fixed 4-symbol observation run."""
    symbols = np.array([0, 1, 1, 0])
    E = sc.emissions_from_symbols(B2, symbols)
    return sc.make_finite_hmm(P2, E, CHI2)


def run_hmm_filter(model, n_particles, horizon, seed):
    rng = sc.make_rng(seed)
    return sc.run_filter(
        model, sc.bootstrap_proposal(model), n_particles, horizon, rng
    )


def chi_square_pvalue(paths, probs_by_tuple, n_particles):
    """Goodness-of-fit p-value of sampled index paths against an
    enumerated path law (as a dict keyed by index tuples)."""
    horizon = paths.shape[1] - 1
    n_cells = n_particles ** (horizon + 1)
    code = np.zeros(paths.shape[0], dtype=np.int64)
    for t in range(horizon + 1):
        code = code * n_particles + paths[:, t]
    counts = np.bincount(code, minlength=n_cells)
    expected = np.empty(n_cells)
    for path, p in probs_by_tuple.items():
        idx = 0
        for entry in path:
            idx = idx * n_particles + entry
        expected[idx] = p * paths.shape[0]
    statistic = float(np.sum((counts - expected) ** 2 / expected))
    return float(stats.chi2.sf(statistic, n_cells - 1))
