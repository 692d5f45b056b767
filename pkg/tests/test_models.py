import io
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import norm

import smoothcore as sc
from conftest import B2, CHI2, P2


def test_lgm_densities_match_reference_normals():
    rng = sc.make_rng(1)
    y = rng.normal(size=6)
    model = sc.make_lgm(0.9, 0.6, 1.0, y)
    xs = rng.normal(size=10)
    nexts = rng.normal(size=10)
    sd0 = 0.6 / math.sqrt(1 - 0.81)
    assert np.allclose(
        model.initial_log_density(xs), norm.logpdf(xs, 0.0, sd0), atol=1e-12
    )
    assert np.allclose(
        model.transition_log_density(xs, nexts),
        norm.logpdf(nexts, 0.9 * xs, 0.6),
        atol=1e-12,
    )
    for t in range(6):
        assert np.allclose(
            model.observation_log_density(t, xs),
            norm.logpdf(y[t], xs, 1.0),
            atol=1e-12,
        )


def test_svm_observation_density_matches_scale_mixture():
    rng = sc.make_rng(2)
    y = rng.normal(size=4)
    model = sc.make_svm(0.3, 0.5, 1.2, y)
    xs = rng.normal(size=10)
    # Y_t | X_t = x is centered Gaussian with scale beta * exp(x / 2)
    for t in range(4):
        assert np.allclose(
            model.observation_log_density(t, xs),
            norm.logpdf(y[t], 0.0, 1.2 * np.exp(xs / 2.0)),
            atol=1e-12,
        )


@pytest.mark.parametrize("build", ["lgm", "svm"])
def test_transition_density_integrates_to_one(build):
    rng = sc.make_rng(3)
    y = rng.normal(size=3)
    if build == "lgm":
        model = sc.make_lgm(0.9, 0.6, 1.0, y)
        spread = 0.6
    else:
        model = sc.make_svm(0.3, 0.5, 1.0, y)
        spread = 0.5
    sources = rng.normal(size=10)
    for x in sources:
        grid = np.linspace(0.9 * x - 10 * spread, 0.9 * x + 10 * spread, 4001)
        density = np.exp(model.transition_log_density(np.full_like(grid, x), grid))
        assert np.trapezoid(density, grid) == pytest.approx(1.0, abs=1e-6)


def test_bootstrap_weights_reduce_to_observation_density():
    rng = sc.make_rng(4)
    y = rng.normal(size=8)
    model = sc.make_svm(0.3, 0.5, 1.0, y)
    proposal = sc.bootstrap_proposal(model)
    for _ in range(100):
        t = int(rng.integers(1, 8))
        x = rng.normal(size=5)
        x_next = rng.normal(size=5)
        log_ratio = (
            model.transition_log_density(x, x_next)
            + model.observation_log_density(t, x_next)
            - proposal.adjustment_log_weight(t, x)
            - proposal.proposal_log_density(t, x, x_next)
        )
        assert np.allclose(
            log_ratio, model.observation_log_density(t, x_next), atol=1e-12
        )
    xs = rng.normal(size=64)
    assert np.allclose(
        proposal.initial_instrumental_log_density(xs),
        model.initial_log_density(xs),
        atol=1e-12,
    )


def test_finite_hmm_mixing_bounds_hand_values(hmm2):
    bounds = hmm2.mixing_bounds
    assert bounds.sigma_minus == pytest.approx(0.3, abs=0)
    assert bounds.sigma_plus == pytest.approx(0.7, abs=0)
    # chi . E0 = 0.6;  min_k (P E_t)_k = 0.35 (t in {1, 2}), 0.5 (t = 3)
    assert bounds.c_minus == pytest.approx(0.35, abs=1e-15)
    assert bounds.rho == pytest.approx(1.0 - 0.3 / 0.7)


@settings(max_examples=40, deadline=None)
@given(st.integers(min_value=0, max_value=2**32 - 1), st.integers(2, 4), st.integers(0, 4))
def test_finite_hmm_mixing_bounds_recomputed(seed, n_states, horizon):
    rng = sc.make_rng(seed)
    P = rng.uniform(0.1, 1.0, size=(n_states, n_states))
    P /= P.sum(axis=1, keepdims=True)
    E = rng.uniform(0.1, 1.0, size=(horizon + 1, n_states))
    chi = rng.uniform(0.1, 1.0, size=n_states)
    chi /= chi.sum()
    model = sc.make_finite_hmm(P, E, chi)
    bounds = model.mixing_bounds
    assert bounds.sigma_minus == P.min()
    assert bounds.sigma_plus == P.max()
    candidates = [float(chi @ E[0])]
    for t in range(1, horizon + 1):
        candidates.append(float(np.min(P @ E[t])))
    assert bounds.c_minus == pytest.approx(min(candidates), rel=1e-15)
    assert 0.0 <= bounds.rho < 1.0


def test_mixing_bounds_validation():
    with pytest.raises(ValueError):
        sc.MixingBounds(sigma_minus=0.0, sigma_plus=1.0, c_minus=0.1)
    with pytest.raises(ValueError):
        sc.MixingBounds(sigma_minus=0.8, sigma_plus=0.7, c_minus=0.1)
    with pytest.raises(ValueError):
        sc.MixingBounds(sigma_minus=0.1, sigma_plus=0.2, c_minus=0.0)
    flat = sc.MixingBounds(sigma_minus=0.5, sigma_plus=0.5, c_minus=0.5)
    assert flat.rho == 0.0


def test_model_constructor_validation():
    y = [0.1, 0.2]
    with pytest.raises(ValueError):
        sc.make_lgm(1.0, 0.6, 1.0, y)
    with pytest.raises(ValueError):
        sc.make_lgm(0.9, 0.0, 1.0, y)
    with pytest.raises(ValueError):
        sc.make_lgm(0.9, 0.6, -1.0, y)
    with pytest.raises(ValueError):
        sc.make_lgm(0.9, 0.6, 1.0, [])
    with pytest.raises(ValueError):
        sc.make_svm(-1.0, 0.5, 1.0, y)
    with pytest.raises(ValueError):
        sc.make_svm(0.3, 0.5, 0.0, y)


def test_finite_hmm_constructor_validation():
    E = np.array([[0.8, 0.3], [0.2, 0.7]])
    with pytest.raises(ValueError):
        sc.make_finite_hmm(np.array([[0.5, 0.5]]), E, CHI2)
    bad_rows = np.array([[0.7, 0.2], [0.4, 0.6]])
    with pytest.raises(ValueError):
        sc.make_finite_hmm(bad_rows, E, CHI2)
    zero_entry = np.array([[1.0, 0.0], [0.4, 0.6]])
    with pytest.raises(ValueError):
        sc.make_finite_hmm(zero_entry, E, CHI2)
    with pytest.raises(ValueError):
        sc.make_finite_hmm(P2, np.array([[0.8, 0.0], [0.2, 0.7]]), CHI2)
    with pytest.raises(ValueError):
        sc.make_finite_hmm(P2, np.array([[0.8], [0.2]]), CHI2)
    with pytest.raises(ValueError):
        sc.make_finite_hmm(P2, E, np.array([0.6, 0.5]))


def test_finite_hmm_densities_are_table_lookups(hmm2):
    x = np.array([0, 1, 0, 1])
    x_next = np.array([0, 0, 1, 1])
    expected = np.log(P2[x, x_next])
    assert np.allclose(hmm2.transition_log_density(x, x_next), expected, atol=1e-15)
    assert np.allclose(hmm2.initial_log_density(x), np.log(CHI2[x]), atol=1e-15)
    # fixture symbols are [0, 1, 1, 0]
    assert np.allclose(
        hmm2.observation_log_density(2, x), np.log(B2[x, 1]), atol=1e-15
    )
    assert hmm2.state_dtype == np.int64
    assert hmm2.finite.independent is False


def test_additive_functional_validation():
    with pytest.raises(ValueError):
        sc.AdditiveFunctional(lag=-1, horizon=3, term=lambda t, x: x)
    with pytest.raises(ValueError):
        sc.AdditiveFunctional(lag=4, horizon=3, term=lambda t, *xs: 0.0)
    with pytest.raises(ValueError):
        sc.AdditiveFunctional(lag=0, horizon=3, term=lambda t, x: x, oscillation=-1.0)
    f = sc.state_sum_functional(5)
    assert f.lag == 0 and f.horizon == 5
    assert f.term(3, 2.5) == 2.5


def test_simulation_shapes_and_reproducibility():
    x1, y1 = sc.simulate_lgm(0.9, 0.6, 1.0, 12, sc.make_rng(9))
    x2, y2 = sc.simulate_lgm(0.9, 0.6, 1.0, 12, sc.make_rng(9))
    assert x1.shape == y1.shape == (13,)
    assert np.array_equal(x1, x2) and np.array_equal(y1, y2)
    xs, ys = sc.simulate_svm(0.3, 0.5, 1.0, 7, sc.make_rng(9))
    assert xs.shape == ys.shape == (8,)
    states, symbols = sc.simulate_finite_hmm(P2, B2, CHI2, 9, sc.make_rng(11))
    assert states.shape == symbols.shape == (10,)
    assert set(np.unique(states)) <= {0, 1}
    assert set(np.unique(symbols)) <= {0, 1}


def test_finite_hmm_simulation_matches_chain_frequencies():
    # long single path: occupancy of state 0 near the stationary mass
    states, _ = sc.simulate_finite_hmm(P2, B2, CHI2, 200_000, sc.make_rng(5))
    stationary = 0.4 / 0.7  # pi solving pi P = pi for P2
    assert np.mean(states == 0) == pytest.approx(stationary, abs=0.01)


def test_emissions_from_symbols_hand_example():
    E = sc.emissions_from_symbols(B2, [1, 0])
    assert np.allclose(E, [[0.2, 0.7], [0.8, 0.3]])


def test_observations_csv_round_trip(tmp_path):
    rng = sc.make_rng(10)
    x = rng.normal(size=5)
    y = rng.normal(size=5)
    target = tmp_path / "obs.csv"
    sc.write_observations_csv(target, x, y)
    text = target.read_text(encoding="utf-8")
    assert text.startswith("t,x_true,y\n")
    assert "\r" not in text
    x_back, y_back = sc.read_observations_csv(target)
    assert np.array_equal(x, x_back)
    assert np.array_equal(y, y_back)


def test_observations_csv_rejects_bad_header():
    with pytest.raises(ValueError):
        sc.read_observations_csv(io.StringIO("time,x,y\n0,1,2\n"))


@given(st.floats(allow_nan=False, allow_infinity=False))
def test_float_formatting_round_trips(value):
    from smoothcore.models import format_float

    assert float(format_float(value)) == value
