import dataclasses
import math

import numpy as np
import pytest
from scipy import stats

import smoothcore as sc
from bruteforce import (
    brute_ffbs_value,
    normalized_filter_weights,
    path_functional_value,
    trajectory_probabilities,
)
from conftest import B2, CHI2, P2, chi_square_pvalue, make_history, run_hmm_filter


def small_hmm(horizon, symbols=None):
    if symbols is None:
        symbols = [0, 1, 0, 1, 0, 1][: horizon + 1]
    E = sc.emissions_from_symbols(B2, symbols)
    return sc.make_finite_hmm(P2, E, CHI2)


def lgm_case(horizon, n_particles, seed, phi=0.9):
    rng = sc.make_rng(seed)
    _, y = sc.simulate_lgm(phi, 0.6, 1.0, horizon, rng)
    model = sc.make_lgm(phi, 0.6, 1.0, y)
    history = sc.run_filter(
        model, sc.bootstrap_proposal(model), n_particles, horizon, rng
    )
    return model, history


def test_backward_row_hand_computed():
    model = small_hmm(1)
    history = make_history(
        positions=np.array([[0, 1, 0], [1, 0, 0]], dtype=np.int64),
        log_weights=np.log([[0.2, 0.5, 0.3], [1.0, 1.0, 1.0]]),
    )
    row = sc.backward_row(history, model, 0, 0)
    # weights (0.2, 0.5, 0.3) against P[x_j, 1] = (0.3, 0.6, 0.3)
    assert np.allclose(row.probabilities, [2 / 15, 10 / 15, 3 / 15], atol=1e-15)
    assert row.time_index == 0 and row.target_index == 0
    matrix = sc.backward_matrix(history, model, 0)
    assert np.allclose(matrix[0], row.probabilities, atol=1e-15)


def test_backward_rows_match_bruteforce_and_sum_to_one():
    model, history = lgm_case(horizon=4, n_particles=6, seed=31)
    from bruteforce import backward_transition

    for t in range(4):
        matrix = sc.backward_matrix(history, model, t)
        assert np.allclose(matrix.sum(axis=1), 1.0, atol=1e-12)
        assert np.allclose(matrix, backward_transition(history, model, t), atol=1e-12)


def test_single_particle_backward_row_is_trivial():
    model, history = lgm_case(horizon=3, n_particles=1, seed=5)
    for t in range(3):
        assert np.array_equal(
            sc.backward_row(history, model, t, 0).probabilities, [1.0]
        )


def test_backward_row_index_validation():
    model, history = lgm_case(horizon=2, n_particles=4, seed=6)
    with pytest.raises(IndexError):
        sc.backward_row(history, model, 2, 0)
    with pytest.raises(IndexError):
        sc.backward_row(history, model, -1, 0)
    with pytest.raises(IndexError):
        sc.backward_row(history, model, 0, 4)
    with pytest.raises(IndexError):
        sc.backward_matrix(history, model, 2)


def test_degenerate_backward_row_raises():
    model = small_hmm(1)
    original = model.transition_log_density

    def gapped(x, x_next):
        base = np.asarray(original(x, x_next), dtype=float)
        return np.where((np.asarray(x) == 1) & (np.asarray(x_next) == 1), -np.inf, base)

    broken = dataclasses.replace(model, transition_log_density=gapped)
    history = make_history(
        positions=np.array([[0, 1], [1, 1]], dtype=np.int64),
        log_weights=np.array([[-np.inf, 0.0], [0.0, 0.0]]),
    )
    with pytest.raises(sc.DegenerateBackwardRowError) as info:
        sc.backward_matrix(history, broken, 0)
    assert info.value.time_index == 0


def test_identity_kernel_rows_equal_filter_weights():
    # phi = 0 makes the transition density source-independent
    model, history = lgm_case(horizon=5, n_particles=32, seed=8, phi=0.0)
    for t in range(5):
        matrix = sc.backward_matrix(history, model, t)
        weights = sc.normalized_weights(history, t)
        assert np.max(np.abs(matrix - weights[None, :])) < 1e-12


@pytest.mark.parametrize("lag", [0, 1, 2])
def test_ffbs_backward_matches_enumeration_on_finite_chain(lag):
    horizon = 3
    model = small_hmm(horizon)
    history = run_hmm_filter(model, 3, horizon, seed=41)
    functional = sc.AdditiveFunctional(
        lag=lag,
        horizon=horizon,
        term=lambda t, *xs: (t + 1.0) * sum(np.asarray(x, dtype=float) for x in xs),
    )
    expected = brute_ffbs_value(history, model, functional)
    estimate = sc.ffbs_backward_additive(history, model, functional)
    assert estimate.value == pytest.approx(expected, rel=1e-9)
    assert estimate.method == "ffbs_backward"
    assert estimate.n_particles == 3 and estimate.horizon == horizon


@pytest.mark.parametrize("lag", [0, 1, 2])
def test_ffbs_backward_matches_enumeration_on_lgm(lag):
    model, history = lgm_case(horizon=2, n_particles=4, seed=51)
    functional = sc.AdditiveFunctional(
        lag=lag,
        horizon=2,
        term=lambda t, *xs: math.prod(
            (np.asarray(x, dtype=float) + 0.3 for x in xs), start=np.float64(1.0)
        ),
    )
    expected = brute_ffbs_value(history, model, functional)
    estimate = sc.ffbs_backward_additive(history, model, functional)
    assert estimate.value == pytest.approx(expected, rel=1e-9)


def test_finite_fast_path_agrees_with_generic_contraction():
    horizon = 6
    model = small_hmm(horizon, symbols=[0, 1, 1, 0, 0, 1, 0])
    history = run_hmm_filter(model, 40, horizon, seed=43)
    functional = sc.state_sum_functional(horizon)
    fast = sc.ffbs_backward_additive(history, model, functional)
    # strip the finite tables so the generic O(T N^2) path runs
    opaque = dataclasses.replace(model, finite=None)
    generic = sc.ffbs_backward_additive(history, opaque, functional)
    assert fast.value == pytest.approx(generic.value, rel=1e-12)


@pytest.mark.parametrize("lag", [0, 1, 2])
def test_constant_terms_sum_exactly(lag):
    model, history = lgm_case(horizon=5, n_particles=8, seed=61)
    functional = sc.AdditiveFunctional(
        lag=lag, horizon=5, term=lambda t, *xs: np.broadcast_arrays(
            np.asarray(2.5), *[np.asarray(x, dtype=float) for x in xs]
        )[0]
    )
    estimate = sc.ffbs_backward_additive(history, model, functional)
    assert estimate.value == pytest.approx(2.5 * (5 - lag + 1), rel=1e-12)


@pytest.mark.parametrize("lag", [0, 1])
def test_forward_equals_backward(lag):
    for seed in range(5):
        model, history = lgm_case(horizon=7, n_particles=20, seed=70 + seed)
        functional = sc.AdditiveFunctional(
            lag=lag,
            horizon=7,
            term=lambda t, *xs: sum(np.sin(np.asarray(x, dtype=float)) for x in xs),
        )
        backward = sc.ffbs_backward_additive(history, model, functional)
        forward = sc.ffbs_forward_additive(history, model, functional)
        assert forward.value == pytest.approx(backward.value, rel=1e-9)
        assert forward.method == "ffbs_forward"


def test_forward_accepts_a_live_stream():
    horizon = 6
    rng = sc.make_rng(77)
    _, y = sc.simulate_lgm(0.9, 0.6, 1.0, horizon, rng)
    model = sc.make_lgm(0.9, 0.6, 1.0, y)
    proposal = sc.bootstrap_proposal(model)
    functional = sc.state_sum_functional(horizon)
    stream_value = sc.ffbs_forward_additive(
        sc.filter_steps(model, proposal, 16, horizon, sc.make_rng(78)),
        model,
        functional,
    )
    history = sc.run_filter(model, proposal, 16, horizon, sc.make_rng(78))
    stored_value = sc.ffbs_forward_additive(history, model, functional)
    assert stream_value.value == pytest.approx(stored_value.value, rel=1e-12)


def test_forward_rejects_unsupported_lags_and_short_streams():
    model, history = lgm_case(horizon=4, n_particles=8, seed=81)
    too_deep = sc.AdditiveFunctional(
        lag=2, horizon=4, term=lambda t, a, b, c: a + b + c
    )
    with pytest.raises(sc.UnsupportedLagError):
        sc.ffbs_forward_additive(history, model, too_deep)
    short = sc.AdditiveFunctional(lag=0, horizon=9, term=lambda t, x: x)
    with pytest.raises(ValueError):
        sc.ffbs_forward_additive(history, model, short)


def ffbsi_small_case():
    horizon = 2
    model = small_hmm(horizon)
    history = run_hmm_filter(model, 3, horizon, seed=90)
    return model, history


def test_direct_sampler_law_matches_enumeration():
    model, history = ffbsi_small_case()
    probs = trajectory_probabilities(history, model)
    paths = sc.ffbsi_sample_paths(history, model, 50_000, sc.make_rng(91))
    assert paths.shape == (50_000, 3)
    assert chi_square_pvalue(paths, probs, 3) > 0.001


def test_rejection_sampler_law_matches_enumeration():
    model, history = ffbsi_small_case()
    probs = trajectory_probabilities(history, model)
    paths, counters = sc.ffbsi_rejection_sample_paths(
        history, model, 50_000, sc.make_rng(92), return_stats=True
    )
    assert chi_square_pvalue(paths, probs, 3) > 0.001
    assert counters.accepted + 0 <= counters.proposals
    floor = model.mixing_bounds.sigma_minus / model.mixing_bounds.sigma_plus
    assert counters.acceptance_rate > floor - 3.0 / np.sqrt(counters.proposals)


def test_rejection_fallback_still_targets_the_law():
    model, history = ffbsi_small_case()
    probs = trajectory_probabilities(history, model)
    paths, counters = sc.ffbsi_rejection_sample_paths(
        history, model, 50_000, sc.make_rng(93), max_rejections=1, return_stats=True
    )
    assert counters.fallbacks > 0
    assert chi_square_pvalue(paths, probs, 3) > 0.001


def test_flat_kernel_accepts_every_proposal():
    flat = np.array([[0.5, 0.5], [0.5, 0.5]])
    E = sc.emissions_from_symbols(B2, [0, 1, 0])
    model = sc.make_finite_hmm(flat, E, CHI2)
    assert model.mixing_bounds.rho == 0.0
    history = run_hmm_filter(model, 16, 2, seed=94)
    _, counters = sc.ffbsi_rejection_sample_paths(
        history, model, 2000, sc.make_rng(95), return_stats=True
    )
    assert counters.accepted == counters.proposals
    assert counters.fallbacks == 0


def test_rejection_needs_mixing_bounds():
    model, history = lgm_case(horizon=3, n_particles=8, seed=96)
    with pytest.raises(sc.UnsupportedModelError):
        sc.ffbsi_rejection_sample_paths(history, model, 10, sc.make_rng(0))


def test_marginal_law_on_identity_kernel():
    # with a source-independent kernel every backward row equals the
    # filter weights, so each J_t is categorical in them
    model, history = lgm_case(horizon=4, n_particles=5, seed=97, phi=0.0)
    paths = sc.ffbsi_sample_paths(history, model, 40_000, sc.make_rng(98))
    for t in (0, 2, 4):
        weights = sc.normalized_weights(history, t)
        counts = np.bincount(paths[:, t], minlength=5)
        expected = weights * paths.shape[0]
        statistic = float(np.sum((counts - expected) ** 2 / expected))
        assert stats.chi2.sf(statistic, 4) > 0.001


def test_ffbsi_mean_sits_near_the_ffbs_value():
    model, history = lgm_case(horizon=5, n_particles=12, seed=99)
    functional = sc.state_sum_functional(5)
    target = sc.ffbs_backward_additive(history, model, functional).value
    paths = sc.ffbsi_sample_paths(history, model, 20_000, sc.make_rng(100))
    estimate = sc.ffbsi_estimate(paths, history, functional)
    values = history.positions[np.arange(6)[None, :], paths].sum(axis=1)
    se = values.std(ddof=1) / np.sqrt(paths.shape[0])
    assert abs(estimate.value - target) < 4.0 * se
    assert estimate.value == pytest.approx(values.mean(), rel=1e-12)


def test_ffbsi_estimate_handles_lagged_terms():
    model, history = ffbsi_small_case()
    functional = sc.AdditiveFunctional(
        lag=1,
        horizon=2,
        term=lambda t, a, b: np.asarray(a, dtype=float)
        * (np.asarray(b, dtype=float) + 1.0),
    )
    paths = sc.ffbsi_sample_paths(history, model, 4, sc.make_rng(101))
    estimate = sc.ffbsi_estimate(paths, history, functional)
    expected = np.mean(
        [path_functional_value(history, tuple(p), functional) for p in paths]
    )
    assert estimate.value == pytest.approx(float(expected), rel=1e-12)


def test_ffbsi_estimate_validation():
    model, history = ffbsi_small_case()
    functional = sc.state_sum_functional(2)
    with pytest.raises(ValueError):
        sc.ffbsi_estimate(np.zeros((4, 2), dtype=np.int64), history, functional)
    bad = np.zeros((4, 3), dtype=np.int64)
    bad[0, 0] = 3
    with pytest.raises(ValueError):
        sc.ffbsi_estimate(bad, history, functional)


def test_rmse_scaling_halves_with_quadruple_particles():
    horizon = 10
    symbols = sc.simulate_finite_hmm(P2, B2, CHI2, horizon, sc.make_rng(103))[1]
    E = sc.emissions_from_symbols(B2, symbols)
    model = sc.make_finite_hmm(P2, E, CHI2)
    functional = sc.state_sum_functional(horizon)
    exact = sc.exact_hmm_smooth(model, functional)

    def rmse(n_particles, label):
        errors = np.empty(200)
        for k in range(200):
            history = run_hmm_filter(
                model, n_particles, horizon, sc.derive_seed(104, label, k)
            )
            value = sc.ffbs_backward_additive(history, model, functional).value
            errors[k] = value - exact
        return float(np.sqrt(np.mean(errors**2)))

    ratio = rmse(4000, 1) / rmse(1000, 0)
    assert 0.35 < ratio < 0.7


def test_path_space_at_horizon_zero_is_the_filter_estimate():
    rng = sc.make_rng(105)
    _, y = sc.simulate_lgm(0.9, 0.6, 1.0, 0, rng)
    model = sc.make_lgm(0.9, 0.6, 1.0, y)
    proposal = sc.bootstrap_proposal(model)
    functional = sc.state_sum_functional(0)
    estimate = sc.path_space_estimate(
        model, proposal, functional, 64, sc.make_rng(106)
    )
    history = sc.run_filter(model, proposal, 64, 0, sc.make_rng(106))
    assert estimate.value == pytest.approx(
        sc.filter_estimate(history, 0, lambda x: x), rel=1e-12
    )
    assert estimate.method == "path_space"


def test_single_particle_methods_all_agree():
    rng = sc.make_rng(107)
    _, y = sc.simulate_lgm(0.9, 0.6, 1.0, 6, rng)
    model = sc.make_lgm(0.9, 0.6, 1.0, y)
    proposal = sc.bootstrap_proposal(model)
    functional = sc.state_sum_functional(6)
    history = sc.run_filter(model, proposal, 1, 6, sc.make_rng(108))
    backward = sc.ffbs_backward_additive(history, model, functional).value
    forward = sc.ffbs_forward_additive(history, model, functional).value
    paths = sc.ffbsi_sample_paths(history, model, 3, sc.make_rng(109))
    sampled = sc.ffbsi_estimate(paths, history, functional).value
    genealogy = sc.path_space_estimate(
        model, proposal, functional, 1, sc.make_rng(108)
    ).value
    expected = float(history.positions.sum())
    for value in (backward, forward, sampled, genealogy):
        assert value == pytest.approx(expected, rel=1e-12)


def test_path_space_matches_ffbs_in_distribution_cheaply():
    # same smoothing target: two estimators agree within Monte Carlo
    # error on a moderate problem
    horizon = 15
    rng = sc.make_rng(110)
    _, y = sc.simulate_lgm(0.9, 0.6, 1.0, horizon, rng)
    model = sc.make_lgm(0.9, 0.6, 1.0, y)
    proposal = sc.bootstrap_proposal(model)
    functional = sc.state_sum_functional(horizon)
    replicates = 60
    ps = np.empty(replicates)
    fb = np.empty(replicates)
    for k in range(replicates):
        ps[k] = sc.path_space_estimate(
            model, proposal, functional, 300, sc.make_rng(sc.derive_seed(111, k))
        ).value
        history = sc.run_filter(
            model, proposal, 300, horizon, sc.make_rng(sc.derive_seed(112, k))
        )
        fb[k] = sc.ffbs_backward_additive(history, model, functional).value
    gap = ps.mean() - fb.mean()
    se = np.sqrt(ps.var(ddof=1) / replicates + fb.var(ddof=1) / replicates)
    assert abs(gap) < 4.0 * se


def test_estimate_csv_row_formatting():
    estimate = sc.SmoothingEstimate(
        method="ffbs_backward",
        value=1.5,
        n_particles=10,
        horizon=5,
        lag=0,
        seed=42,
        wall_seconds=3.25,
    )
    assert estimate.csv_row() == "ffbs_backward,5,10,0,42,1.5,3.25"
    assert estimate.csv_row(zero_timings=True) == "ffbs_backward,5,10,0,42,1.5,0"
    with pytest.raises(ValueError):
        sc.SmoothingEstimate(
            method="nonsense", value=0.0, n_particles=1, horizon=0, lag=0,
            seed=None, wall_seconds=0.0,
        )
