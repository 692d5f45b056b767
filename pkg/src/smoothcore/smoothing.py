"""Smoothed additive functionals from a particle filter history.

Four estimator families share the same backward decomposition of the
smoothing distribution:

* ``ffbs_backward_additive`` contracts the additive terms against the
  backward marginal recursion (deterministic given the history,
  O(T N^2) for lag 0, O(T N^{r+2}) in general);
* ``ffbs_forward_additive`` computes the same value with a forward-only
  recursion over per-particle running statistics (lags 0 and 1);
* ``ffbsi_sample_paths`` / ``ffbsi_rejection_sample_paths`` draw index
  trajectories backwards and average the functional along them, the
  rejection variant replacing each O(N) row normalization with an
  accept/reject step under the transition density's upper bound;
* ``path_space_estimate`` never smooths at all: it propagates running
  sums through the filter's genealogy and reads off the weighted
  average at the final step.

Backward kernel rows are normalized in log space and are only
materialized as full matrices inside the O(N^2) deterministic paths.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import (
    DegenerateBackwardRowError,
    UnsupportedLagError,
    UnsupportedModelError,
)
from .filtering import (
    FilterStep,
    ParticleHistory,
    categorical_indices,
    exp_normalize,
    filter_steps,
    normalized_weights,
    stream_or_history,
)
from .models import (
    AdditiveFunctional,
    AuxiliaryProposal,
    StateSpaceModel,
    format_float,
)

METHOD_FFBS_BACKWARD = "ffbs_backward"
METHOD_FFBS_FORWARD = "ffbs_forward"
METHOD_FFBSI_DIRECT = "ffbsi_direct"
METHOD_FFBSI_REJECTION = "ffbsi_rejection"
METHOD_PATH_SPACE = "path_space"

METHOD_NAMES = (
    METHOD_FFBS_BACKWARD,
    METHOD_FFBS_FORWARD,
    METHOD_FFBSI_DIRECT,
    METHOD_FFBSI_REJECTION,
    METHOD_PATH_SPACE,
)

ESTIMATE_CSV_HEADER = "method,T,N,r,seed,estimate,wall_seconds"


@dataclass(frozen=True)
class SmoothingEstimate:
    """One smoothed-functional estimate with its run metadata."""

    method: str
    value: float
    n_particles: int
    horizon: int
    lag: int
    seed: int | None
    wall_seconds: float

    def __post_init__(self):
        if self.method not in METHOD_NAMES:
            raise ValueError(f"unknown method name {self.method!r}")

    def csv_row(self, zero_timings: bool = False) -> str:
        seed = "" if self.seed is None else str(self.seed)
        wall = 0.0 if zero_timings else self.wall_seconds
        return ",".join(
            [
                self.method,
                str(self.horizon),
                str(self.n_particles),
                str(self.lag),
                seed,
                format_float(self.value),
                format_float(wall),
            ]
        )


@dataclass(frozen=True)
class BackwardMatrixRow:
    """One backward kernel row: the distribution over time t particles
    conditioned on a target particle at time t+1."""

    time_index: int
    target_index: int
    probabilities: np.ndarray


@dataclass(frozen=True)
class ForwardSmoothingState:
    """Per-particle running statistics of the forward smoothing pass."""

    t: int
    statistics: np.ndarray


@dataclass(frozen=True)
class RejectionStats:
    """Counts from one rejection-sampling backward pass."""

    proposals: int
    accepted: int
    fallbacks: int

    @property
    def acceptance_rate(self) -> float:
        if self.proposals == 0:
            return math.nan
        return self.accepted / self.proposals


def _backward_log_numerators(
    history: ParticleHistory,
    model: StateSpaceModel,
    t: int,
    next_states: np.ndarray,
) -> np.ndarray:
    # entry [m, j] = log w_t^j + log m(x_t^j, next_states[m])
    sources = history.positions[t]
    return history.log_weights[t][None, :] + np.asarray(
        model.transition_log_density(sources[None, :], next_states[:, None]),
        dtype=float,
    )


def _normalize_rows(log_rows: np.ndarray, t: int, target_hint=None) -> np.ndarray:
    top = np.max(log_rows, axis=1, keepdims=True)
    bad = ~np.isfinite(top[:, 0])
    if np.any(bad):
        index = int(np.argmax(bad))
        target = index if target_hint is None else int(np.asarray(target_hint)[index])
        raise DegenerateBackwardRowError(t, target)
    rows = np.exp(log_rows - top)
    rows /= rows.sum(axis=1, keepdims=True)
    return rows


def backward_row(
    history: ParticleHistory,
    model: StateSpaceModel,
    t: int,
    target_index: int,
) -> BackwardMatrixRow:
    """Backward kernel row for one target particle at time t+1.

    The row reweights the time t cloud by the transition density into
    the target position and normalizes; it sums to 1 by construction.
    """
    if not 0 <= t <= history.horizon - 1:
        raise IndexError(
            f"backward rows exist for t in 0..{history.horizon - 1}, got {t}"
        )
    if not 0 <= target_index < history.n_particles:
        raise IndexError(f"target index {target_index} out of range")
    target = history.positions[t + 1][target_index : target_index + 1]
    log_rows = _backward_log_numerators(history, model, t, target)
    row = _normalize_rows(log_rows, t, [target_index])[0]
    return BackwardMatrixRow(
        time_index=t, target_index=target_index, probabilities=row
    )


def backward_matrix(
    history: ParticleHistory, model: StateSpaceModel, t: int
) -> np.ndarray:
    """All backward rows at time t as an (N, N) matrix; row i conditions
    on particle i at time t+1.  This is the O(N^2) materialization the
    deterministic smoothers use."""
    if not 0 <= t <= history.horizon - 1:
        raise IndexError(
            f"backward rows exist for t in 0..{history.horizon - 1}, got {t}"
        )
    log_rows = _backward_log_numerators(history, model, t, history.positions[t + 1])
    return _normalize_rows(log_rows, t)


def _check_functional(history: ParticleHistory, functional: AdditiveFunctional):
    if functional.horizon != history.horizon:
        raise ValueError(
            f"functional horizon {functional.horizon} does not match "
            f"history horizon {history.horizon}"
        )
    if functional.lag > history.horizon:
        raise ValueError(
            f"lag {functional.lag} exceeds horizon {history.horizon}"
        )


def _term_on_grid(
    functional: AdditiveFunctional, t: int, positions: np.ndarray
) -> np.ndarray:
    # evaluate h_t on the (r+1)-fold particle grid by broadcasting each
    # time slice along its own axis
    r = functional.lag
    n = positions.shape[1]
    slices = []
    for a in range(r + 1):
        shape = [1] * (r + 1)
        shape[a] = n
        slices.append(positions[t - r + a].reshape(shape))
    return np.asarray(functional.term(t, *slices), dtype=float)


def _ffbs_backward_generic(
    history: ParticleHistory,
    model: StateSpaceModel,
    functional: AdditiveFunctional,
) -> float:
    r = functional.lag
    horizon = history.horizon
    marginal = normalized_weights(history, horizon)
    total = 0.0
    for t in range(horizon, r - 1, -1):
        block = marginal
        step_back = None
        for k in range(1, r + 1):
            lam = backward_matrix(history, model, t - k)
            if k == 1:
                step_back = lam
            # prepend the time t-k axis without contracting anything
            block = np.einsum("ij,i...->ji...", lam, block)
        grid = _term_on_grid(functional, t, history.positions)
        total += float(np.sum(block * grid))
        if t > r:
            if step_back is None:
                step_back = backward_matrix(history, model, t - 1)
            marginal = marginal @ step_back
    return total


def _ffbs_backward_finite_lag0(
    history: ParticleHistory,
    model: StateSpaceModel,
    functional: AdditiveFunctional,
) -> float:
    # same sums as the generic path, associated through the K states of
    # a finite chain: O(T (N + K^2)) instead of O(T N^2)
    P = model.finite.transition
    K = P.shape[0]
    horizon = history.horizon
    marginal = normalized_weights(history, horizon)
    total = 0.0
    for t in range(horizon, -1, -1):
        values = np.asarray(
            functional.term(t, history.positions[t]), dtype=float
        )
        total += float(marginal @ values)
        if t == 0:
            break
        sources = np.asarray(history.positions[t - 1], dtype=np.int64)
        targets = np.asarray(history.positions[t], dtype=np.int64)
        logw = history.log_weights[t - 1]
        top = np.max(logw)
        if not np.isfinite(top):
            raise DegenerateBackwardRowError(t - 1)
        weights = np.exp(logw - top)
        weight_by_state = np.bincount(sources, weights=weights, minlength=K)
        denom_by_state = weight_by_state @ P
        denom = denom_by_state[targets]
        if np.any(denom <= 0.0):
            raise DegenerateBackwardRowError(
                t - 1, int(np.argmax(denom <= 0.0))
            )
        credit_by_state = np.bincount(
            targets, weights=marginal / denom, minlength=K
        )
        marginal = weights * (P @ credit_by_state)[sources]
    return total


def ffbs_backward_additive(
    history: ParticleHistory,
    model: StateSpaceModel,
    functional: AdditiveFunctional,
) -> SmoothingEstimate:
    """Deterministic smoothed estimate of an additive functional.

    Runs the backward marginal recursion from the final weights and
    contracts each term against the joint law of ``lag + 1``
    consecutive indices.  The lag 0 path on finite-state models uses an
    exact state-space regrouping of the same sums.
    """
    started = time.perf_counter()
    _check_functional(history, functional)
    if functional.lag == 0 and model.finite is not None:
        value = _ffbs_backward_finite_lag0(history, model, functional)
    else:
        value = _ffbs_backward_generic(history, model, functional)
    return SmoothingEstimate(
        method=METHOD_FFBS_BACKWARD,
        value=value,
        n_particles=history.n_particles,
        horizon=history.horizon,
        lag=functional.lag,
        seed=None,
        wall_seconds=time.perf_counter() - started,
    )


def ffbs_forward_additive(
    history_stream: ParticleHistory | Iterable[FilterStep],
    model: StateSpaceModel,
    functional: AdditiveFunctional,
) -> SmoothingEstimate:
    """Forward-only evaluation of the same smoothed value.

    Maintains one running statistic per particle and updates it through
    each new backward row, so it needs only the current and previous
    filter step.  Supports lags 0 and 1; the result matches
    :func:`ffbs_backward_additive` up to floating-point roundoff.
    """
    started = time.perf_counter()
    r = functional.lag
    if r not in (0, 1):
        raise UnsupportedLagError(
            f"forward smoothing supports lags 0 and 1, got {r}"
        )
    if isinstance(history_stream, ParticleHistory):
        _check_functional(history_stream, functional)
    steps = iter(stream_or_history(history_stream))

    first = next(steps)
    prev_positions = first.positions
    prev_log_weights = first.log_weights
    n = prev_positions.shape[0]
    if r == 0:
        statistics = np.asarray(functional.term(0, prev_positions), dtype=float)
    else:
        statistics = np.zeros(n)
    state = ForwardSmoothingState(t=0, statistics=statistics)
    last_log_weights = prev_log_weights

    for step in steps:
        t = step.t
        log_rows = prev_log_weights[None, :] + np.asarray(
            model.transition_log_density(
                prev_positions[None, :], step.positions[:, None]
            ),
            dtype=float,
        )
        rows = _normalize_rows(log_rows, t - 1)
        if r == 0:
            new_stats = rows @ state.statistics + np.asarray(
                functional.term(t, step.positions), dtype=float
            )
        else:
            pair_terms = np.asarray(
                functional.term(
                    t, prev_positions[None, :], step.positions[:, None]
                ),
                dtype=float,
            )
            new_stats = np.sum(
                rows * (state.statistics[None, :] + pair_terms), axis=1
            )
        state = ForwardSmoothingState(t=t, statistics=new_stats)
        prev_positions = step.positions
        prev_log_weights = step.log_weights
        last_log_weights = step.log_weights

    if state.t != functional.horizon:
        raise ValueError(
            f"stream ended at t={state.t}, functional horizon is "
            f"{functional.horizon}"
        )
    value = float(exp_normalize(last_log_weights) @ state.statistics)
    return SmoothingEstimate(
        method=METHOD_FFBS_FORWARD,
        value=value,
        n_particles=n,
        horizon=functional.horizon,
        lag=r,
        seed=None,
        wall_seconds=time.perf_counter() - started,
    )


def _sample_rows_for_targets(
    history: ParticleHistory,
    model: StateSpaceModel,
    t: int,
    target_indices: np.ndarray,
    uniforms: np.ndarray,
) -> np.ndarray:
    # exact inverse-CDF draw from the backward row of each target;
    # rows are computed once per distinct target
    unique_targets, inverse = np.unique(target_indices, return_inverse=True)
    log_rows = _backward_log_numerators(
        history, model, t, history.positions[t + 1][unique_targets]
    )
    rows = _normalize_rows(log_rows, t, unique_targets)
    cdf = np.cumsum(rows, axis=1)
    cdf[:, -1] = 1.0
    return np.argmax(cdf[inverse] > uniforms[:, None], axis=1).astype(np.int64)


def ffbsi_sample_paths(
    history: ParticleHistory,
    model: StateSpaceModel,
    n_paths: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Draw index trajectories from the backward smoothing law.

    The final index follows the normalized final weights; each earlier
    index is drawn from the backward row of its successor.  Returns an
    ``(n_paths, T+1)`` int array.
    """
    if n_paths < 1:
        raise ValueError(f"n_paths must be >= 1, got {n_paths}")
    horizon = history.horizon
    paths = np.empty((n_paths, horizon + 1), dtype=np.int64)
    final_weights = normalized_weights(history, horizon)
    paths[:, horizon] = categorical_indices(final_weights, rng.random(n_paths))
    for t in range(horizon - 1, -1, -1):
        paths[:, t] = _sample_rows_for_targets(
            history, model, t, paths[:, t + 1], rng.random(n_paths)
        )
    return paths


def ffbsi_rejection_sample_paths(
    history: ParticleHistory,
    model: StateSpaceModel,
    n_paths: int,
    rng: np.random.Generator,
    max_rejections: int | None = None,
    return_stats: bool = False,
):
    """Draw the same backward trajectories by rejection sampling.

    Proposes indices from the filter weights and accepts with
    probability ``transition_density / sigma_plus``, which realizes the
    backward row without normalizing it; each proposal is accepted with
    probability at least ``sigma_minus / sigma_plus``.  An index still
    pending after ``max_rejections`` proposals (default
    ``100 * ceil(sigma_plus / sigma_minus)``) falls back to the exact
    row draw.

    Requires the model to carry mixing bounds.  With
    ``return_stats=True`` also returns a :class:`RejectionStats`.
    """
    if n_paths < 1:
        raise ValueError(f"n_paths must be >= 1, got {n_paths}")
    bounds = model.mixing_bounds
    if bounds is None:
        raise UnsupportedModelError(
            "rejection sampling needs transition density bounds; "
            "this model carries none"
        )
    if max_rejections is None:
        max_rejections = 100 * math.ceil(bounds.sigma_plus / bounds.sigma_minus)
    if max_rejections < 1:
        raise ValueError(f"max_rejections must be >= 1, got {max_rejections}")
    log_sigma_plus = math.log(bounds.sigma_plus)

    horizon = history.horizon
    paths = np.empty((n_paths, horizon + 1), dtype=np.int64)
    final_weights = normalized_weights(history, horizon)
    paths[:, horizon] = categorical_indices(final_weights, rng.random(n_paths))

    proposals_made = 0
    accepted_count = 0
    fallback_count = 0

    for t in range(horizon - 1, -1, -1):
        weights = normalized_weights(history, t)
        cdf = np.cumsum(weights)
        cdf[-1] = 1.0
        sources = history.positions[t]
        successors = history.positions[t + 1][paths[:, t + 1]]

        drawn = np.empty(n_paths, dtype=np.int64)
        pending = np.arange(n_paths)
        for _ in range(max_rejections):
            if pending.size == 0:
                break
            candidates = np.searchsorted(
                cdf, rng.random(pending.size), side="right"
            ).astype(np.int64)
            log_density = np.asarray(
                model.transition_log_density(
                    sources[candidates], successors[pending]
                ),
                dtype=float,
            )
            with np.errstate(divide="ignore"):
                accept = np.log(rng.random(pending.size)) < (
                    log_density - log_sigma_plus
                )
            proposals_made += pending.size
            accepted_count += int(np.count_nonzero(accept))
            drawn[pending[accept]] = candidates[accept]
            pending = pending[~accept]
        if pending.size:
            fallback_count += pending.size
            drawn[pending] = _sample_rows_for_targets(
                history, model, t, paths[pending, t + 1], rng.random(pending.size)
            )
        paths[:, t] = drawn

    if return_stats:
        return paths, RejectionStats(
            proposals=proposals_made,
            accepted=accepted_count,
            fallbacks=fallback_count,
        )
    return paths


def ffbsi_estimate(
    trajectories: np.ndarray,
    history: ParticleHistory,
    functional: AdditiveFunctional,
    method: str = METHOD_FFBSI_DIRECT,
    seed: int | None = None,
) -> SmoothingEstimate:
    """Average the additive functional along sampled index trajectories."""
    started = time.perf_counter()
    _check_functional(history, functional)
    trajectories = np.asarray(trajectories)
    if trajectories.ndim != 2 or trajectories.shape[1] != history.horizon + 1:
        raise ValueError(
            "trajectories must be (n_paths, T+1) with the history's horizon"
        )
    if trajectories.size and (
        trajectories.min() < 0 or trajectories.max() >= history.n_particles
    ):
        raise ValueError("trajectory indices out of range for this history")

    steps = history.horizon + 1
    states = history.positions[np.arange(steps)[None, :], trajectories]
    r = functional.lag
    totals = np.zeros(trajectories.shape[0])
    for t in range(r, steps):
        args = [states[:, t - r + a] for a in range(r + 1)]
        totals += np.asarray(functional.term(t, *args), dtype=float)
    return SmoothingEstimate(
        method=method,
        value=float(np.mean(totals)),
        n_particles=history.n_particles,
        horizon=history.horizon,
        lag=r,
        seed=seed,
        wall_seconds=time.perf_counter() - started,
    )


def path_space_estimate(
    model: StateSpaceModel,
    proposal: AuxiliaryProposal,
    functional: AdditiveFunctional,
    n_particles: int,
    rng: np.random.Generator,
    seed: int | None = None,
) -> SmoothingEstimate:
    """Genealogy-based estimate of the smoothed additive functional.

    Runs the filter while each particle carries the running sum of the
    terms along its own ancestral line; resampling reshuffles those
    sums with the ancestors.  Returns the weighted average of the sums
    at the final step.  Memory stays O(N) in the horizon.
    """
    started = time.perf_counter()
    r = functional.lag
    sums = np.zeros(max(n_particles, 0))
    window: list[np.ndarray] = []
    last_step = None
    for step in filter_steps(
        model, proposal, n_particles, functional.horizon, rng
    ):
        if step.t > 0:
            sums = sums[step.ancestors]
            window = [w[step.ancestors] for w in window]
        if step.t >= r:
            sums = sums + np.asarray(
                functional.term(step.t, *window, step.positions), dtype=float
            )
        if r > 0:
            window.append(step.positions)
            if len(window) > r:
                window.pop(0)
        last_step = step
    value = float(exp_normalize(last_step.log_weights) @ sums)
    return SmoothingEstimate(
        method=METHOD_PATH_SPACE,
        value=value,
        n_particles=n_particles,
        horizon=functional.horizon,
        lag=r,
        seed=seed,
        wall_seconds=time.perf_counter() - started,
    )
