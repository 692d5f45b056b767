"""Model containers and built-in model families.

A state-space model here is a bundle of vectorized callables working in
log space: an initial law, a transition density and sampler, and
per-time observation log-likelihoods with the observation sequence
baked in at construction.  Three families are provided:

* a linear Gaussian AR(1) model observed in Gaussian noise,
* a stochastic volatility model (AR(1) log-volatility, scale-mixture
  observations),
* a finite-state chain with strictly positive transition matrix, which
  doubles as the exact-oracle substrate because its smoothing
  distributions can be computed in closed form.

States are scalars: floats for the continuous families, integer labels
``0..K-1`` for the finite chain.  All density callables accept numpy
arrays and broadcast.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

_LOG_2PI = math.log(2.0 * math.pi)


def _normal_logpdf(x, mean, sd):
    z = (np.asarray(x, dtype=float) - mean) / sd
    return -0.5 * z * z - np.log(sd) - 0.5 * _LOG_2PI


@dataclass(frozen=True)
class MixingBounds:
    """Two-sided bounds on the transition density plus a likelihood floor.

    Attributes
    ----------
    sigma_minus : float
        Lower bound on the transition density, > 0.
    sigma_plus : float
        Upper bound on the transition density.  ``sigma_minus ==
        sigma_plus`` is allowed (constant kernel); then ``rho == 0``.
    c_minus : float
        Lower bound on the one-step predictive likelihood mass, > 0.
    """

    sigma_minus: float
    sigma_plus: float
    c_minus: float

    def __post_init__(self):
        if not (0.0 < self.sigma_minus <= self.sigma_plus):
            raise ValueError(
                "mixing bounds need 0 < sigma_minus <= sigma_plus, got "
                f"[{self.sigma_minus}, {self.sigma_plus}]"
            )
        if not self.c_minus > 0.0:
            raise ValueError(f"c_minus must be positive, got {self.c_minus}")

    @property
    def rho(self) -> float:
        """Mixing rate ``1 - sigma_minus / sigma_plus``, in [0, 1)."""
        return 1.0 - self.sigma_minus / self.sigma_plus


@dataclass(frozen=True)
class FiniteModelData:
    """Raw matrices of a finite-state model, kept for exact oracles.

    Attributes
    ----------
    transition : ndarray, shape (K, K)
        Row-stochastic transition matrix.
    emissions : ndarray, shape (n_steps, K)
        Per-time observation likelihoods; row t holds g_t over states.
    initial : ndarray, shape (K,)
        Initial distribution over states.
    """

    transition: np.ndarray
    emissions: np.ndarray
    initial: np.ndarray

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def independent(self) -> bool:
        """True when every transition row is identical, i.e. the next
        state does not depend on the current one."""
        return bool(np.all(self.transition == self.transition[0]))


@dataclass(frozen=True)
class StateSpaceModel:
    """A state-space model with observations baked in.

    Attributes
    ----------
    initial_sampler : callable (rng, n) -> ndarray
        Draw n states from the initial law.
    initial_log_density : callable (x) -> ndarray
        Log density of the initial law, elementwise.
    transition_log_density : callable (x, x_next) -> ndarray
        Log transition density; broadcasts over both arguments.
    transition_sampler : callable (x, rng) -> ndarray
        One transition draw per entry of x.
    observation_log_density : callable (t, x) -> ndarray
        Log likelihood of the observation at time t, as a function of
        the state; the observation itself is closed over.
    n_observations : int
        Number of time points with a defined observation term.
    state_dtype : numpy dtype
        Dtype of state arrays (float64 or int64).
    mixing_bounds : MixingBounds or None
        Present only when two-sided transition-density bounds actually
        hold; unbounded state spaces leave it None.
    finite : FiniteModelData or None
        Exact-oracle hook, populated for finite-state models.
    """

    initial_sampler: Callable[[np.random.Generator, int], np.ndarray]
    initial_log_density: Callable[[np.ndarray], np.ndarray]
    transition_log_density: Callable[[np.ndarray, np.ndarray], np.ndarray]
    transition_sampler: Callable[[np.ndarray, np.random.Generator], np.ndarray]
    observation_log_density: Callable[[int, np.ndarray], np.ndarray]
    n_observations: int
    state_dtype: np.dtype = field(default=np.dtype(np.float64))
    mixing_bounds: MixingBounds | None = None
    finite: FiniteModelData | None = None


@dataclass(frozen=True)
class AuxiliaryProposal:
    """Instrumental ingredients of an auxiliary particle filter.

    Attributes
    ----------
    adjustment_log_weight : callable (t, x) -> ndarray
        Log of the selection adjustment applied to the time t-1 cloud
        before propagating to time t.
    proposal_log_density : callable (t, x, x_next) -> ndarray
        Log density of the propagation kernel at time t.
    proposal_sampler : callable (t, x, rng) -> ndarray
        One propagation draw per entry of x.
    initial_instrumental_log_density : callable (x) -> ndarray
        Log density of the time-0 instrumental law.
    initial_instrumental_sampler : callable (rng, n) -> ndarray
        Draw n states from the time-0 instrumental law.
    """

    adjustment_log_weight: Callable[[int, np.ndarray], np.ndarray]
    proposal_log_density: Callable[[int, np.ndarray, np.ndarray], np.ndarray]
    proposal_sampler: Callable[[int, np.ndarray, np.random.Generator], np.ndarray]
    initial_instrumental_log_density: Callable[[np.ndarray], np.ndarray]
    initial_instrumental_sampler: Callable[[np.random.Generator, int], np.ndarray]


@dataclass(frozen=True)
class AdditiveFunctional:
    """A lagged additive path functional ``sum_{t=lag}^{horizon} h_t``.

    Each term h_t takes ``lag + 1`` consecutive states
    ``x_{t-lag}, ..., x_t`` and returns a real value; ``term`` is
    called as ``term(t, x_minus_lag, ..., x_t)`` with array arguments
    that broadcast.

    ``oscillation`` is an optional declared bound on the oscillation of
    every term; it is consumed only by theory-bound overlays, never by
    the estimators.
    """

    lag: int
    horizon: int
    term: Callable[..., np.ndarray]
    oscillation: float | None = None

    def __post_init__(self):
        if self.lag < 0:
            raise ValueError(f"lag must be >= 0, got {self.lag}")
        if self.horizon < self.lag:
            raise ValueError(
                f"horizon {self.horizon} is smaller than lag {self.lag}"
            )
        if self.oscillation is not None and not self.oscillation >= 0.0:
            raise ValueError("oscillation bound must be nonnegative")


def state_sum_functional(horizon: int) -> AdditiveFunctional:
    """Sum of the state over time: lag 0, ``h_t(x) = x``.

    Smoothing this functional yields the cumulative posterior mean of
    the latent path, the quantity the benchmark experiments estimate.
    """
    return AdditiveFunctional(lag=0, horizon=horizon, term=lambda t, x: x)


def make_lgm(
    phi: float,
    sigma_u: float,
    sigma_v: float,
    observations: Sequence[float],
    mixing_bounds: MixingBounds | None = None,
) -> StateSpaceModel:
    """Linear Gaussian model observed in Gaussian noise.

    The state follows ``X_{t+1} = phi X_t + sigma_u U_t`` with standard
    Gaussian noise, started from its stationary law
    ``N(0, sigma_u^2 / (1 - phi^2))``, and ``Y_t = X_t + sigma_v V_t``.

    Parameters
    ----------
    phi : float
        Autoregression coefficient, |phi| < 1.
    sigma_u, sigma_v : float
        State and observation noise scales, > 0.
    observations : sequence of float
        The observed sequence y_0, ..., y_T, baked into the model.
    mixing_bounds : MixingBounds, optional
        The Gaussian kernel has no two-sided density bounds on the real
        line, so none are attached by default; callers restricting the
        state to a compact set may supply their own.
    """
    if not abs(phi) < 1.0:
        raise ValueError(f"|phi| must be < 1 for a stationary state, got {phi}")
    if not sigma_u > 0.0:
        raise ValueError(f"sigma_u must be positive, got {sigma_u}")
    if not sigma_v > 0.0:
        raise ValueError(f"sigma_v must be positive, got {sigma_v}")
    y = np.asarray(observations, dtype=float)
    if y.ndim != 1 or y.size == 0:
        raise ValueError("observations must be a nonempty 1-d sequence")

    initial_sd = sigma_u / math.sqrt(1.0 - phi * phi)

    def initial_sampler(rng, n):
        return rng.normal(0.0, initial_sd, size=n)

    def initial_log_density(x):
        return _normal_logpdf(x, 0.0, initial_sd)

    def transition_log_density(x, x_next):
        return _normal_logpdf(x_next, phi * np.asarray(x, dtype=float), sigma_u)

    def transition_sampler(x, rng):
        x = np.asarray(x, dtype=float)
        return rng.normal(phi * x, sigma_u)

    def observation_log_density(t, x):
        return _normal_logpdf(y[t], np.asarray(x, dtype=float), sigma_v)

    return StateSpaceModel(
        initial_sampler=initial_sampler,
        initial_log_density=initial_log_density,
        transition_log_density=transition_log_density,
        transition_sampler=transition_sampler,
        observation_log_density=observation_log_density,
        n_observations=y.size,
        mixing_bounds=mixing_bounds,
    )


def make_svm(
    phi: float,
    sigma: float,
    beta: float,
    observations: Sequence[float],
    mixing_bounds: MixingBounds | None = None,
) -> StateSpaceModel:
    """Stochastic volatility model.

    The log-volatility follows the same stationary AR(1) state as the
    linear Gaussian model (scale ``sigma``); the observation is
    ``Y_t = beta exp(X_t / 2) V_t`` with standard Gaussian noise, so
    ``Y_t | X_t ~ N(0, beta^2 exp(X_t))``.
    """
    if not abs(phi) < 1.0:
        raise ValueError(f"|phi| must be < 1 for a stationary state, got {phi}")
    if not sigma > 0.0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if not beta > 0.0:
        raise ValueError(f"beta must be positive, got {beta}")
    y = np.asarray(observations, dtype=float)
    if y.ndim != 1 or y.size == 0:
        raise ValueError("observations must be a nonempty 1-d sequence")

    initial_sd = sigma / math.sqrt(1.0 - phi * phi)
    log_beta = math.log(beta)

    def initial_sampler(rng, n):
        return rng.normal(0.0, initial_sd, size=n)

    def initial_log_density(x):
        return _normal_logpdf(x, 0.0, initial_sd)

    def transition_log_density(x, x_next):
        return _normal_logpdf(x_next, phi * np.asarray(x, dtype=float), sigma)

    def transition_sampler(x, rng):
        x = np.asarray(x, dtype=float)
        return rng.normal(phi * x, sigma)

    def observation_log_density(t, x):
        x = np.asarray(x, dtype=float)
        squared = (y[t] / beta) ** 2
        return -0.5 * (squared * np.exp(-x) + x) - log_beta - 0.5 * _LOG_2PI

    return StateSpaceModel(
        initial_sampler=initial_sampler,
        initial_log_density=initial_log_density,
        transition_log_density=transition_log_density,
        transition_sampler=transition_sampler,
        observation_log_density=observation_log_density,
        n_observations=y.size,
        mixing_bounds=mixing_bounds,
    )


def _row_categorical(rows: np.ndarray, u: np.ndarray) -> np.ndarray:
    # one draw per row; first index whose cumulative mass strictly
    # exceeds the uniform
    cdf = np.cumsum(rows, axis=1)
    cdf[:, -1] = 1.0
    return np.argmax(cdf > u[:, None], axis=1)


def make_finite_hmm(
    transition_matrix: Sequence[Sequence[float]],
    emission: Sequence[Sequence[float]],
    initial: Sequence[float],
) -> StateSpaceModel:
    """Finite-state chain with strictly positive transition matrix.

    States are the integer labels ``0..K-1`` under counting measure.
    Strict positivity of every transition entry is required, which
    makes the two-sided density bounds hold exactly; they are attached
    as ``mixing_bounds`` with

    * ``sigma_minus`` / ``sigma_plus`` the smallest / largest entry,
    * ``c_minus`` the smallest one-step predictive likelihood mass over
      the evaluated times (including the time-0 mass under the initial
      law).

    Parameters
    ----------
    transition_matrix : (K, K) array-like
        Rows must sum to 1 within 1e-12 and every entry must be > 0.
    emission : (n_steps, K) array-like
        Per-time observation likelihoods with the observations baked
        in: row t holds g_t evaluated at each state.  Entries must be
        strictly positive.
    initial : (K,) array-like
        Initial distribution; must sum to 1 within 1e-12.
    """
    P = np.asarray(transition_matrix, dtype=float)
    E = np.atleast_2d(np.asarray(emission, dtype=float))
    chi = np.asarray(initial, dtype=float)

    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise ValueError(f"transition matrix must be square, got shape {P.shape}")
    K = P.shape[0]
    if np.any(P <= 0.0):
        raise ValueError(
            "transition matrix entries must be strictly positive; "
            "a zero entry breaks the two-sided density bounds"
        )
    if np.max(np.abs(P.sum(axis=1) - 1.0)) > 1e-12:
        raise ValueError("transition matrix rows must sum to 1 within 1e-12")
    if E.shape[1] != K:
        raise ValueError(
            f"emission rows must have {K} columns, got {E.shape[1]}"
        )
    if np.any(E <= 0.0):
        raise ValueError("emission likelihoods must be strictly positive")
    if chi.shape != (K,):
        raise ValueError(f"initial distribution must have shape ({K},)")
    if np.any(chi < 0.0) or abs(chi.sum() - 1.0) > 1e-12:
        raise ValueError("initial distribution must be nonnegative and sum to 1")

    log_P = np.log(P)
    log_E = np.log(E)
    with np.errstate(divide="ignore"):
        log_chi = np.log(chi)

    predictive_floors = [float(chi @ E[0])]
    for t in range(1, E.shape[0]):
        predictive_floors.append(float(np.min(P @ E[t])))
    bounds = MixingBounds(
        sigma_minus=float(P.min()),
        sigma_plus=float(P.max()),
        c_minus=min(predictive_floors),
    )

    initial_cdf = np.cumsum(chi)
    initial_cdf[-1] = 1.0

    def initial_sampler(rng, n):
        return np.searchsorted(initial_cdf, rng.random(n), side="right").astype(np.int64)

    def initial_log_density(x):
        return log_chi[np.asarray(x, dtype=np.int64)]

    def transition_log_density(x, x_next):
        return log_P[np.asarray(x, dtype=np.int64), np.asarray(x_next, dtype=np.int64)]

    def transition_sampler(x, rng):
        x = np.atleast_1d(np.asarray(x, dtype=np.int64))
        return _row_categorical(P[x], rng.random(x.size))

    def observation_log_density(t, x):
        return log_E[t, np.asarray(x, dtype=np.int64)]

    return StateSpaceModel(
        initial_sampler=initial_sampler,
        initial_log_density=initial_log_density,
        transition_log_density=transition_log_density,
        transition_sampler=transition_sampler,
        observation_log_density=observation_log_density,
        n_observations=E.shape[0],
        state_dtype=np.dtype(np.int64),
        mixing_bounds=bounds,
        finite=FiniteModelData(transition=P, emissions=E, initial=chi),
    )


def bootstrap_proposal(model: StateSpaceModel) -> AuxiliaryProposal:
    """Proposal that propagates with the model's own transition kernel.

    The selection adjustment is identically 1 and the time-0
    instrumental law is the initial law itself, so the general
    importance weight collapses to the observation likelihood alone.
    """

    def adjustment_log_weight(t, x):
        return np.zeros(np.shape(x))

    def proposal_log_density(t, x, x_next):
        return model.transition_log_density(x, x_next)

    def proposal_sampler(t, x, rng):
        return model.transition_sampler(x, rng)

    return AuxiliaryProposal(
        adjustment_log_weight=adjustment_log_weight,
        proposal_log_density=proposal_log_density,
        proposal_sampler=proposal_sampler,
        initial_instrumental_log_density=model.initial_log_density,
        initial_instrumental_sampler=model.initial_sampler,
    )


def simulate_lgm(phi, sigma_u, sigma_v, horizon, rng):
    """Draw a latent path and observations from the linear Gaussian model.

    Draw order is fixed (all state noise first, then all observation
    noise) so the output is reproducible from the generator seed alone.
    Returns ``(x, y)`` arrays of length ``horizon + 1``.
    """
    if horizon < 0:
        raise ValueError(f"horizon must be >= 0, got {horizon}")
    if not abs(phi) < 1.0:
        raise ValueError(f"|phi| must be < 1, got {phi}")
    x = np.empty(horizon + 1)
    x[0] = rng.normal(0.0, sigma_u / math.sqrt(1.0 - phi * phi))
    for t in range(horizon):
        x[t + 1] = phi * x[t] + sigma_u * rng.normal()
    y = x + sigma_v * rng.normal(size=horizon + 1)
    return x, y


def simulate_svm(phi, sigma, beta, horizon, rng):
    """Draw a latent log-volatility path and observations.

    Same draw order convention as :func:`simulate_lgm`.
    """
    if horizon < 0:
        raise ValueError(f"horizon must be >= 0, got {horizon}")
    if not abs(phi) < 1.0:
        raise ValueError(f"|phi| must be < 1, got {phi}")
    x = np.empty(horizon + 1)
    x[0] = rng.normal(0.0, sigma / math.sqrt(1.0 - phi * phi))
    for t in range(horizon):
        x[t + 1] = phi * x[t] + sigma * rng.normal()
    y = beta * np.exp(x / 2.0) * rng.normal(size=horizon + 1)
    return x, y


def simulate_finite_hmm(transition_matrix, observation_matrix, initial, horizon, rng):
    """Draw a state path and discrete observations from a finite chain.

    ``observation_matrix[k, a]`` is the probability of emitting symbol
    ``a`` from state ``k``.  Returns ``(states, symbols)`` int arrays of
    length ``horizon + 1``.
    """
    P = np.asarray(transition_matrix, dtype=float)
    B = np.asarray(observation_matrix, dtype=float)
    chi = np.asarray(initial, dtype=float)
    if horizon < 0:
        raise ValueError(f"horizon must be >= 0, got {horizon}")
    if B.ndim != 2 or B.shape[0] != P.shape[0]:
        raise ValueError("observation matrix must have one row per state")
    if np.max(np.abs(B.sum(axis=1) - 1.0)) > 1e-12:
        raise ValueError("observation matrix rows must sum to 1 within 1e-12")

    states = np.empty(horizon + 1, dtype=np.int64)
    cdf0 = np.cumsum(chi)
    cdf0[-1] = 1.0
    states[0] = np.searchsorted(cdf0, rng.random(), side="right")
    Pcdf = np.cumsum(P, axis=1)
    Pcdf[:, -1] = 1.0
    for t in range(horizon):
        states[t + 1] = np.searchsorted(Pcdf[states[t]], rng.random(), side="right")
    symbols = _row_categorical(B[states], rng.random(horizon + 1))
    return states, symbols


def emissions_from_symbols(observation_matrix, symbols) -> np.ndarray:
    """Turn emitted symbols into the per-time likelihood rows a finite
    model wants: row t is ``observation_matrix[:, symbols[t]]``."""
    B = np.asarray(observation_matrix, dtype=float)
    idx = np.asarray(symbols, dtype=np.int64)
    return B[:, idx].T.copy()


def format_float(value: float) -> str:
    """Round-trip decimal rendering used by every CSV writer."""
    return format(float(value), ".17g")


def write_observations_csv(file, x_true, y) -> None:
    """Write a simulated sequence as ``t,x_true,y`` rows.

    ``file`` is a path or a text file object; text is UTF-8 with plain
    newlines and floats carry 17 significant digits.
    """
    x_true = np.asarray(x_true, dtype=float)
    y = np.asarray(y, dtype=float)
    if x_true.shape != y.shape or x_true.ndim != 1:
        raise ValueError("x_true and y must be 1-d arrays of equal length")

    def emit(handle):
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["t", "x_true", "y"])
        for t in range(x_true.size):
            writer.writerow([t, format_float(x_true[t]), format_float(y[t])])

    if isinstance(file, (str, bytes)) or hasattr(file, "__fspath__"):
        with open(file, "w", encoding="utf-8", newline="") as handle:
            emit(handle)
    else:
        emit(file)


def read_observations_csv(file):
    """Read a ``t,x_true,y`` CSV back into ``(x_true, y)`` arrays."""

    def parse(handle):
        reader = csv.reader(handle)
        header = next(reader, None)
        if header != ["t", "x_true", "y"]:
            raise ValueError(f"expected header t,x_true,y, got {header}")
        xs, ys = [], []
        for row in reader:
            if not row:
                continue
            xs.append(float(row[1]))
            ys.append(float(row[2]))
        if not ys:
            raise ValueError("no data rows in observations file")
        return np.asarray(xs), np.asarray(ys)

    if isinstance(file, io.TextIOBase):
        return parse(file)
    with open(file, "r", encoding="utf-8", newline="") as handle:
        return parse(handle)
