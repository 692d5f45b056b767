"""Particle smoothing of additive functionals in state-space models.

Forward filtering with auxiliary proposals, three smoothing estimators
(backward-recursion FFBS, forward-only FFBS, FFBSi trajectory sampling
with an optional rejection fast path), a path-space baseline, exact
oracles (Kalman/RTS, finite-chain smoothing, the closed-form asymptotic
variance of the path-space estimator), and a deterministic replication
harness for variance-scaling studies.
"""

from .errors import (
    ConfigError,
    DegenerateBackwardRowError,
    FilterDegeneracyError,
    UnsupportedLagError,
    UnsupportedModelError,
)
from .experiments import (
    BoundOverlay,
    ExperimentGrid,
    RegressionResult,
    VarianceRow,
    VarianceTable,
    estimate_once,
    fit_bound_scale,
    generate_grid_observations,
    grid_from_mapping,
    load_config,
    resolve_workers,
    run_grid,
    scaling_regression,
)
from .filtering import (
    FilterStep,
    ParticleHistory,
    categorical_indices,
    dump_history_csv,
    effective_sample_size,
    exp_normalize,
    filter_estimate,
    filter_steps,
    history_steps,
    normalized_weights,
    run_filter,
)
from .models import (
    AdditiveFunctional,
    AuxiliaryProposal,
    FiniteModelData,
    MixingBounds,
    StateSpaceModel,
    bootstrap_proposal,
    emissions_from_symbols,
    make_finite_hmm,
    make_lgm,
    make_svm,
    read_observations_csv,
    simulate_finite_hmm,
    simulate_lgm,
    simulate_svm,
    state_sum_functional,
    write_observations_csv,
)
from .oracles import (
    KalmanResult,
    TheoryBounds,
    exact_hmm_filter,
    exact_hmm_smooth,
    exact_hmm_smoothed_marginals,
    kalman_smooth,
    path_space_asymptotic_variance,
    quadrature_grid,
    theory_bounds,
    write_kalman_csv,
)
from .rng import derive_seed, make_rng, mix64
from .smoothing import (
    METHOD_FFBS_BACKWARD,
    METHOD_FFBS_FORWARD,
    METHOD_FFBSI_DIRECT,
    METHOD_FFBSI_REJECTION,
    METHOD_NAMES,
    METHOD_PATH_SPACE,
    RejectionStats,
    SmoothingEstimate,
    backward_matrix,
    backward_row,
    ffbs_backward_additive,
    ffbs_forward_additive,
    ffbsi_estimate,
    ffbsi_rejection_sample_paths,
    ffbsi_sample_paths,
    path_space_estimate,
)

__version__ = "0.1.0"

__all__ = [
    "AdditiveFunctional",
    "AuxiliaryProposal",
    "BoundOverlay",
    "ConfigError",
    "DegenerateBackwardRowError",
    "ExperimentGrid",
    "FilterDegeneracyError",
    "FilterStep",
    "FiniteModelData",
    "KalmanResult",
    "METHOD_FFBS_BACKWARD",
    "METHOD_FFBS_FORWARD",
    "METHOD_FFBSI_DIRECT",
    "METHOD_FFBSI_REJECTION",
    "METHOD_NAMES",
    "METHOD_PATH_SPACE",
    "MixingBounds",
    "ParticleHistory",
    "RegressionResult",
    "RejectionStats",
    "SmoothingEstimate",
    "StateSpaceModel",
    "TheoryBounds",
    "VarianceRow",
    "VarianceTable",
    "backward_matrix",
    "backward_row",
    "bootstrap_proposal",
    "categorical_indices",
    "derive_seed",
    "dump_history_csv",
    "effective_sample_size",
    "emissions_from_symbols",
    "estimate_once",
    "exact_hmm_filter",
    "exact_hmm_smooth",
    "exact_hmm_smoothed_marginals",
    "exp_normalize",
    "ffbs_backward_additive",
    "ffbs_forward_additive",
    "ffbsi_estimate",
    "ffbsi_rejection_sample_paths",
    "ffbsi_sample_paths",
    "filter_estimate",
    "filter_steps",
    "fit_bound_scale",
    "generate_grid_observations",
    "grid_from_mapping",
    "history_steps",
    "kalman_smooth",
    "load_config",
    "make_finite_hmm",
    "make_lgm",
    "make_svm",
    "make_rng",
    "mix64",
    "normalized_weights",
    "path_space_asymptotic_variance",
    "path_space_estimate",
    "quadrature_grid",
    "read_observations_csv",
    "resolve_workers",
    "run_filter",
    "run_grid",
    "scaling_regression",
    "simulate_finite_hmm",
    "simulate_lgm",
    "simulate_svm",
    "state_sum_functional",
    "theory_bounds",
    "write_kalman_csv",
    "write_observations_csv",
]
