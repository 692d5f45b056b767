"""Replication harness for the variance-scaling experiments.

A grid names a model family, a functional, method names, horizons,
particle counts, a replicate count, and a master seed.  For each
horizon one observation sequence is generated from the master seed and
shared by every method and particle count at that horizon, so the
replicate scatter measures Monte Carlo variance conditional on the
data.  Each (method, horizon, N, replicate) cell derives its own seed
through :func:`smoothcore.rng.derive_seed`, which is what makes whole
grid runs byte-identical regardless of how many workers execute them.

The stream labels folded into seeds are fixed constants:

* observation data for horizon T: ``(master_seed, 0xDA7A, T)``
* replicate k of method m at (T, N): ``(master_seed, T, N, id(m), k)``

with method ids ffbs_backward=1, ffbs_forward=2, ffbsi_direct=3,
ffbsi_rejection=4, path_space=5.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, UnsupportedModelError
from .filtering import run_filter
from .models import (
    AdditiveFunctional,
    StateSpaceModel,
    bootstrap_proposal,
    emissions_from_symbols,
    format_float,
    make_finite_hmm,
    make_lgm,
    make_svm,
    simulate_finite_hmm,
    simulate_lgm,
    simulate_svm,
    state_sum_functional,
)
from .rng import derive_seed, make_rng
from .smoothing import (
    METHOD_FFBS_BACKWARD,
    METHOD_FFBS_FORWARD,
    METHOD_FFBSI_DIRECT,
    METHOD_FFBSI_REJECTION,
    METHOD_NAMES,
    METHOD_PATH_SPACE,
    ffbs_backward_additive,
    ffbs_forward_additive,
    ffbsi_estimate,
    ffbsi_rejection_sample_paths,
    ffbsi_sample_paths,
    path_space_estimate,
)
from .oracles import theory_bounds

METHOD_IDS = {
    METHOD_FFBS_BACKWARD: 1,
    METHOD_FFBS_FORWARD: 2,
    METHOD_FFBSI_DIRECT: 3,
    METHOD_FFBSI_REJECTION: 4,
    METHOD_PATH_SPACE: 5,
}

DATA_STREAM_LABEL = 0xDA7A

MODEL_TYPES = ("lgm", "svm", "finite")

_MODEL_PARAM_KEYS = {
    "lgm": {"phi", "sigma_u", "sigma_v"},
    "svm": {"phi", "sigma", "beta"},
    "finite": {"transition", "observation_matrix", "initial"},
}

TABLE_CSV_HEADER = "method,T,N,r,variance,mean,mean_wall_seconds,replicates"


@dataclass(frozen=True)
class ExperimentGrid:
    """Full specification of one replication experiment."""

    model_type: str
    model_params: dict
    methods: tuple[str, ...]
    horizons: tuple[int, ...]
    particle_counts: tuple[int, ...]
    replicates: int
    master_seed: int
    functional_lag: int = 0
    functional_kind: str = "state_sum"
    out: str | None = None

    def __post_init__(self):
        if self.model_type not in MODEL_TYPES:
            raise ValueError(
                f"model type must be one of {MODEL_TYPES}, got {self.model_type!r}"
            )
        unknown = set(self.model_params) - _MODEL_PARAM_KEYS[self.model_type]
        if unknown:
            raise ValueError(
                f"unknown {self.model_type} parameters: {sorted(unknown)}"
            )
        missing = _MODEL_PARAM_KEYS[self.model_type] - set(self.model_params)
        if missing:
            raise ValueError(
                f"missing {self.model_type} parameters: {sorted(missing)}"
            )
        if not self.methods:
            raise ValueError("at least one method is required")
        for m in self.methods:
            if m not in METHOD_NAMES:
                raise ValueError(f"unknown method {m!r}")
        if not self.horizons or any(t < 0 for t in self.horizons):
            raise ValueError("horizons must be nonempty and nonnegative")
        if not self.particle_counts or any(n < 1 for n in self.particle_counts):
            raise ValueError("particle counts must be nonempty and >= 1")
        if self.replicates < 2:
            raise ValueError(
                "at least 2 replicates are needed for an unbiased variance"
            )
        if self.functional_kind != "state_sum":
            raise ValueError(
                f"unknown functional kind {self.functional_kind!r}"
            )
        if self.functional_lag != 0:
            raise ValueError("the state_sum functional has lag 0")


@dataclass
class VarianceRow:
    """Aggregates of one (method, horizon, N) cell."""

    method: str
    horizon: int
    n_particles: int
    lag: int
    variance: float
    mean_estimate: float
    mean_wall_seconds: float
    replicates: int
    error: str | None = None


@dataclass
class VarianceTable:
    """Ordered collection of cell aggregates with CSV round-tripping."""

    rows: list[VarianceRow] = field(default_factory=list)

    @property
    def has_failures(self) -> bool:
        return any(row.error is not None for row in self.rows)

    def to_csv(self, file=None, zero_timings: bool = False) -> str | None:
        def emit(handle):
            handle.write(TABLE_CSV_HEADER + "\n")
            for row in self.rows:
                wall = 0.0 if zero_timings else row.mean_wall_seconds
                handle.write(
                    ",".join(
                        [
                            row.method,
                            str(row.horizon),
                            str(row.n_particles),
                            str(row.lag),
                            format_float(row.variance),
                            format_float(row.mean_estimate),
                            format_float(wall),
                            str(row.replicates),
                        ]
                    )
                    + "\n"
                )

        if file is None:
            buffer = io.StringIO()
            emit(buffer)
            return buffer.getvalue()
        if isinstance(file, (str, bytes)) or hasattr(file, "__fspath__"):
            with open(file, "w", encoding="utf-8", newline="") as handle:
                emit(handle)
            return None
        emit(file)
        return None

    @classmethod
    def from_csv(cls, file) -> "VarianceTable":
        def parse(handle):
            reader = csv.reader(handle)
            header = next(reader, None)
            if header != TABLE_CSV_HEADER.split(","):
                raise ValueError(
                    f"expected header {TABLE_CSV_HEADER}, got {header}"
                )
            rows = []
            for record in reader:
                if not record:
                    continue
                rows.append(
                    VarianceRow(
                        method=record[0],
                        horizon=int(record[1]),
                        n_particles=int(record[2]),
                        lag=int(record[3]),
                        variance=float(record[4]),
                        mean_estimate=float(record[5]),
                        mean_wall_seconds=float(record[6]),
                        replicates=int(record[7]),
                    )
                )
            return cls(rows=rows)

        if isinstance(file, io.TextIOBase):
            return parse(file)
        with open(file, "r", encoding="utf-8", newline="") as handle:
            return parse(handle)


def _require(condition, message, fieldname=None):
    if not condition:
        raise ConfigError(message, field=fieldname)


def grid_from_mapping(raw: dict) -> ExperimentGrid:
    """Validate a parsed config mapping into an ExperimentGrid.

    Unknown keys are errors everywhere, so typos fail loudly instead of
    silently running a different experiment.
    """
    _require(isinstance(raw, dict), "config root must be a JSON object")
    allowed = {"model", "methods", "T", "N", "replicates", "seed", "functional", "out"}
    unknown = set(raw) - allowed
    _require(not unknown, f"unknown top-level keys: {sorted(unknown)}")
    for key in ("model", "methods", "T", "N", "replicates", "seed", "functional"):
        _require(key in raw, "required key missing", fieldname=key)

    model = raw["model"]
    _require(isinstance(model, dict), "must be an object", fieldname="model")
    unknown = set(model) - {"type", "params"}
    _require(not unknown, f"unknown keys: {sorted(unknown)}", fieldname="model")
    _require("type" in model, "missing 'type'", fieldname="model")
    _require("params" in model, "missing 'params'", fieldname="model")
    _require(
        isinstance(model["params"], dict),
        "must be an object",
        fieldname="model.params",
    )

    methods = raw["methods"]
    _require(
        isinstance(methods, list) and methods,
        "must be a nonempty list",
        fieldname="methods",
    )
    horizons = raw["T"]
    _require(
        isinstance(horizons, list)
        and horizons
        and all(isinstance(t, int) and not isinstance(t, bool) for t in horizons),
        "must be a nonempty list of integers",
        fieldname="T",
    )
    counts = raw["N"]
    _require(
        isinstance(counts, list)
        and counts
        and all(isinstance(n, int) and not isinstance(n, bool) for n in counts),
        "must be a nonempty list of integers",
        fieldname="N",
    )
    replicates = raw["replicates"]
    _require(
        isinstance(replicates, int) and not isinstance(replicates, bool),
        "must be an integer",
        fieldname="replicates",
    )
    seed = raw["seed"]
    _require(
        isinstance(seed, int) and not isinstance(seed, bool),
        "must be an integer",
        fieldname="seed",
    )

    functional = raw["functional"]
    _require(
        isinstance(functional, dict), "must be an object", fieldname="functional"
    )
    unknown = set(functional) - {"r", "kind"}
    _require(
        not unknown, f"unknown keys: {sorted(unknown)}", fieldname="functional"
    )
    _require("r" in functional, "missing 'r'", fieldname="functional")
    _require("kind" in functional, "missing 'kind'", fieldname="functional")

    out = raw.get("out")
    if out is not None:
        _require(isinstance(out, str), "must be a string", fieldname="out")

    try:
        return ExperimentGrid(
            model_type=model["type"],
            model_params=dict(model["params"]),
            methods=tuple(methods),
            horizons=tuple(horizons),
            particle_counts=tuple(counts),
            replicates=replicates,
            master_seed=seed,
            functional_lag=functional["r"],
            functional_kind=functional["kind"],
            out=out,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> ExperimentGrid:
    """Read and validate a JSON grid config."""
    with open(path, "r", encoding="utf-8") as handle:
        text = handle.read()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(
            f"invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}"
        ) from exc
    return grid_from_mapping(raw)


def generate_grid_observations(grid: ExperimentGrid, horizon: int):
    """The shared observation payload for one horizon of a grid.

    Returns the array of observations for the continuous families, or
    the per-time emission likelihood rows for the finite family.
    """
    rng = make_rng(derive_seed(grid.master_seed, DATA_STREAM_LABEL, horizon))
    p = grid.model_params
    if grid.model_type == "lgm":
        _, y = simulate_lgm(p["phi"], p["sigma_u"], p["sigma_v"], horizon, rng)
        return y
    if grid.model_type == "svm":
        _, y = simulate_svm(p["phi"], p["sigma"], p["beta"], horizon, rng)
        return y
    _, symbols = simulate_finite_hmm(
        p["transition"], p["observation_matrix"], p["initial"], horizon, rng
    )
    return emissions_from_symbols(p["observation_matrix"], symbols)


def _build_model(model_type: str, params: dict, payload) -> StateSpaceModel:
    if model_type == "lgm":
        return make_lgm(params["phi"], params["sigma_u"], params["sigma_v"], payload)
    if model_type == "svm":
        return make_svm(params["phi"], params["sigma"], params["beta"], payload)
    return make_finite_hmm(params["transition"], payload, params["initial"])


def estimate_once(
    model: StateSpaceModel,
    functional: AdditiveFunctional,
    method: str,
    n_particles: int,
    seed: int,
):
    """Run one method once from one derived seed.

    Returns ``(value, wall_seconds)`` where the wall time spans the
    whole pipeline (filter included).  Asking for rejection sampling on
    a model without mixing bounds quietly runs the direct backward draw
    instead, which targets the same law.
    """
    rng = make_rng(seed)
    started = time.perf_counter()
    if method == METHOD_PATH_SPACE:
        estimate = path_space_estimate(
            model, bootstrap_proposal(model), functional, n_particles, rng, seed=seed
        )
        return estimate.value, time.perf_counter() - started

    history = run_filter(
        model, bootstrap_proposal(model), n_particles, functional.horizon, rng
    )
    if method == METHOD_FFBS_BACKWARD:
        estimate = ffbs_backward_additive(history, model, functional)
    elif method == METHOD_FFBS_FORWARD:
        estimate = ffbs_forward_additive(history, model, functional)
    elif method in (METHOD_FFBSI_DIRECT, METHOD_FFBSI_REJECTION):
        if method == METHOD_FFBSI_REJECTION and model.mixing_bounds is not None:
            paths = ffbsi_rejection_sample_paths(history, model, n_particles, rng)
        else:
            paths = ffbsi_sample_paths(history, model, n_particles, rng)
        estimate = ffbsi_estimate(paths, history, functional, method=method, seed=seed)
    else:
        raise ValueError(f"unknown method {method!r}")
    return estimate.value, time.perf_counter() - started


def _run_cell(payload: dict) -> dict:
    model = _build_model(
        payload["model_type"], payload["model_params"], payload["observations"]
    )
    horizon = payload["horizon"]
    method = payload["method"]
    n_particles = payload["n_particles"]
    functional = state_sum_functional(horizon)
    if (
        method == METHOD_FFBSI_REJECTION
        and model.mixing_bounds is None
    ):
        warnings.warn(
            f"model carries no mixing bounds at (T={horizon}, N={n_particles}); "
            "rejection sampling falls back to the direct backward draw",
            RuntimeWarning,
            stacklevel=2,
        )
    values = []
    walls = []
    error = None
    for k in range(payload["replicates"]):
        seed = derive_seed(
            payload["master_seed"], horizon, n_particles, METHOD_IDS[method], k
        )
        try:
            value, wall = estimate_once(model, functional, method, n_particles, seed)
        except Exception as exc:  # noqa: BLE001 - flagged, not swallowed
            error = f"replicate {k}: {type(exc).__name__}: {exc}"
            break
        values.append(value)
        walls.append(wall)
    if error is None:
        variance = float(np.var(values, ddof=1))
        mean = float(np.mean(values))
        wall = float(np.mean(walls))
    else:
        variance = math.nan
        mean = math.nan
        wall = math.nan
    return {
        "method": method,
        "horizon": horizon,
        "n_particles": n_particles,
        "lag": payload["lag"],
        "variance": variance,
        "mean_estimate": mean,
        "mean_wall_seconds": wall,
        "replicates": payload["replicates"],
        "error": error,
    }


def resolve_workers(workers: int | None) -> int:
    """Explicit argument wins; otherwise the SMOOTHCORE_THREADS
    environment variable; otherwise 1."""
    if workers is not None:
        if workers < 1:
            raise ValueError(f"workers must be >= 1, got {workers}")
        return workers
    env = os.environ.get("SMOOTHCORE_THREADS")
    if env:
        try:
            value = int(env)
        except ValueError as exc:
            raise ValueError(
                f"SMOOTHCORE_THREADS must be an integer, got {env!r}"
            ) from exc
        if value < 1:
            raise ValueError(f"SMOOTHCORE_THREADS must be >= 1, got {value}")
        return value
    return 1


def run_grid(grid: ExperimentGrid, workers: int | None = None) -> VarianceTable:
    """Run every (method, horizon, N) cell of the grid.

    Cells are independent tasks; rows come back in config order and
    their content does not depend on the worker count because every
    replicate's generator is keyed, never shared.  A replicate failure
    flags its row (variance and mean become NaN) and the rest of the
    grid still runs.
    """
    worker_count = resolve_workers(workers)
    observations = {
        horizon: generate_grid_observations(grid, horizon)
        for horizon in grid.horizons
    }
    payloads = [
        {
            "model_type": grid.model_type,
            "model_params": grid.model_params,
            "observations": observations[horizon],
            "horizon": horizon,
            "method": method,
            "n_particles": n_particles,
            "lag": grid.functional_lag,
            "replicates": grid.replicates,
            "master_seed": grid.master_seed,
        }
        for method in grid.methods
        for horizon in grid.horizons
        for n_particles in grid.particle_counts
    ]
    if worker_count == 1 or len(payloads) == 1:
        results = [_run_cell(p) for p in payloads]
    else:
        with ProcessPoolExecutor(max_workers=worker_count) as pool:
            results = list(pool.map(_run_cell, payloads))
    return VarianceTable(rows=[VarianceRow(**r) for r in results])


@dataclass(frozen=True)
class RegressionResult:
    """Least-squares slope of log variance against one log axis."""

    method: str
    axis: str
    slope: float
    stderr: float
    n_points: int
    fixed_value: int


def scaling_regression(
    table: VarianceTable,
    method: str,
    axis: str,
    fixed_value: int | None = None,
) -> RegressionResult:
    """Log-log slope of a method's variance along one grid axis.

    ``axis`` is ``"T"`` or ``"N"``; the other axis must be held fixed,
    either implicitly (only one value present) or via ``fixed_value``.
    """
    if axis not in ("T", "N"):
        raise ValueError(f"axis must be 'T' or 'N', got {axis!r}")
    rows = [
        row
        for row in table.rows
        if row.method == method and row.error is None and row.variance > 0.0
    ]
    if not rows:
        raise ValueError(f"no usable rows for method {method!r}")
    other = (lambda r: r.n_particles) if axis == "T" else (lambda r: r.horizon)
    if fixed_value is None:
        others = sorted({other(r) for r in rows})
        if len(others) != 1:
            raise ValueError(
                f"multiple values {others} on the non-regression axis; "
                "pass fixed_value to choose one"
            )
        fixed_value = others[0]
    rows = [r for r in rows if other(r) == fixed_value]
    xs = np.array(
        [r.horizon if axis == "T" else r.n_particles for r in rows], dtype=float
    )
    ys = np.array([r.variance for r in rows])
    if xs.size < 3:
        raise ValueError(f"need at least 3 points for a slope, got {xs.size}")
    if np.unique(xs).size < 2:
        raise ValueError("regression axis values are all equal")
    lx = np.log(xs)
    ly = np.log(ys)
    lx_centered = lx - lx.mean()
    sxx = float(lx_centered @ lx_centered)
    slope = float(lx_centered @ ly / sxx)
    intercept = float(ly.mean() - slope * lx.mean())
    residuals = ly - (intercept + slope * lx)
    dof = xs.size - 2
    sigma_sq = float(residuals @ residuals / dof) if dof > 0 else 0.0
    return RegressionResult(
        method=method,
        axis=axis,
        slope=slope,
        stderr=math.sqrt(sigma_sq / sxx),
        n_points=int(xs.size),
        fixed_value=int(fixed_value),
    )


@dataclass(frozen=True)
class BoundOverlay:
    """A theory-bound curve fitted to observed variances by one scale."""

    method: str
    scale: float
    predicted: tuple[float, ...]
    observed: tuple[float, ...]


def fit_bound_scale(
    table: VarianceTable, method: str, lag: int, oscillation: float
) -> BoundOverlay:
    """Least-squares scale matching observed variances to the squared
    Lq bound shape ``lq_error_factor^2 * (T - lag + 1) * osc^2 / N``.

    The bound's constant is existential, so overlays fit this single
    scale and compare shapes only.
    """
    rows = [
        row
        for row in table.rows
        if row.method == method and row.error is None and row.variance > 0.0
    ]
    if not rows:
        raise ValueError(f"no usable rows for method {method!r}")
    shapes = np.array(
        [
            theory_bounds(lag, row.horizon, row.n_particles).lq_error_factor ** 2
            * (row.horizon - lag + 1)
            * oscillation
            * oscillation
            / row.n_particles
            for row in rows
        ]
    )
    observed = np.array([row.variance for row in rows])
    scale = float(shapes @ observed / (shapes @ shapes))
    return BoundOverlay(
        method=method,
        scale=scale,
        predicted=tuple(float(s * scale) for s in shapes),
        observed=tuple(float(v) for v in observed),
    )
