"""Command line interface.

Subcommands
-----------
generate    simulate a model and write ``t,x_true,y`` observations
smooth      one smoothed estimate from an observation file
experiment  run a replication grid from a JSON config
analyze     slopes (and optional bound overlays) from a variance table
oracle      exact reference values (kalman / hmm / gamma)

Exit codes: 0 on success, 1 when an estimator failed at runtime (a
flagged grid row counts), 2 for usage or config errors.

``--zero-timings`` writes wall-clock columns as 0 so two runs of the
same command are byte-identical; timings are the only nondeterministic
output.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .errors import ConfigError
from .experiments import (
    MODEL_TYPES,
    estimate_once,
    fit_bound_scale,
    load_config,
    run_grid,
    scaling_regression,
    VarianceTable,
)
from .models import (
    make_finite_hmm,
    read_observations_csv,
    simulate_lgm,
    simulate_svm,
    state_sum_functional,
    write_observations_csv,
    format_float,
)
from .oracles import (
    exact_hmm_smooth,
    kalman_smooth,
    path_space_asymptotic_variance,
    quadrature_grid,
    write_kalman_csv,
)
from .rng import make_rng
from .smoothing import ESTIMATE_CSV_HEADER, METHOD_NAMES, SmoothingEstimate


def _write_text(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        with open(out, "w", encoding="utf-8", newline="") as handle:
            handle.write(text)


def _continuous_params(args) -> dict:
    if args.model == "lgm":
        missing = [
            name
            for name, value in (
                ("--phi", args.phi),
                ("--sigma-u", args.sigma_u),
                ("--sigma-v", args.sigma_v),
            )
            if value is None
        ]
        if missing:
            raise ConfigError(f"lgm needs {' '.join(missing)}")
        return {"phi": args.phi, "sigma_u": args.sigma_u, "sigma_v": args.sigma_v}
    missing = [
        name
        for name, value in (
            ("--phi", args.phi),
            ("--sigma", args.sigma),
            ("--beta", args.beta),
        )
        if value is None
    ]
    if missing:
        raise ConfigError(f"svm needs {' '.join(missing)}")
    return {"phi": args.phi, "sigma": args.sigma, "beta": args.beta}


def _cmd_generate(args) -> int:
    rng = make_rng(args.seed)
    params = _continuous_params(args)
    if args.model == "lgm":
        x, y = simulate_lgm(
            params["phi"], params["sigma_u"], params["sigma_v"], args.horizon, rng
        )
    else:
        x, y = simulate_svm(
            params["phi"], params["sigma"], params["beta"], args.horizon, rng
        )
    if args.out is None:
        write_observations_csv(sys.stdout, x, y)
    else:
        write_observations_csv(args.out, x, y)
    return 0


def _cmd_smooth(args) -> int:
    from .models import make_lgm, make_svm

    _, y = read_observations_csv(args.data)
    params = _continuous_params(args)
    if args.model == "lgm":
        model = make_lgm(params["phi"], params["sigma_u"], params["sigma_v"], y)
    else:
        model = make_svm(params["phi"], params["sigma"], params["beta"], y)
    horizon = y.size - 1
    functional = state_sum_functional(horizon)
    value, wall = estimate_once(model, functional, args.method, args.n, args.seed)
    estimate = SmoothingEstimate(
        method=args.method,
        value=value,
        n_particles=args.n,
        horizon=horizon,
        lag=functional.lag,
        seed=args.seed,
        wall_seconds=wall,
    )
    text = ESTIMATE_CSV_HEADER + "\n" + estimate.csv_row(args.zero_timings) + "\n"
    _write_text(text, args.out)
    return 0


def _cmd_experiment(args) -> int:
    grid = load_config(args.config)
    table = run_grid(grid, workers=args.workers)
    out = args.out if args.out is not None else grid.out
    text = table.to_csv(zero_timings=args.zero_timings)
    _write_text(text, out)
    if table.has_failures:
        for row in table.rows:
            if row.error is not None:
                sys.stderr.write(
                    f"flagged: {row.method} T={row.horizon} N={row.n_particles}: "
                    f"{row.error}\n"
                )
        return 1
    return 0


def _cmd_analyze(args) -> int:
    table = VarianceTable.from_csv(args.table)
    regression = scaling_regression(
        table, args.method, args.axis, fixed_value=args.fixed
    )
    report = {
        "method": regression.method,
        "axis": regression.axis,
        "fixed_value": regression.fixed_value,
        "slope": regression.slope,
        "stderr": regression.stderr,
        "n_points": regression.n_points,
    }
    if args.overlay_osc is not None:
        overlay = fit_bound_scale(
            table, args.method, args.overlay_lag, args.overlay_osc
        )
        report["bound_overlay"] = {
            "scale": overlay.scale,
            "predicted": list(overlay.predicted),
            "observed": list(overlay.observed),
        }
    _write_text(json.dumps(report, indent=2) + "\n", args.out)
    return 0


def _load_oracle_config(path: str, *, want_functional: bool) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            raw = json.load(handle)
    except json.JSONDecodeError as exc:
        raise ConfigError(
            f"invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}"
        ) from exc
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    allowed = {"transition", "emissions", "initial"}
    if want_functional:
        allowed = allowed | {"functional"}
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigError(f"unknown keys: {sorted(unknown)}")
    for key in ("transition", "emissions", "initial"):
        if key not in raw:
            raise ConfigError("required key missing", field=key)
    functional = raw.get("functional", {"r": 0, "kind": "state_sum"})
    if not isinstance(functional, dict):
        raise ConfigError("must be an object", field="functional")
    if set(functional) - {"r", "kind"}:
        raise ConfigError("unknown keys", field="functional")
    if functional.get("kind", "state_sum") != "state_sum":
        raise ConfigError("only the state_sum kind exists", field="functional.kind")
    if functional.get("r", 0) != 0:
        raise ConfigError("state_sum has lag 0", field="functional.r")
    return raw


def _cmd_oracle(args) -> int:
    if args.oracle == "kalman":
        _, y = read_observations_csv(args.data)
        result = kalman_smooth(args.phi, args.sigma_u, args.sigma_v, y)
        if args.sum:
            _write_text(format_float(result.smoothed_state_sum) + "\n", args.out)
            return 0
        if args.out is None:
            write_kalman_csv(result, sys.stdout)
        else:
            write_kalman_csv(result, args.out)
        return 0

    if args.oracle == "hmm":
        raw = _load_oracle_config(args.config, want_functional=True)
        model = make_finite_hmm(raw["transition"], raw["emissions"], raw["initial"])
        horizon = model.n_observations - 1
        value = exact_hmm_smooth(model, state_sum_functional(horizon))
        _write_text(format_float(value) + "\n", args.out)
        return 0

    # gamma
    if args.config is not None:
        raw = _load_oracle_config(args.config, want_functional=True)
        model = make_finite_hmm(raw["transition"], raw["emissions"], raw["initial"])
        horizon = model.n_observations - 1
        value = path_space_asymptotic_variance(
            model, state_sum_functional(horizon)
        )
    else:
        if args.data is None:
            raise ConfigError("gamma needs --config or lgm flags with --data")
        from .models import make_lgm

        if args.phi is None or args.sigma_u is None or args.sigma_v is None:
            raise ConfigError("gamma on an lgm needs --phi --sigma-u --sigma-v")
        _, y = read_observations_csv(args.data)
        model = make_lgm(args.phi, args.sigma_u, args.sigma_v, y)
        grid = quadrature_grid(
            0.0,
            args.sigma_u / np.sqrt(1.0 - args.phi * args.phi),
            half_width_scales=args.grid_width,
            panels=args.grid_panels,
        )
        value = path_space_asymptotic_variance(
            model, state_sum_functional(y.size - 1), grid=grid
        )
    _write_text(format_float(value) + "\n", args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="smoothcore",
        description="Particle smoothing of additive functionals with exact oracles",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="simulate a model to CSV")
    gen.add_argument("--model", choices=("lgm", "svm"), required=True)
    gen.add_argument("--phi", type=float)
    gen.add_argument("--sigma-u", type=float, dest="sigma_u")
    gen.add_argument("--sigma-v", type=float, dest="sigma_v")
    gen.add_argument("--sigma", type=float)
    gen.add_argument("--beta", type=float)
    gen.add_argument("--horizon", type=int, required=True)
    gen.add_argument("--seed", type=int, required=True)
    gen.add_argument("--out")
    gen.set_defaults(func=_cmd_generate)

    smooth = sub.add_parser("smooth", help="one smoothed estimate from a data file")
    smooth.add_argument("--data", required=True)
    smooth.add_argument("--model", choices=("lgm", "svm"), required=True)
    smooth.add_argument("--phi", type=float)
    smooth.add_argument("--sigma-u", type=float, dest="sigma_u")
    smooth.add_argument("--sigma-v", type=float, dest="sigma_v")
    smooth.add_argument("--sigma", type=float)
    smooth.add_argument("--beta", type=float)
    smooth.add_argument("--method", choices=METHOD_NAMES, required=True)
    smooth.add_argument("--n", type=int, required=True)
    smooth.add_argument("--seed", type=int, required=True)
    smooth.add_argument("--zero-timings", action="store_true")
    smooth.add_argument("--out")
    smooth.set_defaults(func=_cmd_smooth)

    exp = sub.add_parser("experiment", help="run a replication grid")
    exp.add_argument("--config", required=True)
    exp.add_argument("--out", help="override the config's output path")
    exp.add_argument(
        "--workers",
        type=int,
        help="worker processes; beats SMOOTHCORE_THREADS; default 1",
    )
    exp.add_argument("--zero-timings", action="store_true")
    exp.set_defaults(func=_cmd_experiment)

    ana = sub.add_parser("analyze", help="slopes from a variance table")
    ana.add_argument("--table", required=True)
    ana.add_argument("--method", choices=METHOD_NAMES, required=True)
    ana.add_argument("--axis", choices=("T", "N"), required=True)
    ana.add_argument("--fixed", type=int)
    ana.add_argument("--overlay-osc", type=float, dest="overlay_osc")
    ana.add_argument("--overlay-lag", type=int, dest="overlay_lag", default=0)
    ana.add_argument("--out")
    ana.set_defaults(func=_cmd_analyze)

    orc = sub.add_parser("oracle", help="exact reference computations")
    orc_sub = orc.add_subparsers(dest="oracle", required=True)

    kal = orc_sub.add_parser("kalman", help="exact posterior moments for the lgm")
    kal.add_argument("--phi", type=float, required=True)
    kal.add_argument("--sigma-u", type=float, dest="sigma_u", required=True)
    kal.add_argument("--sigma-v", type=float, dest="sigma_v", required=True)
    kal.add_argument("--data", required=True)
    kal.add_argument("--sum", action="store_true",
                     help="print only the summed smoothed means")
    kal.add_argument("--out")
    kal.set_defaults(func=_cmd_oracle)

    hmm = orc_sub.add_parser("hmm", help="exact smoothed value on a finite chain")
    hmm.add_argument("--config", required=True)
    hmm.add_argument("--out")
    hmm.set_defaults(func=_cmd_oracle)

    gam = orc_sub.add_parser(
        "gamma", help="closed-form asymptotic variance of the path-space estimator"
    )
    gam.add_argument("--config", help="finite independent-kernel model JSON")
    gam.add_argument("--phi", type=float)
    gam.add_argument("--sigma-u", type=float, dest="sigma_u")
    gam.add_argument("--sigma-v", type=float, dest="sigma_v")
    gam.add_argument("--data")
    gam.add_argument("--grid-width", type=float, default=10.0, dest="grid_width")
    gam.add_argument("--grid-panels", type=int, default=10_000, dest="grid_panels")
    gam.add_argument("--out")
    gam.set_defaults(func=_cmd_oracle)

    return parser


def cli_main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else 0
    try:
        return args.func(args)
    except ConfigError as exc:
        sys.stderr.write(f"config error: {exc}\n")
        return 2
    except FileNotFoundError as exc:
        sys.stderr.write(f"file not found: {exc.filename}\n")
        return 2
    except ValueError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 2
    except RuntimeError as exc:
        sys.stderr.write(f"estimator failure: {exc}\n")
        return 1


def main() -> None:
    sys.exit(cli_main())
