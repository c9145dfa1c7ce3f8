"""Command-line interface: fit, gcv, infer, bootstrap, simulate, report.

Models are written as JSON, curves and tables as CSV; the report subcommand
renders figures from those delimited outputs.  Exit codes: 0 success,
2 input or validation error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys as _sys
from pathlib import Path

import numpy as np

from .ace import ace_fit, theta_ci
from .data import (
    InvalidDataError,
    ParseError,
    center,
    load_csv,
    load_grid_csv,
)
from .gcv import GcvResult, default_lambda_grid, select_lambda
from .kernels import SobolevKernel
from .simulate import (
    SUPPORTED_V,
    SimConfig,
    SimulationError,
    bootstrap_beta_band,
    run_experiment,
    substream,
)
from .solver import FittedModel, NumericalError, fit

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERICAL = 3

TABLE_N = (50, 100, 150, 200)
FIGURE1_N = (50, 100, 150, 200)


def _add_data_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--data", required=True, help="dataset CSV (time,event,z*,x*)")
    grid = parser.add_mutually_exclusive_group()
    grid.add_argument("--grid", help="sidecar CSV with one grid point per line")
    grid.add_argument(
        "--uniform-grid",
        type=int,
        default=101,
        metavar="G",
        help="uniform grid size when no sidecar grid is given (default 101)",
    )


def _load_dataset(args):
    if args.grid:
        grid = load_grid_csv(args.grid)
    else:
        from .grid import make_uniform_grid

        grid = make_uniform_grid(args.uniform_grid)
    return load_csv(args.data, grid)


def _parse_lambda(text: str):
    if text == "auto":
        return "auto"
    try:
        value = float(text)
    except ValueError:
        raise ValueError(f"--lambda must be 'auto' or a positive number, got {text!r}") from None
    if value <= 0:
        raise ValueError(f"--lambda must be positive, got {value}")
    return value


def _parse_qbasis(text: str):
    if text in ("auto", "full"):
        return text
    try:
        value = int(text)
    except ValueError:
        raise ValueError(f"--qbasis must be 'auto', 'full' or an integer, got {text!r}") from None
    if value < 1:
        raise ValueError(f"--qbasis must be >= 1, got {value}")
    return value


def _mode_and_q(qbasis):
    if qbasis == "full":
        return "full", None
    if qbasis == "auto":
        return "reduced", None
    return "reduced", int(qbasis)


def _write_curve_csv(path, s, beta) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["s", "beta_hat"])
        for si, bi in zip(s, beta):
            writer.writerow([repr(float(si)), repr(float(bi))])


def cmd_fit(args) -> int:
    ds = center(_load_dataset(args))
    kernel = SobolevKernel(order=args.order, grid=ds.grid)
    mode, q = _mode_and_q(args.qbasis)
    rng = substream(args.seed, 1)
    lam_policy = args.lam
    if lam_policy == "auto":
        result = select_lambda(ds, kernel, mode=mode, q=q, rng=rng)
        model = result.best_model
        gcv_out = args.gcv_out or str(Path(args.out).with_suffix("")) + "_gcv.csv"
        result.save_csv(gcv_out)
        print(f"selected lambda {model.lam:g} by GCV; trace written to {gcv_out}")
    else:
        model = fit(ds, kernel, lam=lam_policy, mode=mode, q=q, rng=rng)
    model.save_json(args.out)
    if args.curve:
        _write_curve_csv(args.curve, ds.grid.points, model.beta_on_grid)
    print(
        f"fit: n={ds.n}, events={ds.n_events}, lambda={model.lam:g}, "
        f"converged={model.converged}, iterations={model.iterations}"
    )
    print(f"model written to {args.out}")
    return EXIT_OK


def cmd_gcv(args) -> int:
    ds = center(_load_dataset(args))
    kernel = SobolevKernel(order=args.order, grid=ds.grid)
    mode, q = _mode_and_q(args.qbasis)
    lambdas = default_lambda_grid(args.lambda_min, args.lambda_max, args.lambda_count)
    result = select_lambda(
        ds, kernel, lambdas=lambdas, mode=mode, q=q, rng=substream(args.seed, 1)
    )
    result.save_csv(args.out)
    if args.json_out:
        result.save_json(args.json_out)
    print(f"best lambda {result.best_lambda:g}; trace written to {args.out}")
    return EXIT_OK


def cmd_infer(args) -> int:
    ds = center(_load_dataset(args))
    model = FittedModel.load_json(args.model).attach_basis(ds)
    kernel = SobolevKernel(order=model.order, grid=ds.grid)
    ace = ace_fit(ds, kernel, rng=substream(args.seed, 2))
    inference = theta_ci(model, ace.info, ds.n, level=args.level)
    payload = inference.to_dict()
    payload["info"] = [[float(v) for v in row] for row in np.atleast_2d(ace.info)]
    payload["objective_path"] = [float(v) for v in ace.objective_path]
    payload["ace_iterations"] = int(ace.iterations)
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")
    for j, (t, se, lo, hi) in enumerate(
        zip(inference.theta_hat, inference.std_err, inference.ci_low, inference.ci_high)
    ):
        print(f"theta[{j}] = {t:.4f}  se = {se:.4f}  {args.level:.0%} CI [{lo:.4f}, {hi:.4f}]")
    print(f"inference written to {args.out}")
    return EXIT_OK


def cmd_bootstrap(args) -> int:
    ds = center(_load_dataset(args))
    model = FittedModel.load_json(args.model).attach_basis(ds)
    kernel = SobolevKernel(order=model.order, grid=ds.grid)
    q = len(model.basis_index) if model.mode == "reduced" else None
    band = bootstrap_beta_band(
        ds,
        kernel,
        lam=model.lam,
        n_boot=args.reps,
        level=args.level,
        rng=substream(args.seed, 3),
        q=q,
        n_threads=args.threads,
        beta_hat=model.beta_on_grid,
    )
    band.save_csv(args.out)
    print(f"{args.level:.0%} bootstrap band over {args.reps} resamples written to {args.out}")
    return EXIT_OK


def _simulate_cells(args) -> list[SimConfig]:
    common = dict(
        theta0=1.0,
        seed=args.seed,
        grid_size=args.grid_size,
    )
    if args.table1 or args.table2:
        return [
            SimConfig(v=v, n=n, h0_kind="const", gamma=3.4, **common)
            for n in TABLE_N
            for v in SUPPORTED_V
        ]
    if args.figure1:
        cells = []
        for h0_kind, gammas in (("const", (19.0, 3.4)), ("linear", (15.0, 3.9))):
            for gamma in gammas:
                for n in FIGURE1_N:
                    for v in SUPPORTED_V:
                        cells.append(
                            SimConfig(v=v, n=n, h0_kind=h0_kind, gamma=gamma, **common)
                        )
        return cells
    if args.v not in SUPPORTED_V and not args.allow_any_v:
        raise ValueError(
            f"--v {args.v} outside the supported set {sorted(SUPPORTED_V)}; "
            "pass --allow-any-v to override"
        )
    return [SimConfig(v=args.v, n=args.n, h0_kind=args.h0, gamma=args.gamma, **common)]


def cmd_simulate(args) -> int:
    cells = _simulate_cells(args)
    lam_policy = args.lam if args.lam == "auto" else float(args.lam)
    policy = "gcv" if lam_policy == "auto" else lam_policy
    inference = not args.no_inference
    if args.table2:
        inference = True
    report = run_experiment(
        cells,
        reps=args.reps,
        lambda_policy=policy,
        inference=inference,
        n_threads=args.threads,
        raw_path=args.raw_out,
    )
    report.save_csv(args.out)
    if args.json_out:
        report.save_json(args.json_out)
    print(f"{len(cells)} cell(s) x {args.reps} replicates written to {args.out}")
    return EXIT_OK


def _read_csv_columns(path) -> dict[str, list[str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        cols: dict[str, list[str]] = {name: [] for name in reader.fieldnames or []}
        for row in reader:
            for key, val in row.items():
                cols[key].append(val)
    return cols


def cmd_report(args) -> int:
    from . import plotting

    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written = []
    if args.curve:
        cols = _read_csv_columns(args.curve)
        s = np.array(cols["s"], dtype=float)
        beta = np.array(cols["beta_hat"], dtype=float)
        written.append(
            plotting.plot_beta_curve(s, beta, path=outdir / "beta_curve.png")
        )
    if args.band:
        cols = _read_csv_columns(args.band)
        written.append(
            plotting.plot_beta_curve(
                np.array(cols["s"], dtype=float),
                np.array(cols["beta_hat"], dtype=float),
                np.array(cols["lower"], dtype=float),
                np.array(cols["upper"], dtype=float),
                path=outdir / "beta_band.png",
            )
        )
    if args.gcv:
        cols = _read_csv_columns(args.gcv)
        lambdas = np.array(cols["lambda"], dtype=float)
        scores = np.array(cols["score"], dtype=float)
        best = lambdas[np.nanargmin(scores)] if len(scores) else None
        written.append(
            plotting.plot_gcv_trace(lambdas, scores, best, path=outdir / "gcv_trace.png")
        )
    if args.simreport:
        cols = _read_csv_columns(args.simreport)
        cells = [
            {"v": v, "n": n, "mean_mse": m}
            for v, n, m in zip(cols["v"], cols["n"], cols["mean_mse"])
        ]
        written.append(plotting.plot_mse_trend(cells, path=outdir / "mse_trend.png"))
    if args.inference:
        with open(args.inference, encoding="utf-8") as fh:
            payload = json.load(fh)
        written.append(
            plotting.plot_objective_path(
                payload["objective_path"], path=outdir / "ace_path.png"
            )
        )
    if not written:
        raise ValueError("nothing to render: pass at least one input file")
    for p in written:
        print(f"figure written to {p}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fcox",
        description="Cox models with functional covariates: fit, tune, infer, simulate.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="fit the penalized model and write model.json")
    _add_data_args(p_fit)
    p_fit.add_argument("--order", type=int, default=2, help="penalty order m (default 2)")
    p_fit.add_argument("--lambda", dest="lam", type=_parse_lambda, default="auto",
                       help="'auto' for GCV selection or a positive value")
    p_fit.add_argument("--qbasis", type=_parse_qbasis, default="auto",
                       help="'auto', 'full' or a reduced-basis size")
    p_fit.add_argument("--seed", type=int, default=0)
    p_fit.add_argument("--out", required=True, help="output model JSON")
    p_fit.add_argument("--curve", help="optional CSV of the fitted coefficient curve")
    p_fit.add_argument("--gcv-out", help="GCV trace CSV (default: <out>_gcv.csv when auto)")
    p_fit.set_defaults(handler=cmd_fit)

    p_gcv = sub.add_parser("gcv", help="score a lambda grid and report the minimizer")
    _add_data_args(p_gcv)
    p_gcv.add_argument("--order", type=int, default=2)
    p_gcv.add_argument("--lambda-min", type=float, default=1e-8)
    p_gcv.add_argument("--lambda-max", type=float, default=1e-1)
    p_gcv.add_argument("--lambda-count", type=int, default=25)
    p_gcv.add_argument("--qbasis", type=_parse_qbasis, default="auto")
    p_gcv.add_argument("--seed", type=int, default=0)
    p_gcv.add_argument("--out", required=True, help="output CSV (lambda,score)")
    p_gcv.add_argument("--json-out", help="optional JSON serialization")
    p_gcv.set_defaults(handler=cmd_gcv)

    p_inf = sub.add_parser("infer", help="information bound and Wald intervals for theta")
    _add_data_args(p_inf)
    p_inf.add_argument("--model", required=True, help="model JSON from fit")
    p_inf.add_argument("--level", type=float, default=0.95)
    p_inf.add_argument("--seed", type=int, default=0)
    p_inf.add_argument("--out", required=True, help="output inference JSON")
    p_inf.set_defaults(handler=cmd_infer)

    p_boot = sub.add_parser("bootstrap", help="pairs-bootstrap band for the coefficient curve")
    _add_data_args(p_boot)
    p_boot.add_argument("--model", required=True, help="model JSON from fit")
    p_boot.add_argument("--reps", type=int, default=500)
    p_boot.add_argument("--level", type=float, default=0.95)
    p_boot.add_argument("--seed", type=int, default=0)
    p_boot.add_argument("--threads", type=int, default=1)
    p_boot.add_argument("--out", required=True, help="output band CSV")
    p_boot.set_defaults(handler=cmd_bootstrap)

    p_sim = sub.add_parser("simulate", help="synthetic experiment cells and summaries")
    p_sim.add_argument("--v", type=float, default=2.0, help="decay exponent")
    p_sim.add_argument("--n", type=int, default=100, help="sample size")
    p_sim.add_argument("--h0", choices=("const", "linear"), default="const")
    p_sim.add_argument("--gamma", type=float, default=3.4, help="censoring-time mean")
    p_sim.add_argument("--reps", type=int, default=100)
    p_sim.add_argument("--lambda", dest="lam", type=_parse_lambda, default="auto")
    p_sim.add_argument("--seed", type=int, default=0)
    p_sim.add_argument("--grid-size", type=int, default=101)
    p_sim.add_argument("--threads", type=int, default=1)
    p_sim.add_argument("--allow-any-v", action="store_true",
                       help="permit decay exponents outside {1, 1.5, 2, 2.5}")
    p_sim.add_argument("--no-inference", action="store_true",
                       help="skip the information-bound confidence intervals")
    preset = p_sim.add_mutually_exclusive_group()
    preset.add_argument("--table1", action="store_true",
                        help="cell grid: constant baseline, 30%% censoring, all (v, n)")
    preset.add_argument("--table2", action="store_true",
                        help="same grid as --table1 with coverage always on")
    preset.add_argument("--figure1", action="store_true",
                        help="all four baseline/censoring panels over (v, n)")
    p_sim.add_argument("--out", required=True, help="output report CSV")
    p_sim.add_argument("--json-out", help="optional JSON report")
    p_sim.add_argument("--raw-out", help="optional per-replicate CSV")
    p_sim.set_defaults(handler=cmd_simulate)

    p_rep = sub.add_parser("report", help="render figures from CSV/JSON outputs")
    p_rep.add_argument("--curve", help="coefficient curve CSV from fit")
    p_rep.add_argument("--band", help="bootstrap band CSV")
    p_rep.add_argument("--gcv", help="GCV trace CSV")
    p_rep.add_argument("--simreport", help="simulation report CSV")
    p_rep.add_argument("--inference", help="inference JSON (objective path plot)")
    p_rep.add_argument("--outdir", default="figures", help="directory for rendered PNGs")
    p_rep.set_defaults(handler=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code not in (0, None) else EXIT_OK
    try:
        return args.handler(args)
    except (ParseError, InvalidDataError, FileNotFoundError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=_sys.stderr)
        return EXIT_INPUT
    except (NumericalError, SimulationError) as exc:
        print(f"numerical failure: {exc}", file=_sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    raise SystemExit(main())
