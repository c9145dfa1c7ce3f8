"""Synthetic-data generators, evaluation metrics, experiment runner and bootstrap bands.

The generator draws a functional covariate from a 50-term cosine expansion
X(s) = sum_k zeta_k U_k phi_k(s) with phi_1 = 1, phi_{k+1}(s) = sqrt(2) cos(k pi s),
U_k iid Uniform[-3, 3] and zeta_k = (-1)^(k+1) k^(-v/2); the decay exponent v
controls how estimable the coefficient function is.  The true coefficient is
beta_0 = sum_k (-1)^k k^(-3/2) phi_k and the scalar covariate is standard
normal with unit coefficient.  Failure times come from inverting the
cumulative hazard (exponential for a constant baseline, Weibull for the
linear one); censoring times are exponential with mean `gamma`.

All randomness derives from integer-keyed generator streams so results are
reproducible bit-for-bit regardless of thread count.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .ace import ace_fit, theta_ci
from .data import Dataset, center
from .gcv import default_lambda_grid, select_lambda
from .grid import Grid, integrate, make_uniform_grid
from .kernels import SobolevKernel
from .solver import FittedModel, build_design, fit, fit_design

SUPPORTED_V = (1.0, 1.5, 2.0, 2.5)
DEFAULT_N_TERMS = 50
DEFAULT_GRID_SIZE = 101


class SimulationError(RuntimeError):
    """Too many replicate failures to report a cell."""


def substream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator derived from a master seed and an integer key path."""
    return np.random.default_rng([int(seed)] + [int(k) for k in key])


@dataclass(frozen=True)
class SimConfig:
    """One generator cell: decay exponent, sample size, baseline and censoring."""

    v: float
    n: int
    h0_kind: str = "const"
    h0_const: float = 1.0
    gamma: float = 3.4
    theta0: float = 1.0
    n_terms: int = DEFAULT_N_TERMS
    grid_size: int = DEFAULT_GRID_SIZE
    seed: int = 0

    def __post_init__(self):
        if self.v <= 0:
            raise ValueError(f"decay exponent must be positive, got {self.v}")
        if self.n < 1:
            raise ValueError(f"sample size must be >= 1, got {self.n}")
        if self.h0_kind not in ("const", "linear"):
            raise ValueError(f"h0_kind must be 'const' or 'linear', got {self.h0_kind!r}")
        if self.h0_const <= 0 or self.gamma <= 0:
            raise ValueError("h0_const and gamma must be positive")
        if self.n_terms < 1:
            raise ValueError(f"n_terms must be >= 1, got {self.n_terms}")

    @property
    def grid(self) -> Grid:
        return make_uniform_grid(self.grid_size)


def cosine_basis(grid: Grid, n_terms: int) -> np.ndarray:
    """Orthonormal cosine basis rows phi_k on the grid, shape (n_terms, G)."""
    s = grid.points
    rows = [np.ones_like(s)]
    for k in range(1, n_terms):
        rows.append(np.sqrt(2.0) * np.cos(k * np.pi * s))
    return np.stack(rows)


def decay_coefficients(v: float, n_terms: int) -> np.ndarray:
    """Score scales zeta_k = (-1)^(k+1) k^(-v/2)."""
    k = np.arange(1, n_terms + 1)
    return (-1.0) ** (k + 1) * k ** (-v / 2.0)


def beta0_on_grid(grid: Grid, n_terms: int = DEFAULT_N_TERMS) -> np.ndarray:
    """True coefficient function sum_k (-1)^k k^(-3/2) phi_k tabulated on the grid."""
    k = np.arange(1, n_terms + 1)
    coef = (-1.0) ** k * k ** (-1.5)
    return coef @ cosine_basis(grid, n_terms)


def x_from_scores(scores: np.ndarray, v: float, grid: Grid) -> np.ndarray:
    """Covariate curves from uniform scores; rows of `scores` are draws of U_1..U_K."""
    scores = np.atleast_2d(np.asarray(scores, dtype=float))
    n_terms = scores.shape[1]
    basis = cosine_basis(grid, n_terms)
    return (scores * decay_coefficients(v, n_terms)) @ basis


def gen_covariates(cfg: SimConfig, rng: np.random.Generator):
    """One covariate draw: scalar Z ~ N(0,1) and curve X on the config grid."""
    z = float(rng.standard_normal())
    scores = rng.uniform(-3.0, 3.0, size=cfg.n_terms)
    x = x_from_scores(scores, cfg.v, cfg.grid)[0]
    return z, x


def true_eta(cfg: SimConfig, z, x) -> float:
    """Linear predictor under the generating truth: theta0 z + int x beta0."""
    grid = cfg.grid
    beta0 = beta0_on_grid(grid, cfg.n_terms)
    return cfg.theta0 * float(z) + integrate(np.asarray(x, dtype=float) * beta0, grid)


def gen_survival(cfg: SimConfig, eta: float, rng: np.random.Generator):
    """Observed time and event flag by inverse-hazard sampling.

    Constant baseline: T_u = -log(U)/(h0 e^eta); linear baseline h0(t) = t:
    T_u = sqrt(-2 log(U) e^-eta).  Censoring is exponential with mean gamma.
    """
    u = rng.uniform()
    if cfg.h0_kind == "const":
        t_fail = -np.log(u) / (cfg.h0_const * np.exp(eta))
    else:
        t_fail = np.sqrt(-2.0 * np.log(u) * np.exp(-eta))
    t_cens = rng.exponential(scale=cfg.gamma)
    return float(min(t_fail, t_cens)), bool(t_fail <= t_cens)


def make_dataset(cfg: SimConfig, rng: np.random.Generator | None = None):
    """Generate a full uncentered dataset plus the per-record truth.

    Returns (dataset, eta0_functional) where the second element holds
    int X_i beta_0 for each record (the functional part of the truth, used
    by the coefficient error metric).
    """
    if rng is None:
        rng = substream(cfg.seed, 0)
    grid = cfg.grid
    z = rng.standard_normal(cfg.n)[:, None]
    scores = rng.uniform(-3.0, 3.0, size=(cfg.n, cfg.n_terms))
    x = x_from_scores(scores, cfg.v, grid)
    beta0 = beta0_on_grid(grid, cfg.n_terms)
    eta_fun = x @ (grid.weights * beta0)
    eta = cfg.theta0 * z[:, 0] + eta_fun
    u = rng.uniform(size=cfg.n)
    if cfg.h0_kind == "const":
        t_fail = -np.log(u) / (cfg.h0_const * np.exp(eta))
    else:
        t_fail = np.sqrt(-2.0 * np.log(u) * np.exp(-eta))
    t_cens = rng.exponential(scale=cfg.gamma, size=cfg.n)
    times = np.minimum(t_fail, t_cens)
    events = t_fail <= t_cens
    ds = Dataset(times, events, z, x, grid)
    return ds, eta_fun


def mse_beta(model: FittedModel, truth, ds: Dataset) -> float:
    """Event-weighted root mean squared error of the functional predictor.

    sqrt( (1/N) sum_events (eta_betahat(X_i) - eta_beta0(X_i))^2 ), the
    empirical covariance-weighted distance between the fitted and true
    coefficient functions.  `truth` is either the true coefficient tabulated
    on the grid or a callable mapping a covariate row to its true functional
    predictor value.
    """
    w = ds.grid.weights
    eta_hat = ds.x @ (w * model.beta_on_grid)
    if callable(truth):
        eta0 = np.array([truth(ds.x[i]) for i in range(ds.n)])
    else:
        eta0 = ds.x @ (w * np.asarray(truth, dtype=float))
    diff = (eta_hat - eta0)[ds.events]
    return float(np.sqrt((diff ** 2).mean()))


@dataclass
class CellResult:
    """Aggregated metrics for one simulation cell."""

    v: float
    n: int
    h0_kind: str
    gamma: float
    reps: int
    n_failed: int
    mean_mse: float
    mean_theta: float
    sd_theta: float
    coverage: float | None
    mean_censoring: float

    def to_row(self) -> list:
        return [
            repr(float(self.v)),
            str(self.n),
            self.h0_kind,
            repr(float(self.gamma)),
            str(self.reps),
            str(self.n_failed),
            repr(float(self.mean_mse)),
            repr(float(self.mean_theta)),
            repr(float(self.sd_theta)),
            "" if self.coverage is None else repr(float(self.coverage)),
            repr(float(self.mean_censoring)),
        ]


CELL_COLUMNS = [
    "v",
    "n",
    "h0",
    "gamma",
    "reps",
    "n_failed",
    "mean_mse",
    "mean_theta",
    "sd_theta",
    "coverage",
    "mean_censoring",
]


@dataclass
class SimReport:
    """Per-cell summaries of a simulation experiment."""

    cells: list[CellResult]
    seed: int
    lambda_policy: str

    def save_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(CELL_COLUMNS)
            for cell in self.cells:
                writer.writerow(cell.to_row())

    def to_dict(self) -> dict:
        return {
            "seed": int(self.seed),
            "lambda_policy": self.lambda_policy,
            "cells": [
                dict(zip(CELL_COLUMNS, [
                    float(c.v), int(c.n), c.h0_kind, float(c.gamma), int(c.reps),
                    int(c.n_failed), float(c.mean_mse), float(c.mean_theta),
                    float(c.sd_theta),
                    None if c.coverage is None else float(c.coverage),
                    float(c.mean_censoring),
                ]))
                for c in self.cells
            ],
        }

    def save_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")


@dataclass
class _RepOutcome:
    ok: bool
    mse: float = np.nan
    theta: float = np.nan
    covered: bool | None = None
    censoring: float = np.nan
    error: str = ""


def _run_replicate(
    cfg: SimConfig,
    rep: int,
    lambda_policy,
    lambda_grid,
    q: int | None,
    inference: bool,
    level: float,
) -> _RepOutcome:
    rng = substream(cfg.seed, rep, cfg.n)
    try:
        raw, _ = make_dataset(cfg, rng)
        ds = center(raw)
        kernel = SobolevKernel(order=2, grid=ds.grid)
        beta0 = beta0_on_grid(ds.grid, cfg.n_terms)
        if lambda_policy == "gcv":
            result = select_lambda(
                ds, kernel, lambdas=lambda_grid, mode="reduced", q=q, rng=rng
            )
            model = result.best_model
        else:
            model = fit(
                ds, kernel, lam=float(lambda_policy), mode="reduced", q=q, rng=rng
            )
        covered = None
        if inference:
            ace = ace_fit(ds, kernel, rng=rng)
            inf = theta_ci(model, ace.info, ds.n, level=level)
            covered = bool(inf.ci_low[0] <= cfg.theta0 <= inf.ci_high[0])
        return _RepOutcome(
            ok=True,
            mse=mse_beta(model, beta0, ds),
            theta=float(model.theta[0]),
            covered=covered,
            censoring=1.0 - float(raw.events.mean()),
        )
    except Exception as exc:  # noqa: BLE001 - replicate failures are counted, not fatal
        return _RepOutcome(ok=False, error=f"{type(exc).__name__}: {exc}")


def run_experiment(
    configs: Sequence[SimConfig],
    reps: int,
    lambda_policy="gcv",
    lambda_grid=None,
    q: int | None = None,
    inference: bool = True,
    level: float = 0.95,
    n_threads: int = 1,
    raw_path=None,
    max_fail_fraction: float = 0.05,
) -> SimReport:
    """Run every cell for `reps` replicates and aggregate.

    `lambda_policy` is either "gcv" or a fixed positive float.  Replicate
    streams are keyed by (seed, replicate, n) so cells sharing a sample size
    see common draws and results do not depend on the thread count.  A cell
    whose failure fraction exceeds `max_fail_fraction` aborts the experiment.
    """
    if reps < 1:
        raise ValueError(f"need reps >= 1, got {reps}")
    if lambda_policy != "gcv":
        lam = float(lambda_policy)
        if lam <= 0:
            raise ValueError("fixed lambda must be positive")
    if lambda_grid is None and lambda_policy == "gcv":
        lambda_grid = default_lambda_grid()

    cells: list[CellResult] = []
    raw_rows: list[list] = []
    for cfg in configs:
        def task(rep: int, cfg=cfg) -> _RepOutcome:
            return _run_replicate(cfg, rep, lambda_policy, lambda_grid, q, inference, level)

        if n_threads > 1:
            with ThreadPoolExecutor(max_workers=n_threads) as pool:
                outcomes = list(pool.map(task, range(reps)))
        else:
            outcomes = [task(rep) for rep in range(reps)]

        good = [o for o in outcomes if o.ok]
        n_failed = reps - len(good)
        if n_failed > max_fail_fraction * reps:
            messages = {o.error for o in outcomes if not o.ok}
            raise SimulationError(
                f"cell v={cfg.v} n={cfg.n}: {n_failed}/{reps} replicates failed "
                f"({'; '.join(sorted(messages))})"
            )
        thetas = np.array([o.theta for o in good])
        mses = np.array([o.mse for o in good])
        cens = np.array([o.censoring for o in good])
        if inference:
            coverage = float(np.mean([o.covered for o in good]))
        else:
            coverage = None
        cells.append(
            CellResult(
                v=cfg.v,
                n=cfg.n,
                h0_kind=cfg.h0_kind,
                gamma=cfg.gamma,
                reps=reps,
                n_failed=n_failed,
                mean_mse=float(mses.mean()),
                mean_theta=float(thetas.mean()),
                sd_theta=float(thetas.std(ddof=1)) if len(thetas) > 1 else 0.0,
                coverage=coverage,
                mean_censoring=float(cens.mean()),
            )
        )
        if raw_path is not None:
            for rep, o in enumerate(outcomes):
                raw_rows.append([
                    repr(float(cfg.v)), str(cfg.n), cfg.h0_kind, repr(float(cfg.gamma)),
                    str(rep), "1" if o.ok else "0",
                    repr(float(o.mse)), repr(float(o.theta)),
                    "" if o.covered is None else ("1" if o.covered else "0"),
                    repr(float(o.censoring)),
                ])
    if raw_path is not None:
        with open(raw_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow([
                "v", "n", "h0", "gamma", "rep", "ok", "mse", "theta", "covered", "censoring",
            ])
            writer.writerows(raw_rows)
    policy_name = "gcv" if lambda_policy == "gcv" else repr(float(lambda_policy))
    seed = configs[0].seed if configs else 0
    return SimReport(cells=cells, seed=seed, lambda_policy=policy_name)


@dataclass
class BetaBand:
    """Pointwise percentile band for the coefficient function."""

    s: np.ndarray
    beta_hat: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    level: float
    n_boot: int

    def save_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["s", "beta_hat", "lower", "upper"])
            for row in zip(self.s, self.beta_hat, self.lower, self.upper):
                writer.writerow([repr(float(val)) for val in row])


def bootstrap_beta_band(
    ds: Dataset,
    kernel: SobolevKernel | None = None,
    lam: float = 1e-4,
    n_boot: int = 500,
    level: float = 0.95,
    rng: np.random.Generator | int = 0,
    q: int | None = None,
    n_threads: int = 1,
    beta_hat: np.ndarray | None = None,
    max_redraws: int = 100,
) -> BetaBand:
    """Pairs-bootstrap percentile band for the coefficient function at fixed lambda.

    Records are resampled with replacement (redrawing any resample without
    events), the model is refit on each resample, and pointwise quantiles of
    the refit coefficient curves form the band.
    """
    if n_boot < 100:
        raise ValueError(f"need at least 100 bootstrap replicates, got {n_boot}")
    if not 0.0 < level < 1.0:
        raise ValueError(f"level must be in (0, 1), got {level}")
    if isinstance(rng, (int, np.integer)):
        rng = substream(int(rng), 101)
    if kernel is None:
        kernel = SobolevKernel(order=2, grid=ds.grid)
    if beta_hat is None:
        base = center(ds)
        sys = build_design(base, kernel, mode="reduced", q=q, rng=substream(0, 7))
        beta_hat = fit_design(base, sys, lam).beta_on_grid
    streams = rng.spawn(n_boot)

    def one_replicate(b: int) -> np.ndarray:
        gen = streams[b]
        for _ in range(max_redraws):
            idx = gen.integers(0, ds.n, size=ds.n)
            if ds.events[idx].any():
                resampled = Dataset(
                    ds.times[idx], ds.events[idx], ds.z[idx], ds.x[idx], ds.grid
                )
                boot = center(resampled)
                q_eff = None if q is None else min(q, boot.n_events)
                sys = build_design(boot, kernel, mode="reduced", q=q_eff, rng=gen)
                return fit_design(boot, sys, lam).beta_on_grid
        raise SimulationError(
            f"bootstrap resample {b}: no events after {max_redraws} redraws"
        )

    if n_threads > 1:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            curves = list(pool.map(one_replicate, range(n_boot)))
    else:
        curves = [one_replicate(b) for b in range(n_boot)]
    stack = np.stack(curves)
    alpha = (1.0 - level) / 2.0
    lower = np.quantile(stack, alpha, axis=0)
    upper = np.quantile(stack, 1.0 - alpha, axis=0)
    return BetaBand(
        s=ds.grid.points,
        beta_hat=np.asarray(beta_hat, dtype=float),
        lower=lower,
        upper=upper,
        level=level,
        n_boot=n_boot,
    )
