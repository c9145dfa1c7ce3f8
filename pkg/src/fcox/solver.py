"""Penalized Cox partial likelihood with a functional covariate: assembly and Newton solver.

The coefficient function is expanded as beta(t) = sum_nu d_nu xi_nu(t)
+ sum_j c_j int X~_j(s) K1(s, t) ds, so the unknowns stack into
c = (theta, d, c_beta) and the linear predictor is eta = S c with

    S[i, k]       = Z_ik                       k < p
    S[i, p+nu]    = int X_i xi_nu              nu < m
    S[i, p+m+j]   = int X_i(t) K1(X~_j, t) dt  j < nb.

The roughness penalty is c' Q c where Q's only nonzero block is the Gram
matrix of the basis kernel sections.  The objective

    A(c) = -Delta'Sc/n + (1/n) sum_{events i} log sum_{T_j >= T_i} exp(eta_j)
           + lambda c'Qc

is minimized by damped Newton iterations.  Risk sets are nested, so the
log-denominators and the risk-set moments of the rows of S come from prefix
sums over records sorted by decreasing time, with max-subtraction guarding
the exponentials.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg

from .data import Dataset, InvalidDataError, center, is_centered
from .grid import Grid
from .kernels import SobolevKernel, null_basis

_SPREAD_GUARD = 500.0  # eta spread beyond which prefix sums use the exact streaming path

DEFAULT_MAX_ITER = 50
DEFAULT_REL_TOL = 1e-9
DEFAULT_GRAD_TOL = 1e-8


class NumericalError(RuntimeError):
    """Linear algebra failure the solver could not recover from."""


def default_basis_size(n: int, n_events: int) -> int:
    """Default reduced-basis size: min(#events, ceil(10 n^0.4)).

    Exhausts the event set for small samples (exact fit) while growing
    slowly enough to keep large problems tractable.
    """
    return min(n_events, int(np.ceil(10.0 * n ** 0.4)))


@dataclass
class CoefVector:
    """Stacked solver unknowns: scalar coefficients, null-space and kernel weights."""

    theta: np.ndarray
    d: np.ndarray
    c_beta: np.ndarray

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.theta, self.d, self.c_beta])

    @classmethod
    def from_stacked(cls, c: np.ndarray, p: int, m: int) -> "CoefVector":
        c = np.asarray(c, dtype=float)
        return cls(theta=c[:p].copy(), d=c[p : p + m].copy(), c_beta=c[p + m :].copy())


@dataclass(frozen=True, eq=False)
class DesignSystem:
    """Design matrix S, penalty Q and the basis bookkeeping they were built from."""

    s_matrix: np.ndarray
    q_matrix: np.ndarray
    basis_index: np.ndarray
    mode: str
    p: int
    order: int
    sections: np.ndarray  # kernel sections of the basis records on the grid, (nb, G)
    basis_x: np.ndarray  # basis covariate values on the grid, (nb, G)

    @property
    def n_basis(self) -> int:
        return len(self.basis_index)

    @property
    def dim(self) -> int:
        return self.s_matrix.shape[1]

    def split(self, c: np.ndarray) -> CoefVector:
        return CoefVector.from_stacked(c, self.p, self.order)


@dataclass
class FittedModel:
    """Solution of the penalized partial likelihood at one smoothing level."""

    theta: np.ndarray
    d: np.ndarray
    c_beta: np.ndarray
    basis_index: np.ndarray
    lam: float
    grid: Grid
    beta_on_grid: np.ndarray
    neg_loglik: float
    iterations: int
    converged: bool
    mode: str
    order: int
    basis_x: np.ndarray | None = None  # kept in memory for off-grid evaluation

    @property
    def coef(self) -> CoefVector:
        return CoefVector(self.theta, self.d, self.c_beta)

    def to_dict(self) -> dict:
        return {
            "theta": [float(v) for v in self.theta],
            "d": [float(v) for v in self.d],
            "c_beta": [float(v) for v in self.c_beta],
            "basis_index": [int(i) for i in self.basis_index],
            "lambda": float(self.lam),
            "grid": {
                "points": [float(v) for v in self.grid.points],
                "weights": [float(v) for v in self.grid.weights],
            },
            "beta_on_grid": [float(v) for v in self.beta_on_grid],
            "neg_loglik": float(self.neg_loglik),
            "iterations": int(self.iterations),
            "converged": bool(self.converged),
            "mode": self.mode,
            "order": int(self.order),
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "FittedModel":
        grid = Grid(
            np.asarray(payload["grid"]["points"], dtype=float),
            np.asarray(payload["grid"]["weights"], dtype=float),
        )
        return cls(
            theta=np.asarray(payload["theta"], dtype=float),
            d=np.asarray(payload["d"], dtype=float),
            c_beta=np.asarray(payload["c_beta"], dtype=float),
            basis_index=np.asarray(payload["basis_index"], dtype=int),
            lam=float(payload["lambda"]),
            grid=grid,
            beta_on_grid=np.asarray(payload["beta_on_grid"], dtype=float),
            neg_loglik=float(payload["neg_loglik"]),
            iterations=int(payload["iterations"]),
            converged=bool(payload["converged"]),
            mode=str(payload["mode"]),
            order=int(payload["order"]),
        )

    def save_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    @classmethod
    def load_json(cls, path) -> "FittedModel":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def attach_basis(self, ds: Dataset) -> "FittedModel":
        """Recover the basis covariates from the dataset the model was fit on."""
        self.basis_x = ds.x[self.basis_index]
        return self


class RiskIndex:
    """Sorted-by-time bookkeeping shared by all risk-set computations.

    Records sorted by decreasing time make every risk set a prefix;
    `prefix_len[i]` is the size of record i's risk set (weak inequality,
    so tied times share risk sets).
    """

    def __init__(self, times: np.ndarray, events: np.ndarray):
        times = np.asarray(times, dtype=float)
        self.n = len(times)
        self.order_desc = np.argsort(-times, kind="stable")
        sorted_asc = np.sort(times)
        self.prefix_len = self.n - np.searchsorted(sorted_asc, times, side="left")
        self.event_rows = np.flatnonzero(np.asarray(events, dtype=bool))


def build_design(
    ds: Dataset,
    kernel: SobolevKernel | None = None,
    mode: str = "full",
    q: int | None = None,
    basis_index: Sequence[int] | None = None,
    rng: np.random.Generator | None = None,
) -> DesignSystem:
    """Assemble S and Q for a centered dataset.

    Full mode uses every record's kernel section as a basis function;
    reduced mode samples `q` basis records uniformly without replacement
    from the uncensored ones (or uses `basis_index` verbatim when given).
    """
    if not ds.centered and not is_centered(ds):
        raise InvalidDataError("dataset must be centered before design assembly")
    if kernel is None:
        kernel = SobolevKernel(order=2, grid=ds.grid)
    if kernel.grid != ds.grid:
        raise InvalidDataError("kernel grid and dataset grid differ")
    if mode not in ("full", "reduced"):
        raise ValueError(f"mode must be 'full' or 'reduced', got {mode!r}")

    if basis_index is not None:
        basis_index = np.asarray(basis_index, dtype=int)
    elif mode == "full":
        basis_index = np.arange(ds.n)
    else:
        events = ds.event_indices
        if q is None:
            q = default_basis_size(ds.n, len(events))
        if q > len(events):
            raise ValueError(
                f"reduced basis size {q} exceeds the {len(events)} uncensored records"
            )
        if rng is None:
            rng = np.random.default_rng(0)
        basis_index = np.sort(rng.choice(events, size=q, replace=False))

    basis_x = ds.x[basis_index]
    sections = kernel.k1_section(basis_x)
    m = kernel.order
    null_block = kernel.covariate_null_moments(ds.x)  # (n, m)
    kernel_block = (ds.x * ds.grid.weights) @ sections.T  # (n, nb)
    s_matrix = np.hstack([ds.z, null_block, kernel_block])

    nb = len(basis_index)
    dim = ds.p + m + nb
    q_matrix = np.zeros((dim, dim))
    gram = (basis_x * ds.grid.weights) @ sections.T
    q_matrix[ds.p + m :, ds.p + m :] = (gram + gram.T) / 2.0
    return DesignSystem(
        s_matrix=s_matrix,
        q_matrix=q_matrix,
        basis_index=basis_index,
        mode=mode,
        p=ds.p,
        order=m,
        sections=sections,
        basis_x=basis_x,
    )


def _as_stacked(c, sys: DesignSystem) -> np.ndarray:
    if isinstance(c, CoefVector):
        c = c.stacked()
    c = np.asarray(c, dtype=float)
    if c.shape != (sys.dim,):
        raise ValueError(f"coefficient vector must have length {sys.dim}, got {c.shape}")
    return c


def _prefix_logsumexp_exact(eta_desc: np.ndarray) -> np.ndarray:
    """Streaming log-sum-exp over all prefixes with per-prefix max tracking."""
    out = np.empty(len(eta_desc))
    running_max = -np.inf
    total = 0.0
    for k, value in enumerate(eta_desc):
        if value <= running_max:
            total += np.exp(value - running_max)
        else:
            total = total * np.exp(running_max - value) + 1.0
            running_max = value
        out[k] = running_max + np.log(total)
    return out


def _prefix_logsumexp(eta_desc: np.ndarray) -> np.ndarray:
    spread = eta_desc.max() - eta_desc.min()
    if not np.isfinite(spread) or spread > _SPREAD_GUARD:
        return _prefix_logsumexp_exact(eta_desc)
    shift = eta_desc.max()
    return shift + np.log(np.cumsum(np.exp(eta_desc - shift)))


def neg_log_partial_lik(
    c,
    sys: DesignSystem,
    ds: Dataset,
    lam: float,
    risk: RiskIndex | None = None,
) -> float:
    """Penalized negative log partial likelihood A(c)."""
    c = _as_stacked(c, sys)
    if risk is None:
        risk = RiskIndex(ds.times, ds.events)
    eta = sys.s_matrix @ c
    if not np.all(np.isfinite(eta)):
        return np.inf
    lse = _prefix_logsumexp(eta[risk.order_desc])
    events = risk.event_rows
    log_denoms = lse[risk.prefix_len[events] - 1]
    value = (
        -float(eta[events].sum()) / ds.n
        + float(log_denoms.sum()) / ds.n
        + lam * float(c @ sys.q_matrix @ c)
    )
    return value


def _risk_moments(eta: np.ndarray, s_matrix: np.ndarray, risk: RiskIndex):
    """Per-event risk-set means mu_i of the rows of S and their summed covariance.

    Returns (mu, v_sum) where mu has one row per event record and
    v_sum = sum over events of the weighted covariance of S rows in that
    risk set.  Uses prefix sums in decreasing-time order; falls back to a
    per-event exact path when eta's spread endangers the shared scaling.
    """
    order = risk.order_desc
    events = risk.event_rows
    k_events = risk.prefix_len[events]
    s_desc = s_matrix[order]
    eta_desc = eta[order]
    spread = eta_desc.max() - eta_desc.min()

    if np.isfinite(spread) and spread <= _SPREAD_GUARD:
        w = np.exp(eta_desc - eta_desc.max())
        cum_w = np.cumsum(w)
        cum_ws = np.cumsum(w[:, None] * s_desc, axis=0)
        denoms = cum_w[k_events - 1]
        mu = cum_ws[k_events - 1] / denoms[:, None]
        # sum_i (1/D_i) sum_{j in R_i} w_j S_j S_j' collapses to one weighted
        # cross-product with kappa_j = sum over events whose risk set holds j
        contrib = np.zeros(risk.n)
        np.add.at(contrib, k_events - 1, 1.0 / denoms)
        kappa = np.cumsum(contrib[::-1])[::-1]
        second = (s_desc * (w * kappa)[:, None]).T @ s_desc
        v_sum = second - mu.T @ mu
        return mu, v_sum

    dim = s_matrix.shape[1]
    mu = np.empty((len(events), dim))
    v_sum = np.zeros((dim, dim))
    for row, k in enumerate(k_events):
        eta_loc = eta_desc[:k]
        w = np.exp(eta_loc - eta_loc.max())
        w /= w.sum()
        s_loc = s_desc[:k]
        mu_i = w @ s_loc
        mu[row] = mu_i
        v_sum += (s_loc * w[:, None]).T @ s_loc - np.outer(mu_i, mu_i)
    return mu, v_sum


def gradient_hessian(
    c,
    sys: DesignSystem,
    ds: Dataset,
    lam: float,
    risk: RiskIndex | None = None,
):
    """Analytic gradient and Hessian of A(c).

    Both risk-set moment sums run over event records only, each term being
    the derivative of that record's log-denominator.
    """
    c = _as_stacked(c, sys)
    if risk is None:
        risk = RiskIndex(ds.times, ds.events)
    eta = sys.s_matrix @ c
    mu, v_sum = _risk_moments(eta, sys.s_matrix, risk)
    delta = ds.events.astype(float)
    grad = -sys.s_matrix.T @ delta / ds.n + mu.sum(axis=0) / ds.n + 2.0 * lam * (sys.q_matrix @ c)
    hess = v_sum / ds.n + 2.0 * lam * sys.q_matrix
    return grad, hess


def solve_with_jitter(mat: np.ndarray, rhs: np.ndarray, max_escalations: int = 3) -> np.ndarray:
    """Solve a symmetric PSD system, escalating a small ridge on failure.

    Starts with the bare matrix; on a factorization failure adds
    1e-10 trace/dim to the diagonal and retries, escalating tenfold up to
    `max_escalations` times before giving up.
    """
    dim = mat.shape[0]
    trace = float(np.trace(mat))
    base = 1e-10 * trace / dim if trace > 0 else 1e-10
    jitter = 0.0
    for attempt in range(max_escalations + 2):
        try:
            chol = scipy.linalg.cho_factor(
                mat + jitter * np.eye(dim), lower=True, check_finite=False
            )
            return scipy.linalg.cho_solve(chol, rhs, check_finite=False)
        except (scipy.linalg.LinAlgError, ValueError):
            jitter = base if jitter == 0.0 else jitter * 10.0
    raise NumericalError(
        f"system of dimension {dim} remained singular after ridge jitter up to {jitter:g}"
    )


def fit_design(
    ds: Dataset,
    sys: DesignSystem,
    lam: float,
    start: np.ndarray | None = None,
    max_iter: int = DEFAULT_MAX_ITER,
    rel_tol: float = DEFAULT_REL_TOL,
    grad_tol: float = DEFAULT_GRAD_TOL,
) -> FittedModel:
    """Newton minimization of A(c) on a prebuilt design.

    Steps are halved until the objective decreases, so accepted iterates are
    monotone; convergence is declared on a small gradient or a small relative
    decrease.
    """
    if lam <= 0:
        raise ValueError(f"smoothing parameter must be positive, got {lam}")
    risk = RiskIndex(ds.times, ds.events)
    c = np.zeros(sys.dim) if start is None else np.array(start, dtype=float)
    if c.shape != (sys.dim,):
        raise ValueError(f"start vector must have length {sys.dim}")
    value = neg_log_partial_lik(c, sys, ds, lam, risk)
    converged = False
    iterations = 0
    for _ in range(max_iter):
        grad, hess = gradient_hessian(c, sys, ds, lam, risk)
        if np.abs(grad).max() < grad_tol:
            converged = True
            break
        step = solve_with_jitter(hess, -grad)
        t = 1.0
        new_value = np.inf
        for _ in range(40):
            candidate = c + t * step
            new_value = neg_log_partial_lik(candidate, sys, ds, lam, risk)
            if new_value <= value:
                break
            t /= 2.0
        if new_value > value:
            converged = True  # no descent left at floating point resolution
            break
        iterations += 1
        decrease = value - new_value
        c = c + t * step
        value = new_value
        if decrease < rel_tol * (1.0 + abs(value)):
            converged = True
            break

    coef = sys.split(c)
    xi_grid = null_basis(ds.grid.points, sys.order)
    beta_on_grid = xi_grid @ coef.d + sys.sections.T @ coef.c_beta
    return FittedModel(
        theta=coef.theta,
        d=coef.d,
        c_beta=coef.c_beta,
        basis_index=sys.basis_index.copy(),
        lam=float(lam),
        grid=ds.grid,
        beta_on_grid=beta_on_grid,
        neg_loglik=float(value),
        iterations=iterations,
        converged=converged,
        mode=sys.mode,
        order=sys.order,
        basis_x=sys.basis_x,
    )


def fit(
    ds: Dataset,
    kernel: SobolevKernel | None = None,
    lam: float = 1e-4,
    mode: str = "full",
    q: int | None = None,
    basis_index: Sequence[int] | None = None,
    rng: np.random.Generator | None = None,
    start: np.ndarray | None = None,
    **newton_options,
) -> FittedModel:
    """Center-check, assemble the design and run the Newton solver."""
    if not ds.centered and not is_centered(ds):
        ds = center(ds)
    if kernel is None:
        kernel = SobolevKernel(order=2, grid=ds.grid)
    sys = build_design(ds, kernel, mode=mode, q=q, basis_index=basis_index, rng=rng)
    return fit_design(ds, sys, lam, start=start, **newton_options)


def eval_beta(model: FittedModel, s, kernel: SobolevKernel | None = None):
    """Evaluate the fitted coefficient function at points in [0, 1].

    Off-grid evaluation recomputes the kernel sections analytically from the
    stored basis covariates (`attach_basis` restores them on a deserialized
    model).
    """
    scalar = np.isscalar(s)
    s_arr = np.atleast_1d(np.asarray(s, dtype=float))
    if np.any(s_arr < 0.0) or np.any(s_arr > 1.0):
        raise ValueError("evaluation points must lie in [0, 1]")
    if model.basis_x is None:
        raise ValueError(
            "model lacks basis covariates; call attach_basis(dataset) after loading"
        )
    if kernel is None:
        kernel = SobolevKernel(order=model.order, grid=model.grid)
    values = null_basis(s_arr, model.order) @ model.d
    if len(model.c_beta):
        sections_at = kernel.k1_section_at(model.basis_x, s_arr)  # (nb, len(s))
        values = values + model.c_beta @ sections_at
    return float(values[0]) if scalar else values
