"""Alternating conditional expectations for the efficient-score variance of theta.

Minimizes e(a, g) = (1/n) sum_i Delta_i ||Z_i - a(T_i) - eta_g(X_i)||^2 over a
smooth time effect `a` and a coefficient function `g`, alternating:

  (ii) a-update: pool tied event times, smooth the pooled residuals against
       time with a Gaussian-kernel local-linear regression (Silverman-rule
       bandwidth);
  (iii) g-update: penalized functional regression of Z - a(T) on X over the
       event records, ridge level picked by ordinary GCV.

Updates are accepted only while they strictly decrease e(a, g); the final
residuals give the information estimate
I(theta) = (1/n) sum_i Delta_i r_i r_i'.  Vector Z is handled one component
at a time.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.stats import norm

from .data import Dataset, InvalidDataError
from .kernels import SobolevKernel, null_basis
from .solver import FittedModel, NumericalError, default_basis_size

MIN_EVENTS = 10
DEFAULT_MAX_ITER = 20
DEFAULT_REL_TOL = 1e-4
_RIDGE_GRID = np.logspace(-12.0, 2.0, 29)


@dataclass
class AceResult:
    """Converged least-favorable directions and the information estimate."""

    a_times: np.ndarray  # sorted unique event times
    a_values: np.ndarray  # smoothed time effect at a_times, (len(a_times), p)
    g_on_grid: np.ndarray  # coefficient function(s) on the grid, (p, G)
    info: np.ndarray  # p x p information estimate
    objective_path: list[float]
    iterations: int
    residuals: np.ndarray  # Z - a(T) - eta_g(X) at event records, (n_events, p)

    def to_dict(self) -> dict:
        return {
            "a_times": [float(v) for v in self.a_times],
            "a_values": [[float(v) for v in row] for row in self.a_values],
            "g_on_grid": [[float(v) for v in row] for row in self.g_on_grid],
            "info": [[float(v) for v in row] for row in self.info],
            "objective_path": [float(v) for v in self.objective_path],
            "iterations": int(self.iterations),
        }


@dataclass
class ThetaInference:
    """Wald inference for the scalar-covariate coefficients."""

    theta_hat: np.ndarray
    std_err: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    level: float

    def to_dict(self) -> dict:
        return {
            "theta_hat": [float(v) for v in self.theta_hat],
            "std_err": [float(v) for v in self.std_err],
            "ci_low": [float(v) for v in self.ci_low],
            "ci_high": [float(v) for v in self.ci_high],
            "level": float(self.level),
        }


def silverman_bandwidth(values: np.ndarray) -> float:
    """Rule-of-thumb Gaussian-kernel bandwidth, guarded against degenerate spread."""
    values = np.asarray(values, dtype=float)
    n = len(values)
    sd = values.std(ddof=1) if n > 1 else 0.0
    q75, q25 = np.percentile(values, [75.0, 25.0])
    iqr = q75 - q25
    spread = min(sd, iqr / 1.34) if iqr > 0 else sd
    h = 0.9 * spread * n ** (-0.2)
    return max(h, 1e-12)


def local_linear(t_train, y_train, t_eval, bandwidth: float) -> np.ndarray:
    """Local-linear regression with a Gaussian kernel, vectorized over columns.

    Falls back to the locally-constant estimate wherever the local design is
    numerically singular (isolated points, extreme bandwidths).
    """
    t_train = np.asarray(t_train, dtype=float)
    y_train = np.atleast_2d(np.asarray(y_train, dtype=float))
    if y_train.shape[0] != len(t_train):
        y_train = y_train.T
    t_eval = np.atleast_1d(np.asarray(t_eval, dtype=float))
    d = (t_eval[:, None] - t_train[None, :]) / bandwidth
    k = np.exp(-0.5 * d * d)
    dist = t_eval[:, None] - t_train[None, :]
    s0 = k.sum(axis=1)
    s1 = (k * dist).sum(axis=1)
    s2 = (k * dist * dist).sum(axis=1)
    b0 = k @ y_train
    b1 = (k * dist) @ y_train
    denom = s0 * s2 - s1 * s1
    scale = (s0 * s2).max() if len(s0) else 1.0
    safe = denom > 1e-12 * max(scale, 1e-300)
    out = np.empty_like(b0)
    out[safe] = (s2[safe, None] * b0[safe] - s1[safe, None] * b1[safe]) / denom[safe, None]
    out[~safe] = b0[~safe] / np.maximum(s0[~safe, None], 1e-300)
    return out


class _FunctionalRidge:
    """Penalized functional regression with a spectral one-time factorization.

    The design (null-basis moments and kernel-section integrals of the event
    covariates) is fixed across ACE iterations, so the generalized
    eigendecomposition of (penalty, normal matrix) is done once; every ridge
    level then costs O(N k) and the GCV scan over ridge levels is cheap.
    """

    def __init__(self, ds: Dataset, kernel: SobolevKernel, basis_index: np.ndarray):
        events = ds.event_indices
        self.kernel = kernel
        self.basis_index = basis_index
        basis_x = ds.x[basis_index]
        sections = kernel.k1_section(basis_x)
        self.sections = sections
        null_block = kernel.covariate_null_moments(ds.x[events])
        kernel_block = (ds.x[events] * ds.grid.weights) @ sections.T
        self.design = np.hstack([null_block, kernel_block])  # (N, m + q)
        self.n_obs = len(events)
        m = kernel.order
        dim = self.design.shape[1]
        penalty = np.zeros((dim, dim))
        gram = (basis_x * ds.grid.weights) @ sections.T
        penalty[m:, m:] = (gram + gram.T) / 2.0

        normal = self.design.T @ self.design / self.n_obs
        trace = float(np.trace(normal))
        self.degenerate = trace <= 0.0
        if self.degenerate:
            return
        shift = 1e-10 * trace / dim
        # penalty v = w (normal + shift I) v; columns are (normal+shift)-orthonormal
        w, phi = scipy.linalg.eigh(penalty, normal + shift * np.eye(dim))
        self.eigvals = np.maximum(w, 0.0)
        self.phi = phi
        self.t_matrix = self.design @ phi  # (N, dim)
        self.t_sq_colsums = (self.t_matrix ** 2).sum(axis=0)

    def fit_column(self, y: np.ndarray, ridge_grid=_RIDGE_GRID):
        """GCV-optimal ridge solution for one response column.

        Returns (coef, fitted) where `fitted` is the prediction at the event
        records.
        """
        b = self.t_matrix.T @ y / self.n_obs
        best = (np.inf, None)
        for rho in ridge_grid:
            shrink = 1.0 / (1.0 + rho * self.eigvals)
            fitted = self.t_matrix @ (b * shrink)
            df = float((self.t_sq_colsums * shrink).sum()) / self.n_obs
            denom = max(self.n_obs - df, 1e-8)
            score = self.n_obs * float(((y - fitted) ** 2).sum()) / denom ** 2
            if score < best[0]:
                best = (score, rho)
        shrink = 1.0 / (1.0 + best[1] * self.eigvals)
        coef = self.phi @ (b * shrink)
        return coef, self.t_matrix @ (b * shrink)

    def g_on_grid(self, coef: np.ndarray) -> np.ndarray:
        m = self.kernel.order
        xi = self.kernel.null_basis_on_grid
        return xi @ coef[:m] + self.sections.T @ coef[m:]


def _pooled_event_means(times, values, unique_times) -> np.ndarray:
    """Average `values` over event records sharing each unique time."""
    idx = np.searchsorted(unique_times, times)
    sums = np.zeros((len(unique_times), values.shape[1]))
    counts = np.zeros(len(unique_times))
    np.add.at(sums, idx, values)
    np.add.at(counts, idx, 1.0)
    return sums / counts[:, None]


def ace_fit(
    ds: Dataset,
    kernel: SobolevKernel | None = None,
    model: FittedModel | None = None,
    max_iter: int = DEFAULT_MAX_ITER,
    rel_tol: float = DEFAULT_REL_TOL,
    q: int | None = None,
    rng: np.random.Generator | None = None,
) -> AceResult:
    """Alternate the a- and g-updates until the objective stops decreasing.

    Starts from g = 0 with `a` the smoothed event-conditional mean of Z.  The
    fitted model is accepted for interface parity but the algorithm only uses
    the data.  Needs at least 10 event records for the smoother.
    """
    del model
    events = ds.event_indices
    n_events = len(events)
    if n_events < MIN_EVENTS:
        raise InvalidDataError(
            f"ACE needs at least {MIN_EVENTS} uncensored records, got {n_events}"
        )
    if kernel is None:
        kernel = SobolevKernel(order=2, grid=ds.grid)
    if q is None:
        q = default_basis_size(ds.n, n_events)
    if rng is None:
        rng = np.random.default_rng(0)
    basis_index = np.sort(rng.choice(events, size=min(q, n_events), replace=False))

    t_events = ds.times[events]
    z_events = ds.z[events]  # (N, p)
    p = ds.p
    unique_times = np.unique(t_events)
    bandwidth = silverman_bandwidth(t_events)
    ridge = _FunctionalRidge(ds, kernel, basis_index)

    tie_group = np.searchsorted(unique_times, t_events)

    def smooth_a(eta_g):
        # pooled residual means over tied event times, smoothed with one
        # training point per event record (ties enter with multiplicity)
        pooled = _pooled_event_means(t_events, z_events - eta_g, unique_times)
        return local_linear(t_events, pooled[tie_group], unique_times, bandwidth)

    def a_at_events(a_unique):
        return a_unique[tie_group]

    def objective(a_unique, eta_g):
        r = z_events - a_at_events(a_unique) - eta_g
        return float((r * r).sum()) / ds.n

    eta_g = np.zeros((n_events, p))
    g_coef = np.zeros((ridge.design.shape[1], p)) if not ridge.degenerate else None
    a_unique = smooth_a(eta_g)
    value = objective(a_unique, eta_g)
    path = [value]
    iterations = 0
    for _ in range(max_iter):
        a_new = smooth_a(eta_g)
        if ridge.degenerate:
            eta_new, g_new = eta_g, g_coef
        else:
            y = z_events - a_at_events(a_new)
            g_new = np.empty_like(g_coef)
            eta_new = np.empty_like(eta_g)
            for col in range(p):
                g_new[:, col], eta_new[:, col] = ridge.fit_column(y[:, col])
        new_value = objective(a_new, eta_new)
        if new_value >= value:
            break
        a_unique, eta_g, g_coef = a_new, eta_new, g_new
        decrease = value - new_value
        value = new_value
        path.append(value)
        iterations += 1
        if decrease < rel_tol * max(path[-2], 1e-300):
            break

    residuals = z_events - a_at_events(a_unique) - eta_g
    info = residuals.T @ residuals / ds.n
    if ridge.degenerate or g_coef is None:
        g_grid = np.zeros((p, len(ds.grid)))
    else:
        g_grid = np.stack([ridge.g_on_grid(g_coef[:, col]) for col in range(p)])
    return AceResult(
        a_times=unique_times,
        a_values=a_unique,
        g_on_grid=g_grid,
        info=(info + info.T) / 2.0,
        objective_path=path,
        iterations=iterations,
        residuals=residuals,
    )


def info_bound(ace: AceResult, ds: Dataset) -> np.ndarray:
    """Event-weighted second moment of the ACE residuals: (1/n) sum Delta r r'."""
    r = ace.residuals
    info = r.T @ r / ds.n
    return (info + info.T) / 2.0


def theta_ci(
    model: FittedModel,
    info: np.ndarray,
    n: int,
    level: float = 0.95,
) -> ThetaInference:
    """Wald confidence intervals from the inverse information estimate."""
    if not 0.0 < level < 1.0:
        raise ValueError(f"confidence level must be in (0, 1), got {level}")
    info = np.atleast_2d(np.asarray(info, dtype=float))
    cond = np.linalg.cond(info)
    if not np.isfinite(cond) or cond > 1e12:
        raise NumericalError(
            f"information matrix is numerically singular (condition number {cond:.3g})"
        )
    cov = np.linalg.inv(info)
    std_err = np.sqrt(np.diag(cov) / n)
    z = norm.ppf(0.5 + level / 2.0)
    theta = np.asarray(model.theta, dtype=float)
    return ThetaInference(
        theta_hat=theta,
        std_err=std_err,
        ci_low=theta - z * std_err,
        ci_high=theta + z * std_err,
        level=level,
    )
