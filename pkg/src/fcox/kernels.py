"""Order-m Sobolev reproducing kernel split along the roughness-penalty null space.

The kernel decomposes as K = K0 + K1 where K0 is the polynomial null-space
part and K1 carries the penalized component.  For order m the null space is
spanned by xi_nu(t) = t^(nu-1)/(nu-1)!, nu = 1..m, and

    K1(s, t) = int_0^1 G_m(s, u) G_m(t, u) du,
    G_m(t, u) = (t - u)_+^(m-1) / (m-1)!.

Order 2 (the cubic-spline case) has the closed form
K1(s, t) = min(s,t)^2 (3 max(s,t) - min(s,t)) / 6; other orders fall back to
quadrature of the defining integral.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import factorial

import numpy as np

from .grid import Grid, integrate, make_uniform_grid

_QUAD_POINTS = 401  # u-grid for quadrature evaluation of K1 when m != 2


def null_basis(points, order: int) -> np.ndarray:
    """Null-space basis values xi_nu(t) = t^(nu-1)/(nu-1)!, shape (len(points), order)."""
    points = np.atleast_1d(np.asarray(points, dtype=float))
    cols = [points ** nu / factorial(nu) for nu in range(order)]
    return np.stack(cols, axis=1)


def _g_m(t, u, order: int) -> np.ndarray:
    """Truncated-power kernel factor (t - u)_+^(m-1)/(m-1)!."""
    diff = np.subtract.outer(t, u)
    if order == 1:
        return (diff > 0).astype(float)  # avoid 0**0 at the kink
    return np.maximum(diff, 0.0) ** (order - 1) / factorial(order - 1)


def k1_quadrature(s, t, order: int, n_quad: int = _QUAD_POINTS) -> np.ndarray:
    """K1 evaluated by trapezoid quadrature of the defining integral."""
    s = np.atleast_1d(np.asarray(s, dtype=float))
    t = np.atleast_1d(np.asarray(t, dtype=float))
    u_grid = make_uniform_grid(n_quad)
    gs = _g_m(s, u_grid.points, order)
    gt = _g_m(t, u_grid.points, order)
    return gs @ (u_grid.weights[:, None] * gt.T)


@dataclass(frozen=True, eq=False)
class SobolevKernel:
    """Sobolev kernel of a given order tabulated on a quadrature grid.

    Stores the K1 matrix on the grid once; section and Gram computations are
    quadrature-weighted matrix products against it.  Immutable and
    thread-safe.
    """

    order: int = 2
    grid: Grid = field(default_factory=lambda: make_uniform_grid(101))

    def __post_init__(self):
        if self.order < 1:
            raise ValueError(f"kernel order must be >= 1, got {self.order}")
        k1_grid = self.k1(self.grid.points, self.grid.points)
        k1_grid.setflags(write=False)
        object.__setattr__(self, "_k1_grid", k1_grid)
        xi = null_basis(self.grid.points, self.order)
        xi.setflags(write=False)
        object.__setattr__(self, "_xi_grid", xi)

    @property
    def k1_on_grid(self) -> np.ndarray:
        """K1(s_i, s_j) at all grid point pairs, shape (G, G)."""
        return self._k1_grid

    @property
    def null_basis_on_grid(self) -> np.ndarray:
        """xi_nu at the grid points, shape (G, m)."""
        return self._xi_grid

    def k0(self, s, t) -> np.ndarray | float:
        """Null-space kernel K0(s, t) = sum_nu xi_nu(s) xi_nu(t)."""
        scalar = np.isscalar(s) and np.isscalar(t)
        xs = null_basis(s, self.order)
        xt = null_basis(t, self.order)
        out = xs @ xt.T
        return float(out[0, 0]) if scalar else out

    def k1(self, s, t) -> np.ndarray | float:
        """Penalized-component kernel K1(s, t) for s, t in [0, 1].

        Accepts scalars or 1-d arrays; array inputs return the full cross
        matrix of shape (len(s), len(t)).
        """
        scalar = np.isscalar(s) and np.isscalar(t)
        if self.order == 2:
            sa = np.atleast_1d(np.asarray(s, dtype=float))
            ta = np.atleast_1d(np.asarray(t, dtype=float))
            lo = np.minimum.outer(sa, ta)
            hi = np.maximum.outer(sa, ta)
            out = lo * lo * (3.0 * hi - lo) / 6.0
        else:
            out = k1_quadrature(s, t, self.order)
        return float(out[0, 0]) if scalar else out

    def k1_section(self, x_values: np.ndarray) -> np.ndarray:
        """Kernel-weighted integral of a covariate: t -> int x(s) K1(s, t) ds.

        `x_values` is the covariate tabulated on the kernel grid (or a stack
        of covariates, one per row).  Returns values on the same grid.
        """
        x_values = np.asarray(x_values, dtype=float)
        if x_values.shape[-1] != len(self.grid):
            raise ValueError(
                f"covariate tabulated on {x_values.shape[-1]} points, "
                f"kernel grid has {len(self.grid)}"
            )
        return (x_values * self.grid.weights) @ self._k1_grid

    def k1_section_at(self, x_values: np.ndarray, s) -> np.ndarray:
        """Same section as `k1_section` but evaluated at arbitrary s in [0, 1]."""
        s = np.asarray(s, dtype=float)
        if np.any(s < 0.0) or np.any(s > 1.0):
            raise ValueError("evaluation points must lie in [0, 1]")
        x_values = np.asarray(x_values, dtype=float)
        cross = self.k1(self.grid.points, np.atleast_1d(s))
        return (x_values * self.grid.weights) @ cross

    def section_gram(self, x_values: np.ndarray) -> np.ndarray:
        """Gram matrix of covariate kernel sections.

        Entry (i, j) is the double integral of x_i(s) K1(s, t) x_j(t), which
        is both the penalty value of the section pair and their inner product
        in the penalized subspace.  Symmetric positive semidefinite.
        """
        x_values = np.atleast_2d(np.asarray(x_values, dtype=float))
        wx = x_values * self.grid.weights
        gram = wx @ self._k1_grid @ wx.T
        return (gram + gram.T) / 2.0

    def covariate_null_moments(self, x_values: np.ndarray) -> np.ndarray:
        """Integrals of covariates against the null basis: entry (i, nu) = int x_i xi_nu."""
        x_values = np.atleast_2d(np.asarray(x_values, dtype=float))
        return (x_values * self.grid.weights) @ self._xi_grid
