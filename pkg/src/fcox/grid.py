"""Grids on [0, 1] and trapezoid quadrature for function-on-grid integrals."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MIN_GRID_SIZE = 4


@dataclass(frozen=True, eq=False)
class Grid:
    """Quadrature grid on [0, 1]: strictly increasing points with positive weights.

    The weights integrate the constant function exactly, so they always sum
    to one.  Instances are immutable and safe to share.
    """

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        points = np.asarray(self.points, dtype=float)
        weights = np.asarray(self.weights, dtype=float)
        points.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "weights", weights)
        if points.ndim != 1 or points.shape != weights.shape:
            raise ValueError("points and weights must be 1-d arrays of equal length")
        if len(points) < MIN_GRID_SIZE:
            raise ValueError(f"grid needs at least {MIN_GRID_SIZE} points, got {len(points)}")
        if not (np.all(np.diff(points) > 0)):
            raise ValueError("grid points must be strictly increasing")
        if points[0] != 0.0 or points[-1] != 1.0:
            raise ValueError("grid must start at 0 and end at 1")
        if not np.all(weights > 0):
            raise ValueError("quadrature weights must be positive")
        if abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError("quadrature weights must sum to 1")

    def __len__(self) -> int:
        return len(self.points)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Grid)
            and np.array_equal(self.points, other.points)
            and np.array_equal(self.weights, other.weights)
        )


def make_uniform_grid(size: int) -> Grid:
    """Uniform grid of `size` points on [0, 1] with trapezoid weights."""
    if size < MIN_GRID_SIZE:
        raise ValueError(f"grid size must be >= {MIN_GRID_SIZE}, got {size}")
    points = np.linspace(0.0, 1.0, size)
    h = 1.0 / (size - 1)
    weights = np.full(size, h)
    weights[0] = weights[-1] = h / 2.0
    return Grid(points, weights)


def make_grid(points) -> Grid:
    """Grid from explicit points in [0, 1], using trapezoid weights.

    Points may be non-uniform but must be strictly increasing with
    endpoints 0 and 1.
    """
    points = np.asarray(points, dtype=float)
    if points.ndim != 1 or len(points) < MIN_GRID_SIZE:
        raise ValueError(f"need a 1-d array of at least {MIN_GRID_SIZE} points")
    gaps = np.diff(points)
    weights = np.zeros_like(points)
    weights[:-1] += gaps / 2.0
    weights[1:] += gaps / 2.0
    return Grid(points, weights)


def integrate(f_values, grid: Grid) -> float:
    """Quadrature of tabulated values over [0, 1]: sum of weights * values."""
    f_values = np.asarray(f_values, dtype=float)
    if f_values.shape != grid.points.shape:
        raise ValueError(
            f"expected {len(grid)} tabulated values, got shape {f_values.shape}"
        )
    return float(grid.weights @ f_values)
