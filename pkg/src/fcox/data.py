"""Right-censored survival datasets with scalar and functional covariates.

A dataset holds n records (T_i, event_i, Z_i, X_i) where X_i is tabulated on
a shared quadrature grid.  Fitting requires event-weighted centering of both
covariate blocks; `center` applies it and is idempotent.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .grid import Grid, make_grid, make_uniform_grid

CENTER_TOL = 1e-10


class InvalidDataError(ValueError):
    """Dataset violates a structural requirement (e.g. no observed events)."""


class ParseError(ValueError):
    """CSV input is malformed; the message carries the offending row number."""


@dataclass(frozen=True)
class SurvivalRecord:
    """One observation: time, event indicator, scalar covariates, functional covariate."""

    time: float
    event: bool
    z: np.ndarray
    x: np.ndarray


class Dataset:
    """Immutable container of survival records sharing one grid.

    Columns are stored as arrays: `times` (n,), `events` (n,) bool,
    `z` (n, p), `x` (n, G).
    """

    def __init__(self, times, events, z, x, grid: Grid, centered: bool = False):
        times = np.asarray(times, dtype=float)
        events = np.asarray(events, dtype=bool)
        z = np.atleast_2d(np.asarray(z, dtype=float))
        x = np.atleast_2d(np.asarray(x, dtype=float))
        n = len(times)
        if z.shape[0] != n or x.shape[0] != n or events.shape != (n,):
            raise InvalidDataError("times, events, z, x must have one row per record")
        if x.shape[1] != len(grid):
            raise InvalidDataError(
                f"functional covariates have {x.shape[1]} columns, grid has {len(grid)} points"
            )
        if not np.all(np.isfinite(times)) or np.any(times <= 0):
            raise InvalidDataError("observation times must be finite and positive")
        if not (np.all(np.isfinite(z)) and np.all(np.isfinite(x))):
            raise InvalidDataError("covariates must be finite")
        if not events.any():
            raise InvalidDataError("dataset must contain at least one observed event")
        for arr in (times, events, z, x):
            arr.setflags(write=False)
        self.times = times
        self.events = events
        self.z = z
        self.x = x
        self.grid = grid
        self.centered = centered

    @property
    def n(self) -> int:
        return len(self.times)

    @property
    def p(self) -> int:
        return self.z.shape[1]

    @property
    def n_events(self) -> int:
        return int(self.events.sum())

    @property
    def event_indices(self) -> np.ndarray:
        return np.flatnonzero(self.events)

    def __len__(self) -> int:
        return self.n

    def record(self, i: int) -> SurvivalRecord:
        return SurvivalRecord(
            time=float(self.times[i]),
            event=bool(self.events[i]),
            z=self.z[i],
            x=self.x[i],
        )

    def equals(self, other: "Dataset") -> bool:
        return (
            np.array_equal(self.times, other.times)
            and np.array_equal(self.events, other.events)
            and np.array_equal(self.z, other.z)
            and np.array_equal(self.x, other.x)
            and self.grid == other.grid
        )


def center(ds: Dataset) -> Dataset:
    """Remove the event-weighted mean from both covariate blocks.

    Z_i <- Z_i - sum_j(event_j Z_j)/n_events and pointwise the same for X_i.
    The partial likelihood is invariant to this shift; downstream formulas
    assume it has been applied.  Idempotent.
    """
    if ds.n_events == 0:
        raise InvalidDataError("centering requires at least one observed event")
    mask = ds.events
    z_mean = ds.z[mask].mean(axis=0)
    x_mean = ds.x[mask].mean(axis=0)
    return Dataset(
        ds.times, ds.events, ds.z - z_mean, ds.x - x_mean, ds.grid, centered=True
    )


def is_centered(ds: Dataset, tol: float = CENTER_TOL) -> bool:
    mask = ds.events
    scale = 1.0 + np.abs(ds.z).max(initial=0.0) + np.abs(ds.x).max(initial=0.0)
    return (
        np.abs(ds.z[mask].mean(axis=0)).max() <= tol * scale
        and np.abs(ds.x[mask].mean(axis=0)).max() <= tol * scale
    )


def risk_set(ds: Dataset, i: int) -> np.ndarray:
    """Indices of records still at risk at T_i: { j : T_j >= T_i }.

    Ties are kept in every tied record's risk set (weak inequality).
    """
    if not 0 <= i < ds.n:
        raise ValueError(f"record index {i} out of range for n={ds.n}")
    return np.flatnonzero(ds.times >= ds.times[i])


def _parse_float(token: str, row: int, col: str) -> float:
    try:
        return float(token)
    except ValueError:
        raise ParseError(f"row {row}: column '{col}' is not numeric: {token!r}") from None


def load_csv(path, grid: Grid | int) -> Dataset:
    """Load a dataset from CSV with header `time,event,z1..zp,x1..xG`.

    `grid` is either a Grid matching the x-columns or an integer size for a
    uniform grid.  The returned dataset is uncentered.
    """
    if isinstance(grid, int):
        grid = make_uniform_grid(grid)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("row 1: empty file, expected header") from None
        header = [h.strip() for h in header]
        if len(header) < 3 or header[0] != "time" or header[1] != "event":
            raise ParseError("row 1: header must start with 'time,event'")
        z_cols = [h for h in header[2:] if h.startswith("z")]
        x_cols = [h for h in header[2:] if h.startswith("x")]
        if len(z_cols) + len(x_cols) != len(header) - 2 or not x_cols:
            raise ParseError(
                "row 1: expected columns z1..zp followed by x1..xG after 'time,event'"
            )
        if header[2 : 2 + len(z_cols)] != z_cols:
            raise ParseError("row 1: z-columns must precede x-columns")
        if len(x_cols) != len(grid):
            raise ParseError(
                f"row 1: found {len(x_cols)} x-columns but grid has {len(grid)} points"
            )
        p = len(z_cols)
        times, events, zs, xs = [], [], [], []
        for row_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(
                    f"row {row_no}: expected {len(header)} fields, got {len(row)}"
                )
            times.append(_parse_float(row[0], row_no, "time"))
            ev = row[1].strip()
            if ev not in ("0", "1"):
                raise ParseError(f"row {row_no}: column 'event' must be 0 or 1, got {ev!r}")
            events.append(ev == "1")
            zs.append([_parse_float(tok, row_no, col) for tok, col in zip(row[2 : 2 + p], z_cols)])
            xs.append([_parse_float(tok, row_no, col) for tok, col in zip(row[2 + p :], x_cols)])
    if not times:
        raise ParseError("row 2: no data rows")
    try:
        return Dataset(times, events, zs, xs, grid)
    except InvalidDataError as exc:
        raise ParseError(str(exc)) from exc


def write_csv(ds: Dataset, path) -> None:
    """Write a dataset in the `load_csv` format at full float precision."""
    header = (
        ["time", "event"]
        + [f"z{k + 1}" for k in range(ds.p)]
        + [f"x{k + 1}" for k in range(len(ds.grid))]
    )
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(ds.n):
            row = [repr(float(ds.times[i])), "1" if ds.events[i] else "0"]
            row += [repr(float(v)) for v in ds.z[i]]
            row += [repr(float(v)) for v in ds.x[i]]
            writer.writerow(row)


def load_grid_csv(path) -> Grid:
    """Read a sidecar single-column CSV of grid points (optional header)."""
    points = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row_no, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            token = row[0].strip()
            if row_no == 1:
                try:
                    points.append(float(token))
                except ValueError:
                    continue  # header line
            else:
                points.append(_parse_float(token, row_no, "grid"))
    if not points:
        raise ParseError("grid file contains no points")
    return make_grid(points)
