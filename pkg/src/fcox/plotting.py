"""Figure rendering for the report path.

Each function takes plain arrays (typically read back from the CSV outputs
of the CLI) and writes a PNG next to them.  Headless backend; no interactive
use.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

FIGSIZE = (6.4, 4.2)
DPI = 150


def _save(fig, path) -> str:
    fig.tight_layout()
    fig.savefig(path, dpi=DPI)
    plt.close(fig)
    return str(path)


def plot_beta_curve(s, beta_hat, lower=None, upper=None, path="beta.png") -> str:
    """Fitted coefficient function, optionally with a pointwise band."""
    fig, ax = plt.subplots(figsize=FIGSIZE)
    if lower is not None and upper is not None:
        ax.fill_between(s, lower, upper, alpha=0.25, color="C0", label="pointwise band")
    ax.plot(s, beta_hat, color="C0", lw=1.8, label=r"$\hat\beta(s)$")
    ax.axhline(0.0, color="grey", lw=0.8, ls=":")
    ax.set_xlabel("s")
    ax.set_ylabel(r"$\hat\beta(s)$")
    ax.legend(loc="best", frameon=False)
    return _save(fig, path)


def plot_gcv_trace(lambdas, scores, best_lambda=None, path="gcv.png") -> str:
    """GCV score against the smoothing parameter (log scale)."""
    lambdas = np.asarray(lambdas, dtype=float)
    scores = np.asarray(scores, dtype=float)
    fig, ax = plt.subplots(figsize=FIGSIZE)
    finite = np.isfinite(scores)
    ax.plot(lambdas[finite], scores[finite], marker="o", ms=3.5, lw=1.2, color="C1")
    if best_lambda is not None:
        ax.axvline(best_lambda, color="C3", lw=1.0, ls="--",
                   label=f"selected $\\lambda$ = {best_lambda:.3g}")
        ax.legend(loc="best", frameon=False)
    ax.set_xscale("log")
    ax.set_xlabel(r"$\lambda$")
    ax.set_ylabel("GCV score")
    return _save(fig, path)


def plot_mse_trend(cells, path="mse_trend.png") -> str:
    """Average coefficient error against the decay exponent, one line per sample size.

    `cells` is an iterable of mappings with keys v, n, mean_mse (e.g. the
    rows of a simulation report).
    """
    by_n: dict[int, list[tuple[float, float]]] = {}
    for cell in cells:
        by_n.setdefault(int(cell["n"]), []).append((float(cell["v"]), float(cell["mean_mse"])))
    fig, ax = plt.subplots(figsize=FIGSIZE)
    for i, (n, pts) in enumerate(sorted(by_n.items())):
        pts.sort()
        vs = [p[0] for p in pts]
        ms = [p[1] for p in pts]
        ax.plot(vs, ms, marker="o", ms=4, lw=1.4, color=f"C{i}", label=f"n = {n}")
    ax.set_xlabel("decay exponent v")
    ax.set_ylabel("average MSE")
    ax.legend(loc="best", frameon=False)
    return _save(fig, path)


def plot_objective_path(values, path="ace_path.png") -> str:
    """Alternating-minimization objective across iterations."""
    fig, ax = plt.subplots(figsize=FIGSIZE)
    ax.plot(range(len(values)), values, marker="o", ms=4, lw=1.4, color="C2")
    ax.set_xlabel("iteration")
    ax.set_ylabel("objective e(a, g)")
    return _save(fig, path)
