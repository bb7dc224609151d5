"""Entropy-based uncertainty scores, sparsification curves and AUSE."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from .losses import NORM_TOL, BinGrid, decode


@dataclass
class SparsificationResult:
    fractions: np.ndarray
    s_values: np.ndarray  # uncertainty-ranked curve
    g_values: np.ndarray  # oracle curve
    ause: float
    xi_max: float
    variant: str = "entropy"

    def rows(self):
        return zip(self.fractions, self.s_values, self.g_values)


def entropy(q) -> float | np.ndarray:
    """Discrete entropy in nats (0 log 0 = 0); rows of a 2-D input are scored separately."""
    q = np.asarray(q, dtype=np.float64)
    if np.any(q < 0) or np.any(np.abs(q.sum(axis=-1) - 1.0) > NORM_TOL):
        raise ValueError("entropy needs nonnegative probabilities summing to 1")
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(q > 0, q * np.log(np.where(q > 0, q, 1.0)), 0.0)
    h = -terms.sum(axis=-1)
    return float(h) if np.ndim(h) == 0 else h


def discretize_gaussian(mean, var, endpoints) -> np.ndarray:
    """Gaussian weights evaluated at bin lower endpoints, normalized to sum 1.

    ``endpoints`` is a 1-D array (one axis of a ``BinGrid``).  Vectorized over
    array ``mean``/``var`` of equal shape; the bin axis is appended last.
    """
    var = np.asarray(var, dtype=np.float64)
    if np.any(var <= 0):
        raise ValueError("variance must be positive")
    mean = np.asarray(mean, dtype=np.float64)
    ends = np.asarray(endpoints, dtype=np.float64)
    logw = -(mean[..., None] - ends) ** 2 / (2.0 * var[..., None]) - 0.5 * np.log(var[..., None])
    logw = logw - logw.max(axis=-1, keepdims=True)
    w = np.exp(logw)
    return w / w.sum(axis=-1, keepdims=True)


def sparsification(entropies, abs_errors, grid_pts: int = 100, trim: float = 0.0,
                   variant: str = "entropy") -> SparsificationResult:
    """Sparsification and oracle curves on the grid phi = k / grid_pts, k < grid_pts.

    ``variant="entropy"``: both vectors sorted descending, the entropies
    rescaled so the largest equals the largest error, and each curve is the
    mean of what remains after dropping the leading phi-fraction.
    ``variant="error"``: the classic form, where the first curve averages
    the errors of the samples left after dropping the most uncertain ones.

    ``trim`` drops that fraction of largest-error samples first (and, for
    the entropy variant, the same count of largest entropies), so the curves
    start from the corresponding error percentile.
    """
    u = np.asarray(entropies, dtype=np.float64).ravel()
    e = np.asarray(abs_errors, dtype=np.float64).ravel()
    if u.shape != e.shape:
        raise ValueError(f"length mismatch: {u.size} entropies vs {e.size} errors")
    if u.size < 2:
        raise ValueError("sparsification needs at least 2 samples")
    if variant not in ("entropy", "error"):
        raise ValueError(f"unknown variant {variant!r}")
    k_trim = int(np.floor(trim * u.size + 1e-9))

    if variant == "entropy":
        xi = np.sort(e)[::-1][k_trim:]
        us = np.sort(u)[::-1][k_trim:]
        xi_max = float(xi[0])
        curve = us * (xi_max / us[0]) if us[0] > 0 else np.zeros_like(us)
    else:
        keep = np.sort(np.argsort(-e, kind="stable")[k_trim:])  # ties keep input order
        u, e = u[keep], e[keep]
        xi = np.sort(e)[::-1]
        xi_max = float(xi[0])
        curve = e[np.argsort(-u, kind="stable")]

    n = xi.size
    k = np.arange(grid_pts)
    removed = (k * n) // grid_pts
    # suffix means via reversed cumulative sums
    def suffix_means(v):
        tail = np.cumsum(v[::-1])[::-1]
        return tail[removed] / (n - removed)

    s = suffix_means(curve)
    g = suffix_means(xi)
    phi = k / grid_pts
    ause = float(np.trapezoid(np.abs(s - g), phi)) if grid_pts > 1 else 0.0
    return SparsificationResult(phi, s, g, ause, xi_max, variant)


def head_scores(head: str, out, truth, grid: BinGrid) -> dict:
    """Per-axis entropies and absolute errors for an NLL or RbC output batch.

    NLL Gaussians are discretized onto the same bins as the RbC head first.
    """
    head = getattr(head, "value", head)
    out = np.asarray(out, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    est = decode(head, out, grid)
    lx, ly = grid.l_x, grid.l_y
    if head == "nll":
        qx = discretize_gaussian(out[:, 0], out[:, 2], grid.endpoints_x)
        qy = discretize_gaussian(out[:, 1], out[:, 3], grid.endpoints_y)
    elif head == "rbc":
        qx, qy = out[:, :lx], out[:, lx:lx + ly]
    else:
        raise ValueError(f"{head} head has no predictive distribution")
    return {
        "x": (entropy(qx), np.abs(est[:, 0] - truth[:, 0])),
        "y": (entropy(qy), np.abs(est[:, 1] - truth[:, 1])),
    }


def ause_report(outputs: Mapping[str, np.ndarray], truth, grid: BinGrid,
                heads=("nll", "rbc"), grid_pts: int = 100, trim: float = 0.01,
                variant: str = "entropy") -> dict[tuple[str, str], SparsificationResult]:
    """Per-axis sparsification results keyed by ``(head, axis)``."""
    truth = np.asarray(truth, dtype=np.float64)
    if truth.ndim != 2 or len(truth) < 2:
        raise ValueError("AUSE needs at least 2 test samples")
    missing = [h for h in heads if h not in outputs]
    if missing:
        raise ValueError(f"missing head outputs: {missing}")
    report = {}
    for h in heads:
        for axis, (u, err) in head_scores(h, outputs[h], truth, grid).items():
            report[(h, axis)] = sparsification(u, err, grid_pts, trim, variant)
    return report


def write_curves_csv(path, report: Mapping[tuple[str, str], SparsificationResult]):
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["head", "axis", "variant", "phi", "s", "g"])
        for (head, axis), res in report.items():
            for phi, s, g in res.rows():
                w.writerow([head, axis, res.variant, f"{phi:.6f}", repr(float(s)), repr(float(g))])
