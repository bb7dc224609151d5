"""Training criteria for the three output heads and the binned decode rule.

Head outputs follow ``AttentionNet.forward``: MSE ``(B, 2)``, NLL ``(B, 4)``
as ``[x, y, var_x, var_y]``, RbC ``(B, L_x + L_y + 2)`` as
``[q_x, q_y, delta_x, delta_y]``.  Losses accept Nodes or arrays and return
a scalar Node so they can be backpropagated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from . import tensor as T
from .tensor import Node

NORM_TOL = 1e-9


@dataclass(frozen=True)
class BinGrid:
    b_lw_x: float
    b_up_x: float
    b_lw_y: float
    b_up_y: float
    l_x: int
    l_y: int

    def __post_init__(self):
        if not (self.b_up_x > self.b_lw_x and self.b_up_y > self.b_lw_y):
            raise ValueError(f"degenerate grid extents {self.extents}")
        if self.l_x < 2 or self.l_y < 2:
            raise ValueError(f"need at least 2 bins per axis, got {self.l_x}, {self.l_y}")

    @property
    def extents(self):
        return (self.b_lw_x, self.b_up_x, self.b_lw_y, self.b_up_y)

    @property
    def endpoints_x(self) -> np.ndarray:
        return self.b_lw_x + np.arange(self.l_x) * (self.b_up_x - self.b_lw_x) / self.l_x

    @property
    def endpoints_y(self) -> np.ndarray:
        return self.b_lw_y + np.arange(self.l_y) * (self.b_up_y - self.b_lw_y) / self.l_y

    def endpoints(self, axis: str) -> np.ndarray:
        return self.endpoints_x if axis == "x" else self.endpoints_y

    @property
    def diagonal(self) -> float:
        return math.hypot(self.b_up_x - self.b_lw_x, self.b_up_y - self.b_lw_y)

    def contains(self, p) -> np.ndarray:
        p = np.atleast_2d(p)
        return ((p[:, 0] >= self.b_lw_x) & (p[:, 0] < self.b_up_x)
                & (p[:, 1] >= self.b_lw_y) & (p[:, 1] < self.b_up_y))


def make_grid(extents, l_x: int, l_y: int | None = None) -> BinGrid:
    """Equal-width bins over ``extents = (x_lo, x_hi, y_lo, y_hi)``."""
    lo_x, hi_x, lo_y, hi_y = extents
    return BinGrid(float(lo_x), float(hi_x), float(lo_y), float(hi_y), int(l_x), int(l_y or l_x))


@dataclass
class GaussianPdf:
    mean: np.ndarray  # (2,)
    var: np.ndarray  # (2,)

    def __post_init__(self):
        if np.any(np.asarray(self.var) <= 0):
            raise ValueError("Gaussian variance must be positive")


@dataclass
class BinnedPdf:
    q_x: np.ndarray
    q_y: np.ndarray
    delta_x: float
    delta_y: float
    grid: BinGrid

    def __post_init__(self):
        for q in (self.q_x, self.q_y):
            if np.any(q < 0) or abs(float(np.sum(q)) - 1.0) > NORM_TOL:
                raise ValueError("bin probabilities must be nonnegative and sum to 1")


PositionPdf = Union[GaussianPdf, BinnedPdf]


def _truth(p) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 2 or p.shape[1] != 2 or len(p) == 0:
        raise ValueError(f"ground truth must be a non-empty (B, 2) array, got {p.shape}")
    return p


def mse_loss(pred, truth) -> Node:
    """(1/B) sum ||p - p_hat||^2."""
    pred = T.as_node(pred)
    p = _truth(truth)
    d = pred - p
    return T.scale(T.sum_(T.square(d)), 1.0 / len(p))


def nll_loss(out, truth) -> Node:
    """Gaussian negative log-likelihood over a ``[x, y, var_x, var_y]`` batch."""
    out = T.as_node(out)
    p = _truth(truth)
    var = out[:, 2:4]
    if np.any(var.value <= 0):
        raise ValueError("non-positive variance in NLL head output")
    d = out[:, 0:2] - p
    logdet = T.scale(T.sum_(T.log(var)), 0.5)
    fit = T.scale(T.sum_(T.div(T.square(d), var)), 0.5)
    return T.scale(logdet + fit, 1.0 / (2 * len(p)))


def _check_q(q: np.ndarray):
    # float32 outputs only normalize to within a few ulps per bin
    tol = NORM_TOL if q.dtype == np.float64 else 1e-4
    if np.any(q < 0) or np.any(np.abs(q.sum(axis=-1, dtype=np.float64) - 1.0) > tol):
        raise ValueError("bin probabilities must be nonnegative and sum to 1 per sample")


def rbc_loss(out, truth, grid: BinGrid, eta: int = 2, gamma1: float = 1.0, gamma2: float = 1.0,
             shift_norm: str = "l2") -> Node:
    """Binned expectation loss with a uniform-shift penalty.

    Per sample: ``|q_x . l_x - p_x + delta_x|^eta + (same for y)
    + gamma1 ||delta_x 1|| + gamma2 ||delta_y 1||``, averaged with 1/(2B).
    ``shift_norm`` picks the norm of the constant deviation vector:
    "l2" gives sqrt(L)|delta|, "l1" gives L|delta|.
    """
    out = T.as_node(out)
    p = _truth(truth)
    lx, ly = grid.l_x, grid.l_y
    if out.shape[-1] != lx + ly + 2:
        raise ValueError(f"RbC output width {out.shape[-1]} does not match grid ({lx}+{ly}+2)")
    qx, qy = out[:, :lx], out[:, lx:lx + ly]
    _check_q(qx.value)
    _check_q(qy.value)
    dx, dy = out[:, lx + ly:lx + ly + 1], out[:, lx + ly + 1:]
    ex = T.matmul(qx, grid.endpoints_x[:, None])
    ey = T.matmul(qy, grid.endpoints_y[:, None])
    fit = T.sum_(T.abs_pow(ex - p[:, 0:1] + dx, eta)) + T.sum_(T.abs_pow(ey - p[:, 1:2] + dy, eta))
    wx, wy = (math.sqrt(lx), math.sqrt(ly)) if shift_norm == "l2" else (lx, ly)
    if shift_norm not in ("l1", "l2"):
        raise ValueError(f"shift_norm must be 'l1' or 'l2', got {shift_norm!r}")
    pen = (T.scale(T.sum_(T.abs_pow(dx, 1)), gamma1 * wx)
           + T.scale(T.sum_(T.abs_pow(dy, 1)), gamma2 * wy))
    return T.scale(fit + pen, 1.0 / (2 * len(p)))


def rbc_decode(pdf, grid: BinGrid | None = None) -> np.ndarray:
    """Expected coordinate plus shift.

    Accepts a ``BinnedPdf`` (returns shape (2,)) or a raw RbC output batch
    ``(B, L_x + L_y + 2)`` together with ``grid`` (returns (B, 2)).
    """
    if isinstance(pdf, BinnedPdf):
        g = pdf.grid
        return np.array([pdf.q_x @ g.endpoints_x + pdf.delta_x, pdf.q_y @ g.endpoints_y + pdf.delta_y])
    if grid is None:
        raise ValueError("decoding a raw output batch needs the grid")
    out = np.asarray(getattr(pdf, "value", pdf), dtype=np.float64)
    lx, ly = grid.l_x, grid.l_y
    x = out[:, :lx] @ grid.endpoints_x + out[:, lx + ly]
    y = out[:, lx:lx + ly] @ grid.endpoints_y + out[:, lx + ly + 1]
    return np.stack([x, y], axis=1)


def head_loss(head: str, out, truth, grid: BinGrid | None = None, **rbc_kw) -> Node:
    head = getattr(head, "value", head)
    if head == "mse":
        return mse_loss(out, truth)
    if head == "nll":
        return nll_loss(out, truth)
    if head == "rbc":
        return rbc_loss(out, truth, grid, **rbc_kw)
    raise ValueError(f"unknown head {head!r}")


def decode(head: str, out, grid: BinGrid | None = None) -> np.ndarray:
    """Point estimates (B, 2) from a head output batch."""
    head = getattr(head, "value", head)
    out = np.asarray(getattr(out, "value", out))
    if head in ("mse", "nll"):
        return out[:, :2].copy()
    return rbc_decode(out, grid)


def to_pdfs(head: str, out, grid: BinGrid | None = None) -> list:
    head = getattr(head, "value", head)
    out = np.asarray(getattr(out, "value", out))
    if head == "nll":
        return [GaussianPdf(o[:2].copy(), o[2:4].copy()) for o in out]
    if head == "rbc":
        lx, ly = grid.l_x, grid.l_y
        return [BinnedPdf(o[:lx].copy(), o[lx:lx + ly].copy(), float(o[-2]), float(o[-1]), grid) for o in out]
    raise ValueError(f"{head} head carries no distribution")
