"""Constant-velocity Kalman smoothing of per-snapshot position estimates.

State ordering is ``[p_x, p_y, v_x, v_y]``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

OBS = np.array([[1.0, 0.0, 0.0, 0.0],
                [0.0, 1.0, 0.0, 0.0]])


@dataclass
class KfConfig:
    dt: float = 0.02
    eps1: float = 0.05  # state-noise std
    eps2: float = 1.2  # observation-noise std
    velocity_prior: float = 100.0  # initial velocity std (m/s)

    def __post_init__(self):
        if self.dt <= 0 or self.eps1 <= 0 or self.eps2 <= 0:
            raise ValueError(f"dt, eps1 and eps2 must be positive: {self}")

    @property
    def F(self) -> np.ndarray:
        f = np.eye(4)
        f[0, 2] = f[1, 3] = self.dt
        return f

    @property
    def Lambda(self) -> np.ndarray:
        return self.eps1 ** 2 * np.eye(4)

    @property
    def R(self) -> np.ndarray:
        return self.eps2 ** 2 * np.eye(2)


@dataclass
class TrackState:
    xi: np.ndarray  # (4,)
    Xi: np.ndarray  # (4, 4)
    t: float = 0.0

    @property
    def position(self) -> np.ndarray:
        return self.xi[:2]


def _sym(m):
    return 0.5 * (m + m.T)


def predict(s: TrackState, cfg: KfConfig) -> TrackState:
    F = cfg.F
    return TrackState(F @ s.xi, _sym(F @ s.Xi @ F.T + cfg.Lambda), s.t + cfg.dt)


def update(s: TrackState, z, cfg: KfConfig) -> TrackState:
    z = np.asarray(z, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise ValueError(f"non-finite measurement {z}")
    S = s.Xi[:2, :2] + cfg.R  # Phi Xi Phi^T + R
    det = S[0, 0] * S[1, 1] - S[0, 1] * S[1, 0]
    if not np.isfinite(det) or abs(det) <= 1e-300:
        raise np.linalg.LinAlgError("singular innovation covariance")
    S_inv = np.array([[S[1, 1], -S[0, 1]], [-S[1, 0], S[0, 0]]]) / det
    gain = s.Xi[:, :2] @ S_inv  # Xi Phi^T S^-1
    e = z - s.xi[:2]
    xi = s.xi + gain @ e
    Xi = _sym((np.eye(4) - gain @ OBS) @ s.Xi)
    return TrackState(xi, Xi, s.t)


def initial_state(z0, z1, cfg: KfConfig, gap: int = 1) -> TrackState:
    """State at the second estimate; ``gap`` is the number of steps between the two."""
    z0 = np.asarray(z0, dtype=np.float64)
    z1 = np.asarray(z1, dtype=np.float64)
    xi = np.concatenate([z1, (z1 - z0) / (gap * cfg.dt)])
    Xi = np.diag([cfg.eps2 ** 2, cfg.eps2 ** 2, cfg.velocity_prior ** 2, cfg.velocity_prior ** 2])
    return TrackState(xi, Xi, gap * cfg.dt)


def run(estimates, cfg: KfConfig, gaps=None) -> list[TrackState]:
    """Posterior states for every estimate; the first two are the initialization.

    ``gaps[i]`` is the whole number of ``dt`` steps between estimates ``i`` and
    ``i + 1`` (default 1).  Steps without an estimate are prediction-only.
    """
    z = np.asarray(estimates, dtype=np.float64)
    if z.ndim != 2 or z.shape[1] != 2 or len(z) < 2:
        raise ValueError(f"need at least 2 (x, y) estimates, got shape {z.shape}")
    gaps = np.ones(len(z) - 1, dtype=int) if gaps is None else np.asarray(gaps)
    if gaps.shape != (len(z) - 1,) or np.any(gaps < 1):
        raise ValueError("gaps must hold one positive step count per consecutive pair")
    s = initial_state(z[0], z[1], cfg, int(gaps[0]))
    first = TrackState(np.concatenate([z[0], s.xi[2:]]), s.Xi.copy(), 0.0)
    states = [first, s]
    for zt, k in zip(z[2:], gaps[1:]):
        for _ in range(int(k)):
            s = predict(s, cfg)
        s = update(s, zt, cfg)
        states.append(s)
    return states


def smooth(estimates, cfg: KfConfig | None = None, gaps=None) -> np.ndarray:
    """Filtered positions, shape (T, 2); causal (step t uses estimates up to t)."""
    cfg = cfg or KfConfig()
    return np.array([s.position for s in run(estimates, cfg, gaps)])


def rmse(a, b) -> float:
    d = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    return float(np.sqrt(np.mean(np.sum(d * d, axis=-1))))
