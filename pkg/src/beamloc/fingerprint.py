"""Data cleaning and impulse-response fingerprints."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .simkit import CLEANING_THRESHOLD, ChannelSnapshot


class Verdict(str, enum.Enum):
    VALID = "Valid"
    INVALID_SPARSE = "InvalidSparse"
    INVALID_STALE = "InvalidStale"


class InvalidSnapshotError(ValueError):
    pass


@dataclass(frozen=True)
class CleaningReport:
    verdict: Verdict
    nonzero_count: int

    @property
    def valid(self) -> bool:
        return self.verdict is Verdict.VALID


@dataclass
class FingerprintMatrix:
    amp: np.ndarray
    source_time: float = 0.0


def _ctf(s) -> np.ndarray:
    return s.ctf if isinstance(s, ChannelSnapshot) else np.asarray(s)


def validate(s, threshold: int = CLEANING_THRESHOLD) -> CleaningReport:
    """Label a snapshot.

    Sparse when fewer than ``threshold`` entries are nonzero; stale when
    every beam row (or every subcarrier column) holds exactly the same values.
    """
    h = _ctf(s)
    nnz = int(np.count_nonzero(h))
    if nnz < threshold:
        return CleaningReport(Verdict.INVALID_SPARSE, nnz)
    if (h.shape[0] > 1 and np.all(h == h[:1])) or (h.shape[1] > 1 and np.all(h == h[:, :1])):
        return CleaningReport(Verdict.INVALID_STALE, nnz)
    return CleaningReport(Verdict.VALID, nnz)


def hann_window(F: int) -> np.ndarray:
    """w[f] = sin^2(pi f / F), f = 0..F-1."""
    if F < 2:
        raise ValueError(f"Hann window needs F >= 2, got {F}")
    return np.sin(np.pi * np.arange(F) / F) ** 2


def to_fingerprint(s, window: bool = True, threshold: int = CLEANING_THRESHOLD,
                   check: bool = True, source_time: float = 0.0) -> FingerprintMatrix:
    """|IDFT_row(w * H)| with the 1/F-scaled inverse transform.

    Delay bin k corresponds to k / (F * subcarrier spacing) seconds.
    """
    h = _ctf(s)
    if check:
        rep = validate(h, threshold)
        if not rep.valid:
            raise InvalidSnapshotError(f"snapshot rejected: {rep.verdict.value} ({rep.nonzero_count} nonzeros)")
    if window:
        h = h * hann_window(h.shape[-1])
    return FingerprintMatrix(np.abs(np.fft.ifft(h, axis=-1)), source_time)


def fingerprints(ctfs: np.ndarray, window: bool = True) -> np.ndarray:
    """Batch version of ``to_fingerprint`` without validation, shape (T, rows, F)."""
    h = np.asarray(ctfs)
    if window:
        h = h * hann_window(h.shape[-1])
    return np.abs(np.fft.ifft(h, axis=-1))


def normalization_scale(ctfs: Sequence | np.ndarray, mean_power: float = 1.0) -> float:
    """Scalar c so that ||c * X||_F^2 equals ``mean_power`` times the entry count."""
    x = np.stack([_ctf(s) for s in ctfs]) if not isinstance(ctfs, np.ndarray) else ctfs
    if x.size == 0:
        raise ValueError("empty dataset")
    energy = float(np.sum(np.abs(x.astype(np.complex128)) ** 2))
    if energy == 0.0:
        raise ValueError("cannot normalize an all-zero dataset")
    if mean_power <= 0:
        raise ValueError("mean_power must be positive")
    return float(np.sqrt(mean_power * x.size / energy))


def normalize_dataset(X: Sequence[ChannelSnapshot], mean_power: float = 1.0
                      ) -> tuple[list[ChannelSnapshot], float]:
    """Scale every snapshot by one global factor; returns (scaled, factor)."""
    X = list(X)
    if not X:
        raise ValueError("empty dataset")
    c = normalization_scale(X, mean_power)
    out = [ChannelSnapshot(ctf=s.ctf * c, carrier_hz=s.carrier_hz, bandwidth_hz=s.bandwidth_hz,
                           valid_flag=s.valid_flag) for s in X]
    return out, c
