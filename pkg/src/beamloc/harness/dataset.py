"""On-disk dataset: JSON manifest plus little-endian binary record blobs.

Layout of a dataset directory::

    manifest.json   human-readable metadata
    ctf.bin         complex64 CTF records, shape (T, rows, cols)
    truth.bin       float64 per-record (x, y, t, lap)
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import fingerprint as fpm
from .. import simkit as sk

FORMAT = "beamloc-dataset/1"
CTF_DTYPE = "<c8"
TRUTH_DTYPE = "<f8"


class DatasetError(ValueError):
    pass


@dataclass
class Dataset:
    ctf: np.ndarray  # (T, rows, cols) complex64, un-normalized
    truth: np.ndarray  # (T, 4) float64: x, y, t, lap
    manifest: dict

    def __len__(self):
        return len(self.ctf)

    @property
    def positions(self) -> np.ndarray:
        return self.truth[:, :2]

    @property
    def times(self) -> np.ndarray:
        return self.truth[:, 2]

    @property
    def laps(self) -> np.ndarray:
        return self.truth[:, 3].astype(int)

    @property
    def extents(self) -> tuple[float, ...]:
        return tuple(self.manifest["extents"])

    @property
    def normalization(self) -> float:
        return float(self.manifest["normalization"])

    def valid_mask(self) -> np.ndarray:
        return np.array([fpm.validate(h).valid for h in self.ctf])

    def fingerprints(self, idx) -> np.ndarray:
        """Normalized fingerprint matrices for records ``idx``."""
        h = self.ctf[idx].astype(np.complex128) * self.normalization
        return fpm.fingerprints(h)


def simulate(scenario: str, laps: int, speed_mps: float, dt_s: float, seed: int,
             corrupt_fraction: float = 0.0) -> Dataset:
    """Drive the route, synthesize one snapshot per step, optionally damage some.

    The normalization scalar is computed from the records that pass cleaning.
    """
    sc = sk.get_scenario(scenario)
    track = sk.gen_trajectory(sc, laps, speed_mps, dt_s, seed)
    codebook = sk.ArrayCodebook()
    f_grid = sk.default_f_grid()
    T = len(track)
    ctf = np.empty((T, 2 * codebook.n_beams, len(f_grid)), dtype=np.complex64)
    for i, xy in enumerate(track.positions):
        ctf[i] = sk.simulate_snapshot(sc, xy, [seed, i], codebook, f_grid).ctf

    n_bad = int(round(corrupt_fraction * T))
    rng = np.random.default_rng([seed, 0xC0])
    bad = np.sort(rng.choice(T, size=n_bad, replace=False)) if n_bad else np.array([], dtype=int)
    for j, i in enumerate(bad):
        mode = "sparse" if j % 2 == 0 else "stale"
        snap = sk.ChannelSnapshot(ctf=ctf[i].astype(np.complex128))
        ctf[i] = sk.corrupt_snapshot(snap, mode, seed=int(rng.integers(2 ** 31))).ctf

    valid = np.array([fpm.validate(h).valid for h in ctf])
    scale = fpm.normalization_scale(ctf[valid])

    lo_x, hi_x, lo_y, hi_y = sc.extents()
    truth = np.column_stack([track.positions, track.timestamps, track.lap_ids.astype(float)])
    lap_starts = [int(np.argmax(track.lap_ids == k)) for k in range(laps)]
    manifest = {
        "format": FORMAT,
        "scenario": sc.name,
        "counts": {"T": T, "rows": int(ctf.shape[1]), "cols": int(ctf.shape[2])},
        "normalization": scale,
        "extents": [lo_x, hi_x, lo_y, hi_y],
        "seed": seed,
        "laps": laps,
        "lap_starts": lap_starts,
        "speed_mps": speed_mps,
        "dt_s": dt_s,
        "corrupt_fraction": corrupt_fraction,
        "n_corrupted": n_bad,
        "dtypes": {"ctf": CTF_DTYPE, "truth": TRUTH_DTYPE},
        "fingerprint": {"window": "hann", "transform": "amplitude of row-wise inverse DFT scaled by 1/F",
                        "delay_bin_s": 1.0 / (len(f_grid) * float(f_grid[1] - f_grid[0])),
                        "cleaning_threshold": sk.CLEANING_THRESHOLD, "mean_power": 1.0},
        "truth_columns": ["x", "y", "t", "lap"],
    }
    return Dataset(ctf, truth, manifest)


def write(ds: Dataset, directory) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    (d / "ctf.bin").write_bytes(np.ascontiguousarray(ds.ctf, dtype=CTF_DTYPE).tobytes())
    (d / "truth.bin").write_bytes(np.ascontiguousarray(ds.truth, dtype=TRUTH_DTYPE).tobytes())
    (d / "manifest.json").write_text(json.dumps(ds.manifest, indent=2, sort_keys=True) + "\n")
    return d


def read(directory) -> Dataset:
    d = Path(directory)
    missing = [n for n in ("manifest.json", "ctf.bin", "truth.bin") if not (d / n).is_file()]
    if missing:
        raise DatasetError(f"{d}: missing {', '.join(missing)}")
    manifest = json.loads((d / "manifest.json").read_text())
    if manifest.get("format") != FORMAT:
        raise DatasetError(f"{d}: unsupported format {manifest.get('format')!r}")
    c = manifest["counts"]
    ctf = np.frombuffer((d / "ctf.bin").read_bytes(), dtype=manifest["dtypes"]["ctf"])
    truth = np.frombuffer((d / "truth.bin").read_bytes(), dtype=manifest["dtypes"]["truth"])
    if ctf.size != c["T"] * c["rows"] * c["cols"] or truth.size != 4 * c["T"]:
        raise DatasetError(f"{d}: record count does not match manifest (T={c['T']})")
    ds = Dataset(ctf.reshape(c["T"], c["rows"], c["cols"]).astype(np.complex64),
                 truth.reshape(c["T"], 4).astype(np.float64), manifest)
    lo_x, hi_x, lo_y, hi_y = ds.extents
    p = ds.positions
    if not (np.all((p[:, 0] >= lo_x) & (p[:, 0] < hi_x)) and np.all((p[:, 1] >= lo_y) & (p[:, 1] < hi_y))):
        raise DatasetError(f"{d}: ground truth outside manifest extents")
    return ds


def split_by_laps(ds: Dataset, train_laps, test_laps, valid: np.ndarray | None = None):
    """Indices of training and test records; lap sets must be disjoint."""
    train_laps, test_laps = set(train_laps), set(test_laps)
    if train_laps & test_laps:
        raise DatasetError(f"train and test laps overlap: {sorted(train_laps & test_laps)}")
    laps = ds.laps
    keep = np.ones(len(ds), bool) if valid is None else valid
    tr = np.flatnonzero(np.isin(laps, list(train_laps)) & keep)
    te = np.flatnonzero(np.isin(laps, list(test_laps)) & keep)
    assert not set(laps[tr]) & set(laps[te])
    return tr, te
