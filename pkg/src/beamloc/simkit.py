"""Synthetic beamspace channel snapshots along closed-loop vehicle routes.

The base station sits at the origin (height 20 m) with boresight along +y.
Azimuth is measured from boresight towards +x; elevation is positive
upwards.  Each snapshot is the beam-domain channel transfer function for
two UE layers, rows ordered ``[H-pol layer 1, V-pol layer 1, H-pol layer 2,
V-pol layer 2]`` with 32 beams per block.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

C0 = 299_792_458.0
CARRIER_HZ = 3.85e9
SUBCARRIER_SPACING_HZ = 2.16e6  # one PRB-pair subgroup every third subgroup
N_SUBCARRIERS = 46
N_LAYERS = 2
BS_POSITION = np.array([0.0, 0.0, 20.0])
CLEANING_THRESHOLD = 3500


def default_f_grid(n: int = N_SUBCARRIERS, carrier_hz: float = CARRIER_HZ,
                   spacing_hz: float = SUBCARRIER_SPACING_HZ) -> np.ndarray:
    return carrier_hz + (np.arange(n) - (n - 1) / 2.0) * spacing_hz


@dataclass(frozen=True)
class ArrayCodebook:
    """2-D DFT beams over an ``n_cols x n_rows`` dual-polarized array.

    Beam ``i`` in ``[0, n_h)`` is horizontally polarized, ``[n_h, n_h + n_v)``
    vertically polarized; both groups share the same spatial DFT grid and
    differ only through the element pattern.  Gains are frequency-flat.
    """

    n_cols: int = 8
    n_rows: int = 4

    @property
    def n_h(self) -> int:
        return self.n_cols * self.n_rows

    @property
    def n_v(self) -> int:
        return self.n_cols * self.n_rows

    @property
    def n_beams(self) -> int:
        return self.n_h + self.n_v

    def _grid(self):
        uh = (2 * np.arange(self.n_cols) + 1) / self.n_cols - 1.0
        uv = (2 * np.arange(self.n_rows) + 1) / self.n_rows - 1.0
        return np.repeat(uh, self.n_rows), np.tile(uv, self.n_cols)

    def gains(self, azimuth, elevation) -> np.ndarray:
        """Complex gains of all beams, shape ``(n_beams, P)`` for P angle pairs."""
        az = np.atleast_1d(np.asarray(azimuth, dtype=float))
        el = np.atleast_1d(np.asarray(elevation, dtype=float))
        u = np.sin(az) * np.cos(el)
        v = np.sin(el)
        bu, bv = self._grid()
        nc = np.arange(self.n_cols)
        nr = np.arange(self.n_rows)
        # separable array factor, normalized by sqrt(#elements)
        afh = np.exp(1j * np.pi * np.outer(nc, u)[None, :, :] * 1.0
                     - 1j * np.pi * bu[:, None, None] * nc[None, :, None]).sum(axis=1)
        afv = np.exp(1j * np.pi * np.outer(nr, v)[None, :, :]
                     - 1j * np.pi * bv[:, None, None] * nr[None, :, None]).sum(axis=1)
        spatial = afh * afv / math.sqrt(self.n_cols * self.n_rows)
        pat_h = np.sqrt(np.clip(np.cos(az), 0.1, None))
        pat_v = np.clip(np.cos(el), 0.1, None)
        return np.concatenate([spatial * pat_h, spatial * pat_v], axis=0)

    def beam_gain(self, beam: int, azimuth: float, elevation: float, freq_hz: float) -> complex:
        if not 0 <= beam < self.n_beams:
            raise IndexError(f"beam {beam} outside [0, {self.n_beams})")
        return complex(self.gains(azimuth, elevation)[beam, 0])


@dataclass(frozen=True)
class MultipathComponent:
    delay_s: float
    gain: np.ndarray  # complex, one entry per UE layer
    azimuth_rad: float
    elevation_rad: float

    def __post_init__(self):
        if self.delay_s < 0:
            raise ValueError(f"negative path delay {self.delay_s}")
        g = np.atleast_1d(np.asarray(self.gain, dtype=complex))
        if not np.all(np.isfinite(g)):
            raise ValueError("path gain must be finite")
        object.__setattr__(self, "gain", g)


@dataclass
class ChannelSnapshot:
    ctf: np.ndarray
    carrier_hz: float = CARRIER_HZ
    bandwidth_hz: float = N_SUBCARRIERS * SUBCARRIER_SPACING_HZ
    valid_flag: bool | None = None

    @property
    def shape(self):
        return self.ctf.shape


@dataclass
class GroundTruthTrack:
    positions: np.ndarray  # (T, 2) metres
    timestamps: np.ndarray  # (T,) seconds
    lap_count: int
    lap_ids: np.ndarray  # (T,) lap index of each sample

    @property
    def dt(self) -> float:
        return float(self.timestamps[1] - self.timestamps[0]) if len(self.timestamps) > 1 else 0.0

    def __len__(self):
        return len(self.timestamps)


# ---------------------------------------------------------------------------
# geometry


@dataclass(frozen=True)
class Route:
    """Axis-aligned rectangle with rounded corners, traversed counter-clockwise."""

    center: tuple[float, float]
    width: float
    height: float
    corner_radius: float = 0.0

    def __post_init__(self):
        r = self.corner_radius
        if self.width <= 0 or self.height <= 0 or r < 0 or 2 * r > min(self.width, self.height):
            raise ValueError(f"degenerate route {self}")

    @property
    def perimeter(self) -> float:
        r = self.corner_radius
        return 2 * (self.width + self.height) - 8 * r + 2 * math.pi * r

    def _segments(self):
        cx, cy = self.center
        w2, h2, r = self.width / 2, self.height / 2, self.corner_radius
        # (kind, length, params); start at bottom edge just after the lower-left arc
        segs = []
        corners = [(cx + w2 - r, cy - h2 + r), (cx + w2 - r, cy + h2 - r),
                   (cx - w2 + r, cy + h2 - r), (cx - w2 + r, cy - h2 + r)]
        starts = [(cx - w2 + r, cy - h2), (cx + w2, cy - h2 + r),
                  (cx + w2 - r, cy + h2), (cx - w2, cy + h2 - r)]
        dirs = [(1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0)]
        lengths = [self.width - 2 * r, self.height - 2 * r] * 2
        for k in range(4):
            segs.append(("line", lengths[k], starts[k], dirs[k]))
            if r > 0:
                a0 = -math.pi / 2 + k * math.pi / 2
                segs.append(("arc", math.pi * r / 2, corners[k], a0))
        return segs

    def point_normal(self, s: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Position and outward unit normal at arc length ``s`` (wrapped)."""
        s = np.mod(np.asarray(s, dtype=float), self.perimeter)
        pts = np.zeros(s.shape + (2,))
        nrm = np.zeros(s.shape + (2,))
        acc = 0.0
        r = self.corner_radius
        for kind, length, p, q in self._segments():
            sel = (s >= acc) & (s < acc + length) if length > 0 else np.zeros(s.shape, bool)
            u = s[sel] - acc
            if kind == "line":
                d = np.array(q)
                pts[sel] = np.array(p) + u[:, None] * d
                nrm[sel] = np.array([d[1], -d[0]])
            else:
                ang = q + u / r
                pts[sel] = np.array(p) + r * np.stack([np.cos(ang), np.sin(ang)], axis=-1)
                nrm[sel] = np.stack([np.cos(ang), np.sin(ang)], axis=-1)
            acc += length
        return pts, nrm

    def extents(self, margin: float = 0.0):
        cx, cy = self.center
        return (cx - self.width / 2 - margin, cx + self.width / 2 + margin,
                cy - self.height / 2 - margin, cy + self.height / 2 + margin)


@dataclass(frozen=True)
class Reflector:
    """Specular wall (image method) or point scatterer.

    ``kind`` is "wall" (``point`` on the wall line, ``normal`` its 2-D unit
    normal) or "scatterer" (``point`` = (x, y, z)).
    """

    kind: str
    point: tuple
    gain_db: float
    normal: tuple = (0.0, 1.0)
    phase: float = 0.0


@dataclass(frozen=True)
class Scenario:
    name: str
    route: Route
    reflectors: tuple[Reflector, ...]
    los: bool = True
    los_gain_db: float = 0.0
    blockage_arc: tuple[float, float] | None = None  # azimuth interval (rad) without LoS
    blockage_min_range: float = 0.0  # blocker sits this far out; closer UEs keep LoS
    ue_height: float = 1.5
    snr_db: float = 20.0
    phase_jitter_rad: float = 0.3
    margin: float = 3.0

    def extents(self):
        return self.route.extents(self.margin)

    def los_visible(self, xy) -> bool:
        if not self.los:
            return False
        if self.blockage_arc is None:
            return True
        az = math.atan2(xy[0] - BS_POSITION[0], xy[1] - BS_POSITION[1])
        lo, hi = self.blockage_arc
        rng_m = math.hypot(xy[0] - BS_POSITION[0], xy[1] - BS_POSITION[1])
        return not (lo <= az <= hi and rng_m > self.blockage_min_range)

    def paths_at(self, xy, rng: np.random.Generator | None = None) -> list[MultipathComponent]:
        """Propagation paths for a UE at ``xy``; ``rng`` adds per-layer phase jitter."""
        lam = C0 / CARRIER_HZ
        ue = np.array([xy[0], xy[1], self.ue_height])
        bs = BS_POSITION
        geo = []  # (length, source seen from BS, last hop towards UE, amplitude)
        if self.los_visible(xy):
            d = float(np.linalg.norm(ue - bs))
            geo.append((d, ue, bs, 10 ** (self.los_gain_db / 20), 0.0))
        for ref in self.reflectors:
            g = 10 ** (ref.gain_db / 20)
            if ref.kind == "wall":
                p = np.array(ref.point, dtype=float)
                n = np.array(ref.normal, dtype=float)
                n = n / np.linalg.norm(n)
                img2 = ue[:2] - 2 * np.dot(ue[:2] - p, n) * n
                img = np.array([img2[0], img2[1], ue[2]])
                d = float(np.linalg.norm(img - bs))
                geo.append((d, img, img, g, ref.phase))
            elif ref.kind == "scatterer":
                s = np.array(ref.point, dtype=float)
                d = float(np.linalg.norm(ue - s) + np.linalg.norm(s - bs))
                geo.append((d, s, s, g, ref.phase))
            else:
                raise ValueError(f"unknown reflector kind {ref.kind!r}")

        paths = []
        for d, src, nxt, g, phase in geo:
            rel = src - bs
            az = math.atan2(rel[0], rel[1])
            el = math.atan2(rel[2], math.hypot(rel[0], rel[1]))
            dep = nxt[:2] - ue[:2]
            dep_az = math.atan2(dep[0], dep[1])
            amp = g * lam / (4 * math.pi * d)
            layer_phase = np.pi * np.arange(N_LAYERS) * math.sin(dep_az) + phase
            if rng is not None and self.phase_jitter_rad > 0:
                layer_phase = layer_phase + rng.normal(0.0, self.phase_jitter_rad, N_LAYERS)
            paths.append(MultipathComponent(d / C0, amp * np.exp(1j * layer_phase), az, el))
        return paths


def _scenarios() -> dict[str, Scenario]:
    route = Route(center=(0.0, 60.0), width=75.0, height=50.0, corner_radius=5.0)
    los = Scenario(
        name="LoS", route=route, snr_db=20.0, los=True,
        reflectors=(
            Reflector("wall", (0.0, 100.0), -15.0, normal=(0.0, 1.0), phase=0.4),
            Reflector("wall", (-50.0, 0.0), -15.0, normal=(1.0, 0.0), phase=1.9),
            Reflector("scatterer", (30.0, 95.0, 8.0), -15.0, phase=2.7),
        ))
    nlos = Scenario(
        name="NLoS", route=Route(center=(5.0, 58.0), width=70.0, height=52.0, corner_radius=5.0),
        snr_db=10.0, los=False,
        reflectors=(
            Reflector("wall", (0.0, 96.0), -1.0, normal=(0.0, 1.0), phase=0.3),
            Reflector("wall", (-42.0, 0.0), -3.0, normal=(1.0, 0.0), phase=1.1),
            Reflector("wall", (52.0, 0.0), -4.0, normal=(1.0, 0.0), phase=2.0),
            Reflector("scatterer", (-25.0, 100.0, 10.0), -2.0, phase=0.7),
            Reflector("scatterer", (35.0, 25.0, 6.0), -5.0, phase=2.9),
            Reflector("scatterer", (-38.0, 28.0, 9.0), -6.0, phase=4.1),
            Reflector("scatterer", (15.0, 110.0, 12.0), -3.0, phase=5.0),
            Reflector("scatterer", (48.0, 90.0, 7.0), -6.0, phase=1.6),
        ))
    mixed = Scenario(
        name="Mixed", route=Route(center=(-5.0, 62.0), width=72.0, height=50.0, corner_radius=5.0),
        snr_db=15.0, los=True, blockage_arc=(math.radians(-25.0), math.radians(5.0)),
        blockage_min_range=55.0,
        reflectors=(
            Reflector("wall", (0.0, 98.0), -6.0, normal=(0.0, 1.0), phase=0.8),
            Reflector("wall", (-48.0, 0.0), -8.0, normal=(1.0, 0.0), phase=2.2),
            Reflector("scatterer", (-20.0, 45.0, 14.0), -4.0, phase=1.3),
            Reflector("scatterer", (30.0, 100.0, 9.0), -7.0, phase=3.3),
            Reflector("scatterer", (40.0, 35.0, 6.0), -9.0, phase=4.4),
        ))
    return {s.name: s for s in (los, nlos, mixed)}


SCENARIOS = _scenarios()


def get_scenario(name) -> Scenario:
    if isinstance(name, Scenario):
        return name
    try:
        return SCENARIOS[name]
    except KeyError:
        raise ValueError(f"unknown scenario {name!r}; expected one of {sorted(SCENARIOS)}") from None


# ---------------------------------------------------------------------------
# operations


def gen_trajectory(scenario, laps: int, speed_mps: float, dt_s: float, seed: int,
                   route: Route | None = None, n_steps: int | None = None,
                   wobble_m: float = 0.5, speed_jitter: float = 0.03) -> GroundTruthTrack:
    """Drive ``laps`` laps around the scenario route.

    The lateral offset from the nominal route and the speed both drift slowly
    (amplitudes ``wobble_m`` and ``speed_jitter``), so no two laps retrace the
    same points.  A stationary UE (speed 0) yields one sample per lap unless
    ``n_steps`` is given.
    """
    if dt_s <= 0:
        raise ValueError(f"dt_s must be positive, got {dt_s}")
    if laps < 1:
        raise ValueError(f"laps must be >= 1, got {laps}")
    if speed_mps < 0:
        raise ValueError(f"speed_mps must be >= 0, got {speed_mps}")
    route = route or get_scenario(scenario).route
    rng = np.random.default_rng(seed)
    perim = route.perimeter
    if n_steps is None:
        n_steps = laps if speed_mps == 0 else int(round(laps * perim / (speed_mps * dt_s)))
    t = np.arange(n_steps) * dt_s

    ph_v, ph_w1, ph_w2 = rng.uniform(0, 2 * np.pi, 3)
    period = 1.37 * perim / speed_mps if speed_mps > 0 else 1.0
    w = 2 * np.pi / period
    # s(t) = v t + integral of v * jitter * sin(w t + ph)
    s = speed_mps * t + speed_mps * speed_jitter / w * (np.cos(ph_v) - np.cos(w * t + ph_v))
    if speed_mps == 0:
        s = np.zeros_like(t)
    pts, nrm = route.point_normal(s)
    offset = wobble_m * (0.6 * np.sin(2 * np.pi * s / (0.73 * perim) + ph_w1)
                         + 0.4 * np.sin(2 * np.pi * s / (2.9 * perim) + ph_w2))
    positions = pts + offset[:, None] * nrm
    lap_ids = np.minimum((s // perim).astype(int), laps - 1) if speed_mps > 0 else (
        np.arange(n_steps) * laps // max(n_steps, 1))
    return GroundTruthTrack(positions, t, laps, lap_ids)


def synth_snapshot(point, codebook: ArrayCodebook, paths: Sequence[MultipathComponent],
                   f_grid, seed: int | None = None, snr_db: float | None = None) -> ChannelSnapshot:
    """Beam-domain CTF of a set of paths.

    Entry ``(row, f)`` is ``sum_p beta_row(az_p, el_p) alpha_{p,layer} exp(-j 2 pi f tau_p)``.
    ``point`` is carried for bookkeeping only; the geometry is in ``paths``.
    With ``snr_db`` set, complex white noise is added at that SNR relative to
    the snapshot's mean power.
    """
    if not paths:
        raise ValueError("no propagation paths")
    f = np.asarray(f_grid, dtype=float)
    az = np.array([p.azimuth_rad for p in paths])
    el = np.array([p.elevation_rad for p in paths])
    tau = np.array([p.delay_s for p in paths])
    alpha = np.stack([p.gain for p in paths])  # (P, layers)
    beams = codebook.gains(az, el)  # (n_beams, P)
    # reduce the carrier phase exactly before scaling by 2*pi to keep the
    # delay-phase slope precise
    cyc = np.outer(tau, f)
    phase = np.exp(-2j * np.pi * (cyc - np.round(cyc)))
    blocks = [(beams * alpha[:, m]) @ phase for m in range(alpha.shape[1])]
    ctf = np.concatenate(blocks, axis=0)
    if snr_db is not None:
        rng = np.random.default_rng(seed)
        p_sig = float(np.mean(np.abs(ctf) ** 2))
        sigma = math.sqrt(p_sig / 10 ** (snr_db / 10) / 2)
        ctf = ctf + sigma * (rng.standard_normal(ctf.shape) + 1j * rng.standard_normal(ctf.shape))
    bw = float(f[-1] - f[0] + (f[1] - f[0])) if len(f) > 1 else 0.0
    return ChannelSnapshot(ctf=ctf, carrier_hz=float(f.mean()), bandwidth_hz=bw)


def simulate_snapshot(scenario, xy, seed, codebook: ArrayCodebook | None = None,
                      f_grid=None) -> ChannelSnapshot:
    """One noisy snapshot of ``scenario`` at ``xy``; ``seed`` drives jitter and noise."""
    sc = get_scenario(scenario)
    rng = np.random.default_rng(seed)
    paths = sc.paths_at(xy, rng)
    return synth_snapshot(xy, codebook or ArrayCodebook(), paths,
                          default_f_grid() if f_grid is None else f_grid,
                          seed=int(rng.integers(2 ** 63)), snr_db=sc.snr_db)


def corrupt_snapshot(s: ChannelSnapshot, mode: str, seed: int,
                     threshold: int = CLEANING_THRESHOLD) -> ChannelSnapshot:
    """Emulate streaming failures.

    ``sparse`` zeroes whole beams and then single entries until fewer than
    ``threshold`` nonzeros remain; ``stale`` repeats one row in every beam.
    """
    rng = np.random.default_rng(seed)
    ctf = s.ctf.copy()
    if mode == "sparse":
        rows, cols = ctf.shape
        target = int(rng.integers(threshold // 3, threshold))
        order = rng.permutation(rows)
        k = 0
        while np.count_nonzero(ctf) - cols >= target and k < rows:
            ctf[order[k]] = 0
            k += 1
        nz = np.flatnonzero(ctf)
        excess = len(nz) - target
        if excess > 0:
            ctf.flat[rng.choice(nz, size=excess, replace=False)] = 0
    elif mode == "stale":
        ctf[:] = ctf[int(rng.integers(ctf.shape[0]))]
    else:
        raise ValueError(f"unknown corruption mode {mode!r}")
    return ChannelSnapshot(ctf=ctf, carrier_hz=s.carrier_hz, bandwidth_hz=s.bandwidth_hz)
