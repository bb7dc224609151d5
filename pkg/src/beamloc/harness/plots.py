"""Deterministic SVG rendering (no timestamps, fixed hash salt)."""

from __future__ import annotations

from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

_RC = {"svg.hashsalt": "beamloc", "svg.fonttype": "none", "figure.figsize": (6.0, 4.0)}


def _save(fig, path: Path) -> Path:
    fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)
    return path


def _col(header, rows, name):
    i = header.index(name)
    return [float(r[i]) for r in rows]


def render_all(tables: dict, plot_dir: Path) -> list[Path]:
    out = []
    with plt.rc_context(_RC):
        header, rows = tables["cdf.csv"]
        fig, ax = plt.subplots()
        ax.step(_col(header, rows, "error"), _col(header, rows, "cdf"), where="post")
        ax.set_xlabel("positioning error (m)")
        ax.set_ylabel("CDF")
        ax.set_ylim(0, 1.02)
        ax.grid(True, alpha=0.3)
        out.append(_save(fig, plot_dir / "error_cdf.svg"))

        header, rows = tables["sparsification.csv"]
        curves = defaultdict(lambda: defaultdict(list))
        for r in rows:
            rec = dict(zip(header, r))
            c = curves[rec["axis"]][rec["head"]]
            c.append((float(rec["phi"]), float(rec["s"]), float(rec["g"])))
        for axis in sorted(curves):
            fig, ax = plt.subplots()
            for head in sorted(curves[axis]):
                phi, s, g = zip(*curves[axis][head])
                ax.plot(phi, s, label=f"{head.upper()} sparsification")
                ax.plot(phi, g, "--", label=f"{head.upper()} oracle")
            ax.set_xlabel("fraction removed")
            ax.set_ylabel(f"mean abs error, {axis} (m)")
            ax.legend()
            ax.grid(True, alpha=0.3)
            out.append(_save(fig, plot_dir / f"sparsification_{axis}.svg"))

        header, rows = tables["smoothed.csv"]
        fig, ax = plt.subplots()
        ax.plot(_col(header, rows, "x_raw"), _col(header, rows, "y_raw"), ".", ms=2, alpha=0.5, label="raw")
        ax.plot(_col(header, rows, "x_kf"), _col(header, rows, "y_kf"), lw=1, label="filtered")
        ax.plot(_col(header, rows, "x_true"), _col(header, rows, "y_true"), "k--", lw=1, label="truth")
        ax.set_xlabel("x (m)")
        ax.set_ylabel("y (m)")
        ax.set_aspect("equal", adjustable="datalim")
        ax.legend()
        out.append(_save(fig, plot_dir / "trajectory.svg"))
    return out
