"""The five pipeline commands.  Each reads and writes files under a run directory.

Run directory layout::

    dataset/             simulate
    checkpoint.{json,bin}, train_log.csv        train
    estimates.csv, cdf.csv, metrics.csv, sparsification.csv   evaluate
    smoothed.csv, smooth_report.csv             smooth
    plots/*.svg          report
"""

from __future__ import annotations

import csv
import logging
import time
from pathlib import Path

import numpy as np

from .. import attnet, losses, track, uq
from .. import tensor as T
from ..attnet import ConfigError, HeadKind
from . import dataset as dsm
from .config import ExperimentConfig

log = logging.getLogger("beamloc")


class TrainingAborted(RuntimeError):
    pass


def _fmt(v) -> str:
    return repr(float(v))


def _write_csv(path: Path, header, rows):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _read_csv(path: Path) -> tuple[list[str], list[list[str]]]:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty file")
    return rows[0], rows[1:]


# ---------------------------------------------------------------------------
# simulate


def cmd_simulate(cfg: ExperimentConfig, out) -> Path:
    """Simulate the configured scenario into ``<out>/dataset``."""
    t0 = time.perf_counter()
    ds = dsm.simulate(cfg.scenario, cfg.laps, cfg.speed_mps, cfg.dt_s, cfg.seed, cfg.corrupt_fraction)
    path = dsm.write(ds, Path(out) / "dataset")
    log.info("simulated %d snapshots of %s in %.1f s", len(ds), cfg.scenario, time.perf_counter() - t0)
    return path


# ---------------------------------------------------------------------------
# train


def _grid_for(extents, n_bins) -> losses.BinGrid:
    return losses.make_grid(extents, n_bins)


def prepare_split(ds: dsm.Dataset, cfg: ExperimentConfig):
    """Clean, then split by laps: training laps 0..train_laps-1, test on the last lap."""
    valid = ds.valid_mask()
    if cfg.laps != ds.manifest["laps"]:
        raise ConfigError(f"config expects {cfg.laps} laps, dataset has {ds.manifest['laps']}")
    tr, te = dsm.split_by_laps(ds, range(cfg.train_laps), [cfg.test_lap], valid)
    return tr[::cfg.train_stride], te, int((~valid).sum())


def cmd_train(cfg: ExperimentConfig, out, dataset_dir=None) -> Path:
    """Train on the configured laps; writes the checkpoint and ``train_log.csv``.

    A non-finite loss or gradient stops training; the checkpoint of the last
    completed epoch is written and ``TrainingAborted`` raised.
    """
    out = Path(out)
    ds = dsm.read(dataset_dir or out / "dataset")
    if ds.manifest["scenario"] != cfg.scenario:
        raise ConfigError(f"config scenario {cfg.scenario} does not match dataset {ds.manifest['scenario']}")
    tr, te, n_rejected = prepare_split(ds, cfg)
    if len(tr) == 0:
        raise dsm.DatasetError("no valid training snapshots")
    log.info("training on %d snapshots (%d rejected by cleaning), %d held out", len(tr), n_rejected, len(te))

    X = ds.fingerprints(tr).astype(cfg.dtype)
    P = ds.positions[tr]
    net_cfg = attnet.NetConfig(head=cfg.head, l_x=cfg.n_bins, l_y=cfg.n_bins,
                               extents=ds.extents, seed=cfg.seed, dtype=cfg.dtype)
    model = attnet.AttentionNet(net_cfg)
    grid = _grid_for(ds.extents, cfg.n_bins)
    opt_cls = T.Adam if cfg.optimizer == "adam" else T.SGD
    opt = opt_cls(model.parameters, lr=cfg.learning_rate)
    rng = np.random.default_rng([cfg.seed, 0x7A])
    extra = {"experiment": cfg.to_dict(), "normalization": ds.normalization,
             "train_laps": list(range(cfg.train_laps)), "test_lap": cfg.test_lap}

    ckpt = out / "checkpoint"
    log_rows = []
    last_good = model.state_blob()
    t0 = time.perf_counter()
    for epoch in range(1, cfg.epochs + 1):
        perm = rng.permutation(len(tr))
        total = 0.0
        try:
            for i in range(0, len(perm), cfg.batch_size):
                b = perm[i:i + cfg.batch_size]
                loss = losses.head_loss(cfg.head, model.forward(X[b]), P[b], grid)
                if not np.isfinite(loss.value):
                    raise FloatingPointError(f"non-finite loss at epoch {epoch}")
                opt.zero_grad()
                T.backward(loss)
                opt.step()
                total += float(loss.value) * len(b)
        except (FloatingPointError, ValueError) as e:
            model.load_blob(last_good)
            attnet.save_checkpoint(model, ckpt, epoch - 1, extra)
            _write_csv(out / "train_log.csv", ["epoch", "train_loss"], log_rows)
            raise TrainingAborted(f"{e}; kept checkpoint of epoch {epoch - 1}") from e
        last_good = model.state_blob()
        log_rows.append([epoch, _fmt(total / len(perm))])
        log.debug("epoch %d loss %.4f (%.0f s)", epoch, total / len(perm), time.perf_counter() - t0)
    log.info("trained %d epochs in %.1f s", cfg.epochs, time.perf_counter() - t0)
    attnet.save_checkpoint(model, ckpt, cfg.epochs, extra)
    _write_csv(out / "train_log.csv", ["epoch", "train_loss"], log_rows)
    return ckpt


# ---------------------------------------------------------------------------
# evaluate


def error_cdf(errors) -> tuple[np.ndarray, np.ndarray]:
    """Empirical CDF points (sorted error, fraction <= error), starting at (0, 0)."""
    e = np.sort(np.asarray(errors, dtype=np.float64))
    frac = np.arange(1, len(e) + 1) / len(e)
    return np.concatenate([[0.0], e]), np.concatenate([[0.0], frac])


def evaluate_outputs(head: str, out: np.ndarray, truth: np.ndarray, grid: losses.BinGrid,
                     grid_pts: int = 100, trim: float = 0.01) -> dict:
    """Estimates, errors, entropies and AUSE for a batch of head outputs."""
    head = HeadKind(head).value
    est = losses.decode(head, out, grid)
    err = np.sqrt(np.sum((est - truth) ** 2, axis=1))
    res = {"estimates": est, "errors": err, "rmse": float(np.sqrt(np.mean(err ** 2))),
           "entropy": None, "report": {}}
    if head in ("nll", "rbc"):
        scores = uq.head_scores(head, out, truth, grid)
        res["entropy"] = np.column_stack([scores["x"][0], scores["y"][0]])
        for axis, (u, e) in scores.items():
            res["report"][(head, axis)] = uq.sparsification(u, e, grid_pts, trim)
    return res


def cmd_evaluate(out, checkpoint=None, dataset_dir=None) -> dict:
    """Score the held-out lap; writes estimates, CDF, metrics and curves CSVs."""
    out = Path(out)
    model, manifest = attnet.load_checkpoint(checkpoint or out / "checkpoint")
    ds = dsm.read(dataset_dir or out / "dataset")
    extra = manifest.get("extra", {})
    if "experiment" not in extra:
        raise ConfigError("checkpoint carries no experiment configuration")
    cfg = ExperimentConfig.from_dict(extra["experiment"])
    net = model.config
    if tuple(net.extents) != tuple(ds.extents):
        raise ConfigError(f"checkpoint grid extents {net.extents} differ from dataset {ds.extents}")
    if net.head is HeadKind.RBC and net.l_x != cfg.n_bins:
        raise ConfigError(f"checkpoint has {net.l_x} bins, config {cfg.n_bins}")
    _, te, _ = prepare_split(ds, cfg)
    if len(te) < 2:
        raise dsm.DatasetError("fewer than 2 valid test snapshots")
    truth = ds.positions[te]
    grid = _grid_for(ds.extents, cfg.n_bins)
    raw = model.predict(ds.fingerprints(te))
    res = evaluate_outputs(net.head.value, raw, truth, grid)
    write_evaluation(out, res, ds.times[te], truth, cfg)
    return res


def write_evaluation(out: Path, res: dict, times, truth, cfg: ExperimentConfig):
    est, err, ent = res["estimates"], res["errors"], res["entropy"]
    header = ["t", "x_true", "y_true", "x_hat", "y_hat", "error"]
    cols = [times, truth[:, 0], truth[:, 1], est[:, 0], est[:, 1], err]
    if ent is not None:
        header += ["entropy_x", "entropy_y"]
        cols += [ent[:, 0], ent[:, 1]]
    _write_csv(out / "estimates.csv", header, ([_fmt(v) for v in row] for row in zip(*cols)))
    xs, fs = error_cdf(err)
    _write_csv(out / "cdf.csv", ["error", "cdf"], ([_fmt(a), _fmt(b)] for a, b in zip(xs, fs)))
    rows = [["head", cfg.head], ["n_test", len(err)], ["rmse", _fmt(res["rmse"])]]
    for (head, axis), r in res["report"].items():
        rows.append([f"ause_{axis}", _fmt(r.ause)])
    _write_csv(out / "metrics.csv", ["metric", "value"], rows)
    uq.write_curves_csv(out / "sparsification.csv", res["report"])


# ---------------------------------------------------------------------------
# smooth


def cmd_smooth(estimates_csv, out, eps1: float = 0.05, eps2: float = 1.2) -> dict:
    """Kalman-filter an estimates CSV; writes ``smoothed.csv`` and ``smooth_report.csv``."""
    header, rows = _read_csv(estimates_csv)
    need = ["t", "x_true", "y_true", "x_hat", "y_hat"]
    if any(c not in header for c in need):
        raise ValueError(f"{estimates_csv}: needs columns {need}")
    if len(rows) < 2:
        raise ValueError(f"{estimates_csv}: fewer than 2 estimates")
    a = np.array([[float(r[header.index(c)]) for c in need] for r in rows])
    t, truth, z = a[:, 0], a[:, 1:3], a[:, 3:5]
    # snapshots removed by cleaning leave gaps of whole steps; anything else is ragged
    steps = np.diff(t)
    dt = float(np.min(steps))
    gaps = np.rint(steps / dt) if dt > 0 else steps
    if dt <= 0 or np.max(np.abs(steps - gaps * dt)) > 1e-6 * dt + 1e-9:
        raise ValueError(f"{estimates_csv}: timestamps are not uniformly spaced")
    kf = track.KfConfig(dt=dt, eps1=eps1, eps2=eps2)
    filt = track.smooth(z, kf, gaps.astype(int))
    out = Path(out)
    _write_csv(out / "smoothed.csv", ["t", "x_true", "y_true", "x_raw", "y_raw", "x_kf", "y_kf"],
               ([_fmt(v) for v in row] for row in np.column_stack([t, truth, z, filt])))
    report = {"raw_rmse": track.rmse(z, truth), "filtered_rmse": track.rmse(filt, truth),
              "eps1": eps1, "eps2": eps2}
    _write_csv(out / "smooth_report.csv", list(report), [[_fmt(v) for v in report.values()]])
    return report


# ---------------------------------------------------------------------------
# report

REPORT_INPUTS = ("cdf.csv", "sparsification.csv", "smoothed.csv")


def cmd_report(run_dir) -> list[Path]:
    """Render the error CDF, per-axis sparsification curves and trajectory overlay as SVG."""
    from . import plots

    run_dir = Path(run_dir)
    missing = [n for n in REPORT_INPUTS if not (run_dir / n).is_file()]
    if missing:
        raise FileNotFoundError(f"{run_dir}: missing report inputs: {', '.join(missing)}")
    tables = {}
    for n in REPORT_INPUTS:
        header, rows = _read_csv(run_dir / n)
        if not rows:
            raise ValueError(f"{run_dir / n}: no data rows")
        tables[n] = (header, rows)
    plot_dir = run_dir / "plots"
    plot_dir.mkdir(exist_ok=True)
    return plots.render_all(tables, plot_dir)
