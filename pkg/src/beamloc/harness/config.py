"""Experiment configuration with the default training protocol."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from ..attnet import ConfigError, HeadKind
from ..simkit import SCENARIOS

# learning rate by (training laps, scenario); 4-lap training uses one rate everywhere
_LR_TABLE = {
    (4, "LoS"): 0.0006, (4, "NLoS"): 0.0006, (4, "Mixed"): 0.0006,
    (2, "LoS"): 0.0002, (2, "NLoS"): 0.0001, (2, "Mixed"): 0.0002,
}


def default_lr(scenario: str, train_laps: int) -> float:
    try:
        return _LR_TABLE[(train_laps, scenario)]
    except KeyError:
        raise ConfigError(f"no default learning rate for {train_laps}-lap training on {scenario}; "
                          "set lr explicitly") from None


def default_bins(scenario: str) -> int:
    return 200 if scenario == "LoS" else 100


@dataclass
class ExperimentConfig:
    """Everything a run needs; ``None`` fields fall back to protocol defaults.

    Attributes:
        scenario: "LoS", "NLoS" or "Mixed".
        laps: laps simulated into the dataset; the last one is held out for testing.
        train_laps: laps used for training ("low" density 2, "high" density 4).
        train_stride: keep every k-th training snapshot (thins the training set).
        speed_mps, dt_s: UE speed and snapshot interval.
        head: "mse", "nll" or "rbc".
        lr: learning rate; default from the (train_laps, scenario) table.
        bins: RbC/AUSE bins per axis; default 200 for LoS and 100 otherwise.
        corrupt_fraction: fraction of records damaged at simulation time.
        dtype: training precision, "float32" or "float64".
        eps1, eps2: Kalman process and measurement noise levels.
        optimizer: "adam" (default) or "sgd".
    """

    scenario: str = "LoS"
    laps: int = 5
    train_laps: int = 2
    train_stride: int = 1
    speed_mps: float = 15.0 / 3.6
    dt_s: float = 0.02
    head: str = "rbc"
    lr: float | None = None
    epochs: int = 100
    batch_size: int = 64
    seed: int = 0
    bins: int | None = None
    corrupt_fraction: float = 0.0
    dtype: str = "float64"
    eps1: float = 0.05
    eps2: float = 1.2
    optimizer: str = "adam"

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}; expected one of {sorted(SCENARIOS)}")
        try:
            self.head = HeadKind(self.head).value
        except ValueError:
            raise ConfigError(f"unknown head {self.head!r}") from None
        if self.laps < 2:
            raise ConfigError("need at least 2 laps (train + held-out)")
        if not 1 <= self.train_laps < self.laps:
            raise ConfigError(f"train_laps must be in [1, {self.laps - 1}], got {self.train_laps}")
        for name in ("epochs", "batch_size", "train_stride"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if not 0.0 <= self.corrupt_fraction < 1.0:
            raise ConfigError("corrupt_fraction must be in [0, 1)")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"optimizer must be adam or sgd, got {self.optimizer!r}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")

    @property
    def learning_rate(self) -> float:
        return self.lr if self.lr is not None else default_lr(self.scenario, self.train_laps)

    @property
    def n_bins(self) -> int:
        return self.bins if self.bins is not None else default_bins(self.scenario)

    @property
    def test_lap(self) -> int:
        return self.laps - 1

    def to_dict(self) -> dict:
        return asdict(self)

    def replace(self, **changes) -> "ExperimentConfig":
        d = self.to_dict()
        d.update(changes)
        return ExperimentConfig(**d)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            d = json.loads(Path(path).read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON ({e})") from None
        if not isinstance(d, dict):
            raise ConfigError(f"{path}: expected a JSON object")
        return cls.from_dict(d)

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
