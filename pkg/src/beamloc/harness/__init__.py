"""Experiment orchestration: dataset files, configs and the pipeline commands."""

from .config import ExperimentConfig, default_bins, default_lr
from .dataset import Dataset, DatasetError

__all__ = ["ExperimentConfig", "default_bins", "default_lr", "Dataset", "DatasetError"]
