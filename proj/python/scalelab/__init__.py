"""Deterministic data-parallel training and scaling-efficiency analysis."""

import json

import numpy as np

from . import _scalelab
from ._scalelab import (
    Diverged,
    Error,
    NotPositiveDefinite,
    ci95,
    cholesky,
    efficiency,
    fit_speedup,
    gaussian_pdf,
    lr_at,
    mixture_density,
    msle,
    param_count,
    predict_speedup,
    render_grid,
    student_t975,
    tree_sum,
)

__all__ = [
    "Diverged",
    "Error",
    "NotPositiveDefinite",
    "RunLog",
    "ci95",
    "cholesky",
    "default_config",
    "efficiency",
    "fit_speedup",
    "gaussian_pdf",
    "generate",
    "lr_at",
    "mixture_density",
    "msle",
    "param_count",
    "predict_speedup",
    "render_grid",
    "student_t975",
    "time_to_loss",
    "train",
    "tree_sum",
]


class RunLog:
    """Per-epoch records (epoch, train_loss, val_loss, elapsed_s) and a status line."""

    def __init__(self, records, status):
        self.records = [tuple(r) for r in records]
        self.status = status

    @property
    def val_loss(self):
        return np.array([r[2] for r in self.records])

    @property
    def elapsed(self):
        return np.array([r[3] for r in self.records])

    def __repr__(self):
        return f"RunLog({len(self.records)} epochs, {self.status})"


def default_config():
    return json.loads(_scalelab.default_config())


def generate(**options):
    """Synthetic voxel examples as an array of shape (count, side, ..., side)."""
    return _scalelab.generate(json.dumps(options))


def train(config=None, dataset=None, validation_size=256, on_epoch=None):
    """Trains one configuration on a generated dataset and returns its RunLog.

    ``config`` and ``dataset`` use the same keys as the JSON config files;
    the dataset grid follows the model unless given explicitly.
    """
    config = dict(config or {})
    dataset = dict(dataset or {})
    model = {**default_config()["model"], **config.get("model", {})}
    dataset.setdefault("n", model["n"])
    dataset.setdefault("side", model["side"])
    records, status = _scalelab.train(json.dumps(config), json.dumps(dataset), validation_size, on_epoch)
    return RunLog(records, status)


def time_to_loss(log, target):
    """(outcome, seconds or None, epoch) for the first validation loss <= target."""
    return _scalelab.time_to_loss(log.records, log.status, target)
