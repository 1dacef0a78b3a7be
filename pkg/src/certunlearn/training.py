"""Norm-constrained training by projected gradient descent, and the retraining oracle."""

from __future__ import annotations

import csv
import dataclasses
import logging
from dataclasses import dataclass, field

import numpy as np

from certunlearn.data import Dataset, SplitPlan
from certunlearn.errors import InvalidArgument, NumericalFailure
from certunlearn.model import Mlp, MlpSpec
from certunlearn.numerics import SeededRng, project_to_l2_ball

log = logging.getLogger(__name__)

OPTIMIZERS = ("pgd-momentum", "pgd-plain")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.05
    epochs: int = 50
    batch_size: int = 32
    weight_decay: float = 0.0
    C: float = 10.0
    seed: int = 0
    optimizer: str = "pgd-momentum"
    momentum: float = 0.9

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise InvalidArgument("learning_rate must be positive")
        if self.epochs < 0:
            raise InvalidArgument("epochs must be non-negative")
        if self.batch_size < 1:
            raise InvalidArgument("batch_size must be positive")
        if self.weight_decay < 0:
            raise InvalidArgument("weight_decay must be non-negative")
        if not (self.C > 0 and np.isfinite(self.C)):
            raise InvalidArgument("C must be positive and finite")
        if self.optimizer not in OPTIMIZERS:
            raise InvalidArgument(f"optimizer must be one of {OPTIMIZERS}")
        if not 0 <= self.momentum < 1:
            raise InvalidArgument("momentum must lie in [0, 1)")

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)


@dataclass
class TrainedModel:
    w: np.ndarray
    residual_grad_norm: float
    loss_trace: list[float]
    C: float
    seed: int
    spec: MlpSpec | None = None
    dataset_hash: str | None = None
    epochs: int = 0
    extra: dict = field(default_factory=dict)


def train_pgd(
    model: Mlp,
    dataset: Dataset,
    cfg: TrainConfig,
    init: np.ndarray | None = None,
    indices: np.ndarray | None = None,
    trace: bool = True,
) -> TrainedModel:
    """Minibatch projected gradient descent on ``{w : ||w|| <= C}``.

    Each step takes a (momentum) gradient step on the minibatch loss plus
    ``weight_decay * w`` and projects back onto the ball. ``indices`` restricts
    training to a subset of rows; the initialisation depends only on the seed,
    so runs on different subsets share their starting point. The loss trace
    holds the full-batch loss before the first epoch and after each epoch.
    """
    rows = np.arange(len(dataset)) if indices is None else np.asarray(indices, dtype=np.int64)
    if len(rows) == 0:
        raise InvalidArgument("cannot train on an empty set")
    if dataset.features.shape[1] != model.spec.layer_dims[0]:
        raise InvalidArgument("dataset feature width does not match the model input")
    root = SeededRng(cfg.seed)
    w0 = model.init_params(root.child("init")) if init is None else np.array(init, dtype=np.float64)
    full = dataset.batch(rows)
    w = project_to_l2_ball(w0, cfg.C)
    losses = [model.loss(w, full)] if trace else []
    for epoch, w in enumerate(pgd_epochs(model, dataset, cfg, w, rows), start=1):
        if trace:
            try:
                losses.append(model.loss(w, full))
            except NumericalFailure:
                raise NumericalFailure(f"training diverged at epoch {epoch}") from None
    if not np.all(np.isfinite(w)):
        raise NumericalFailure("training diverged")
    residual = float(np.linalg.norm(model.grad(w, full)))
    return TrainedModel(
        w=w,
        residual_grad_norm=residual,
        loss_trace=losses,
        C=cfg.C,
        seed=cfg.seed,
        spec=model.spec,
        dataset_hash=dataset.hash_hex if indices is None else None,
        epochs=cfg.epochs,
    )


def pgd_epochs(model: Mlp, dataset: Dataset, cfg: TrainConfig, w: np.ndarray, rows: np.ndarray):
    """Yield the iterate after each of ``cfg.epochs`` projected-gradient epochs.

    Minibatch order comes from the ``batching`` stream of ``cfg.seed``.
    """
    w = project_to_l2_ball(np.asarray(w, dtype=np.float64), cfg.C)
    velocity = np.zeros_like(w)
    mu = cfg.momentum if cfg.optimizer == "pgd-momentum" else 0.0
    order_rng = SeededRng(cfg.seed).child("batching").generator()
    for epoch in range(1, cfg.epochs + 1):
        perm = rows[order_rng.permutation(len(rows))]
        for start in range(0, len(perm), cfg.batch_size):
            batch = dataset.batch(perm[start : start + cfg.batch_size])
            try:
                g = model.grad(w, batch)
            except NumericalFailure:
                raise NumericalFailure(f"training diverged at epoch {epoch}") from None
            if cfg.weight_decay:
                g = g + cfg.weight_decay * w
            velocity = mu * velocity + g
            step = w - cfg.learning_rate * velocity
            if not np.all(np.isfinite(step)):
                raise NumericalFailure(f"training diverged at epoch {epoch}")
            w = project_to_l2_ball(step, cfg.C)
        yield w


def retrain_oracle(model: Mlp, dataset: Dataset, split: SplitPlan, cfg: TrainConfig) -> TrainedModel:
    """Retrain from the same initialisation on the retained rows only.

    The residual gradient norm is measured on the retained set.
    """
    out = train_pgd(model, dataset, cfg, indices=split.retained_indices)
    out.dataset_hash = dataset.hash_hex
    out.extra["split_hash"] = split.split_hash
    return out


def write_loss_trace(trained: TrainedModel, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "loss"])
        for epoch, value in enumerate(trained.loss_trace):
            writer.writerow([epoch, repr(float(value))])
