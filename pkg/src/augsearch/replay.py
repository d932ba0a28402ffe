"""Final training that replays a searched schedule epoch by epoch."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import nnet
from .augment import OpTable, apply_op
from .data import Dataset
from .nnet import Batch
from .rng import substream
from .schedule import Schedule

MODES = ("dynamic", "fixed_ptp", "fixed_po", "fixed_both", "none")


@dataclass
class ReplayConfig:
    epochs: int = 20
    batch_size: int = 32
    lr: float = 0.1
    lr_schedule: str = "constant"  # constant | cosine | step
    lr_steps: tuple[int, ...] = ()  # epochs (1-based) after which lr *= lr_gamma
    lr_gamma: float = 0.1
    hidden: tuple[int, ...] = (64, 32)
    seed: int = 0
    mode: str = "dynamic"
    fixed_ptp: float | None = None
    fixed_po: tuple[float, ...] | None = None

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        self.lr_steps = tuple(int(s) for s in self.lr_steps)
        if self.fixed_po is not None:
            self.fixed_po = tuple(float(p) for p in self.fixed_po)
        self.validate()

    def validate(self) -> None:
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("replay.epochs and replay.batch_size must be >= 1")
        if not self.lr > 0:
            raise ValueError("replay.lr must be > 0")
        if self.lr_schedule not in ("constant", "cosine", "step"):
            raise ValueError(f"replay.lr_schedule must be constant, cosine or step, got {self.lr_schedule!r}")
        if self.mode not in MODES:
            raise ValueError(f"replay.mode must be one of {MODES}, got {self.mode!r}")
        if self.mode in ("fixed_ptp", "fixed_both"):
            if self.fixed_ptp is None or not 0.0 <= self.fixed_ptp <= 1.0:
                raise ValueError("replay.fixed_ptp must be a probability in this mode")
        if self.mode in ("fixed_po", "fixed_both"):
            if self.fixed_po is None:
                raise ValueError("replay.fixed_po is required in this mode")
            p = self.fixed_po
            if any(x < 0 or not math.isfinite(x) for x in p) or abs(math.fsum(p) - 1.0) > 1e-9:
                raise ValueError("replay.fixed_po must be a probability vector")


@dataclass
class EpochMetrics:
    epoch: int
    train_loss: float
    test_error: float
    realized_aug_rate: float


def sample_and_apply(
    batch: Batch,
    p_tp: float,
    p_o: Sequence[float],
    n_ops: int,
    table: OpTable,
    rng: np.random.Generator,
) -> tuple[Batch, int]:
    """Augment each image with probability ``p_tp`` using ``n_ops`` i.i.d. ops from ``p_o``.

    The draws are made up front for the whole batch, so the amount of
    randomness consumed does not depend on ``p_tp`` or ``p_o``. Returns the new
    batch and the number of images that were augmented.
    """
    n = len(batch)
    augment = rng.random(n) < p_tp
    choices = rng.choice(len(table), size=(n, n_ops), p=np.asarray(p_o, dtype=np.float64))
    images = batch.images.copy()
    for i in np.flatnonzero(augment):
        img = images[i]
        for j in choices[i]:
            img = apply_op(img, table[int(j)], rng)
        images[i] = img
    return Batch(images, batch.labels), int(augment.sum())


def epoch_policy(config: ReplayConfig, schedule: Schedule | None, epoch: int) -> tuple[float, tuple[float, ...]]:
    """``(p_tp, p_o)`` used during 1-based ``epoch`` under the configured mode."""
    mode = config.mode
    if mode == "none":
        k = schedule.k if schedule is not None else 1
        return 0.0, (1.0,) + (0.0,) * (k - 1)
    if mode == "fixed_both":
        return config.fixed_ptp, config.fixed_po
    snap = schedule.snapshots[epoch - 1]
    if mode == "fixed_ptp":
        return config.fixed_ptp, snap.p_o
    if mode == "fixed_po":
        return snap.p_tp, config.fixed_po
    return snap.p_tp, snap.p_o


def learning_rate(config: ReplayConfig, epoch: int) -> float:
    if config.lr_schedule == "cosine":
        return config.lr * 0.5 * (1.0 + math.cos(math.pi * (epoch - 1) / config.epochs))
    if config.lr_schedule == "step":
        return config.lr * config.lr_gamma ** sum(1 for s in config.lr_steps if epoch > s)
    return config.lr


def check_consistent(config: ReplayConfig, schedule: Schedule | None, table: OpTable) -> None:
    needs_schedule = config.mode in ("dynamic", "fixed_ptp", "fixed_po")
    if needs_schedule:
        if schedule is None:
            raise ValueError(f"mode {config.mode} needs a schedule")
        if len(schedule) != config.epochs:
            raise ValueError(
                f"schedule has {len(schedule)} epochs but replay.epochs is {config.epochs}"
            )
    if schedule is not None and tuple(schedule.ops) != tuple(table.ops):
        raise ValueError("schedule ops do not match the op table")
    if config.fixed_po is not None and len(config.fixed_po) != len(table):
        raise ValueError(f"replay.fixed_po has {len(config.fixed_po)} entries, table has {len(table)}")


def run_replay(
    config: ReplayConfig,
    schedule: Schedule | None,
    table: OpTable,
    train: Dataset,
    test: Dataset,
    n_ops: int | None = None,
) -> list[EpochMetrics]:
    """Train from scratch for ``config.epochs`` epochs, one snapshot per epoch."""
    check_consistent(config, schedule, table)
    if n_ops is None:
        if schedule is None:
            raise ValueError("n_ops is required without a schedule")
        n_ops = schedule.n_ops
    model = nnet.init_model(train.input_size, config.hidden, train.n_classes, config.seed)
    bs = min(config.batch_size, len(train))
    metrics = []
    for epoch in range(1, config.epochs + 1):
        p_tp, p_o = epoch_policy(config, schedule, epoch)
        lr = learning_rate(config, epoch)
        order = substream(config.seed, "replay-order", epoch).permutation(len(train))
        losses = []
        augmented = 0
        for b, start in enumerate(range(0, len(train), bs)):
            batch = train.batch(order[start : start + bs])
            if config.mode != "none":
                rng = substream(config.seed, "replay-aug", epoch, b)
                batch, n_aug = sample_and_apply(batch, p_tp, p_o, n_ops, table, rng)
                augmented += n_aug
            value, g = nnet.grad(model, batch)
            losses.append(value)
            model = model.with_params(nnet.apply_step(model.params, g, lr))
        metrics.append(
            EpochMetrics(
                epoch,
                math.fsum(losses) / len(losses),
                nnet.error_rate(model, test.images, test.labels),
                augmented / len(train),
            )
        )
    return metrics


def write_metrics_csv(metrics: Sequence[EpochMetrics], path) -> None:
    """``epoch, train_loss, test_error, realized_aug_rate``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "test_error", "realized_aug_rate"])
        for m in metrics:
            w.writerow([m.epoch, repr(m.train_loss), repr(m.test_error), repr(m.realized_aug_rate)])
