"""One-step meta-gradient search over augmentation probabilities.

Per step:

1. gradient ``g_0`` of the training loss on a clean mini-batch ``D_0``;
2. ``L_hat`` policies drawn uniformly, each applied to ``D_0``, giving ``g_l``;
3. mixture gradient ``sum_l w_l g_l + (1 - p_tp) g_0`` with
   ``w_l = p_tp P(phi_l) / Z`` and ``Z = sum_l P(phi_l)``; the model takes this
   step for real;
4. ``g_val`` on a validation mini-batch at the updated weights;
5. probability-space gradients from ``d_l = g_val . (g_0 - g_l)``, normalized
   by ``Z * Z_g`` with ``Z_g = sum_l |d_l|``, chained to the logits and applied
   with Adam.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import nnet
from .augment import AugPolicy, OpTable, apply_policy
from .data import Dataset
from .nnet import Batch, Model
from .policy import (
    PolicyGrad,
    PolicyParams,
    chain_to_alpha,
    d_policy_prob,
    policy_prob,
    sample_uniform_policies,
)
from .rng import substream
from .schedule import Schedule, ScheduleMeta, Snapshot

Z_FLOOR = 1e-30


class DegenerateNormalizerError(ArithmeticError):
    pass


@dataclass
class SearchConfig:
    epochs: int = 20  # T_max
    steps_per_epoch: int | None = None  # max_iter; None = one pass over the train set
    n_policies: int = 3  # L_hat
    n_ops: int = 2  # N_o
    eta: float = 0.1
    eta_schedule: str = "constant"  # or "cosine"
    alpha_lr_o: float = 0.005
    alpha_lr_tp: float = 0.001
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    init_p_tp: float = 0.35
    train_batch: int = 32
    val_batch: int = 128
    hidden: tuple[int, ...] = (64, 32)
    seed: int = 0
    zg_epsilon: float = 1e-12
    threads: int = 1

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        self.validate()

    def validate(self) -> None:
        if self.epochs < 1:
            raise ValueError("search.epochs must be >= 1")
        if self.steps_per_epoch is not None and self.steps_per_epoch < 0:
            raise ValueError("search.steps_per_epoch must be >= 0")
        if self.n_policies < 1:
            raise ValueError("search.n_policies must be >= 1")
        if self.n_ops < 1:
            raise ValueError("search.n_ops must be >= 1")
        if not self.eta > 0:
            raise ValueError("search.eta must be > 0")
        if self.eta_schedule not in ("constant", "cosine"):
            raise ValueError(f"search.eta_schedule must be constant or cosine, got {self.eta_schedule!r}")
        if self.alpha_lr_o < 0 or self.alpha_lr_tp < 0:
            raise ValueError("search alpha learning rates must be >= 0")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            raise ValueError("search adam betas must lie in [0, 1)")
        if not 0 < self.init_p_tp < 1:
            raise ValueError("search.init_p_tp must lie in (0, 1)")
        if self.train_batch < 1 or self.val_batch < 1:
            raise ValueError("search batch sizes must be >= 1")
        if self.threads < 1:
            raise ValueError("search.threads must be >= 1")


@dataclass
class Adam:
    """Adam with bias correction on a float vector."""

    lr: float
    beta1: float
    beta2: float
    eps: float
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def for_shape(cls, shape, lr, beta1, beta2, eps) -> "Adam":
        return cls(lr, beta1, beta2, eps, np.zeros(shape), np.zeros(shape))

    def step(self, x: np.ndarray, g: np.ndarray) -> np.ndarray:
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * g
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * g * g
        m_hat = self.m / (1.0 - self.beta1**self.t)
        v_hat = self.v / (1.0 - self.beta2**self.t)
        return x - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass
class StepReport:
    step: int
    epoch: int
    z: float
    z_g: float
    dots: list[float]
    g_ptp: float
    g_po_norm: float
    train_loss: float
    val_loss: float
    p_tp: float
    p_o: np.ndarray
    policies: list[AugPolicy]
    updated: bool


def weighted_train_grad(
    g_0: np.ndarray, g_list: Sequence[np.ndarray], probs: Sequence[float], p_tp: float
) -> tuple[np.ndarray, float]:
    """Mix clean and augmented gradients; the clean weight is exactly ``1 - p_tp``."""
    if len(g_list) != len(probs) or not g_list:
        raise ValueError("need one probability per augmented gradient")
    z = math.fsum(probs)
    if not z >= Z_FLOOR:
        raise DegenerateNormalizerError(f"Z = {z!r} below floor {Z_FLOOR}")
    out = (1.0 - p_tp) * g_0
    for g_l, p in zip(g_list, probs):
        out = out + (p_tp * p / z) * g_l
    return out, z


def mixture_weights(probs: Sequence[float], p_tp: float) -> tuple[float, list[float]]:
    """(clean weight, augmented weights) used by :func:`weighted_train_grad`."""
    z = math.fsum(probs)
    if not z >= Z_FLOOR:
        raise DegenerateNormalizerError(f"Z = {z!r} below floor {Z_FLOOR}")
    return 1.0 - p_tp, [p_tp * p / z for p in probs]


def alignment_terms(g_val: np.ndarray, g_0: np.ndarray, g_list: Sequence[np.ndarray]) -> list[float]:
    """``g_val . (g_0 - g_l)`` for each augmented gradient."""
    return [nnet.dot(g_val, g_0 - g_l) for g_l in g_list]


def policy_gradients(
    g_val: np.ndarray,
    g_0: np.ndarray,
    g_list: Sequence[np.ndarray],
    policies: Sequence[AugPolicy],
    p_o: np.ndarray,
    p_tp: float,
    eta: float,
    z: float,
    *,
    zg_epsilon: float = 1e-12,
    normalize: bool = True,
) -> tuple[PolicyGrad, float, list[float]]:
    """Gradients of the one-step validation loss w.r.t. ``p_tp`` and ``p_o``.

    Returns ``(grad, Z_g, dots)``. With ``normalize=False`` the ``Z_g``
    division is skipped (``Z_g`` is still reported). When ``Z_g`` falls below
    ``zg_epsilon`` the zero gradient is returned.
    """
    if not z > 0:
        raise DegenerateNormalizerError(f"Z = {z!r} must be positive")
    k = len(p_o)
    dots = alignment_terms(g_val, g_0, g_list)
    z_g = math.fsum(abs(d) for d in dots)
    if normalize:
        if z_g < zg_epsilon:
            return PolicyGrad.zeros(k), z_g, dots
        scale = 1.0 / (z * z_g)
    else:
        scale = 1.0 / z
    g_po = np.zeros(k)
    g_ptp = 0.0
    for d, phi in zip(dots, policies):
        g_ptp += eta * d * policy_prob(phi, p_o)
        for j in sorted(set(phi)):
            g_po[j] += eta * d * p_tp * d_policy_prob(phi, p_o, j)
    return PolicyGrad(scale * g_ptp, scale * g_po), z_g, dots


class CyclicBatches:
    """Endless mini-batches; the index order is reshuffled at every pass."""

    def __init__(self, data: Dataset, batch_size: int, rng: np.random.Generator):
        self.data = data
        self.batch_size = min(batch_size, len(data))
        self.rng = rng
        self._order = rng.permutation(len(data))
        self._pos = 0

    def next(self) -> Batch:
        idx = []
        while len(idx) < self.batch_size:
            if self._pos == len(self._order):
                self._order = self.rng.permutation(len(self.data))
                self._pos = 0
            take = min(self.batch_size - len(idx), len(self._order) - self._pos)
            idx.extend(self._order[self._pos : self._pos + take])
            self._pos += take
        return self.data.batch(np.array(idx))


@dataclass
class SearchState:
    config: SearchConfig
    table: OpTable
    model: Model
    policy: PolicyParams
    adam_tp: Adam
    adam_o: Adam
    train_batches: CyclicBatches
    val_batches: CyclicBatches
    total_steps: int
    step: int = 0
    epoch: int = 1
    executor: ThreadPoolExecutor | None = field(default=None, repr=False)


def init_state(config: SearchConfig, table: OpTable, train: Dataset, val: Dataset) -> SearchState:
    if train.images.shape[1:] != val.images.shape[1:]:
        raise ValueError("train and val images differ in shape")
    if train.n_classes != val.n_classes:
        raise ValueError("train and val disagree on the class count")
    c = config
    model = nnet.init_model(train.input_size, c.hidden, train.n_classes, c.seed)
    k = len(table)
    steps = c.steps_per_epoch
    if steps is None:
        steps = math.ceil(len(train) / c.train_batch)
    return SearchState(
        config=c,
        table=table,
        model=model,
        policy=PolicyParams.initial(k, c.init_p_tp),
        adam_tp=Adam.for_shape((), c.alpha_lr_tp, c.adam_beta1, c.adam_beta2, c.adam_eps),
        adam_o=Adam.for_shape((k,), c.alpha_lr_o, c.adam_beta1, c.adam_beta2, c.adam_eps),
        train_batches=CyclicBatches(train, c.train_batch, substream(c.seed, "train-order")),
        val_batches=CyclicBatches(val, c.val_batch, substream(c.seed, "val-order")),
        total_steps=c.epochs * steps,
    )


def current_eta(state: SearchState) -> float:
    c = state.config
    if c.eta_schedule == "cosine" and state.total_steps > 0:
        return c.eta * 0.5 * (1.0 + math.cos(math.pi * state.step / state.total_steps))
    return c.eta


def _augmented_grad(state: SearchState, d0: Batch, l: int, phi: AugPolicy):
    rng = substream(state.config.seed, "search-aug", state.step, l)
    return nnet.grad(state.model, apply_policy(d0, phi, state.table, rng))[1]


def search_step(state: SearchState) -> StepReport:
    """Run one search step in place and report its diagnostics."""
    c = state.config
    k = len(state.table)
    eta = current_eta(state)
    p_tp, p_o = state.policy.p_tp, state.policy.p_o

    d0 = state.train_batches.next()
    v = state.val_batches.next()
    train_loss, g_0 = nnet.grad(state.model, d0)

    policies = sample_uniform_policies(
        c.n_policies, c.n_ops, k, substream(c.seed, "search-policies", state.step)
    )
    if state.executor is not None:
        g_list = list(
            state.executor.map(lambda lp: _augmented_grad(state, d0, *lp), enumerate(policies))
        )
    else:
        g_list = [_augmented_grad(state, d0, l, phi) for l, phi in enumerate(policies)]

    probs = [policy_prob(phi, p_o) for phi in policies]
    g_mix, z = weighted_train_grad(g_0, g_list, probs, p_tp)
    state.model = state.model.with_params(nnet.apply_step(state.model.params, g_mix, eta))

    val_loss, g_val = nnet.grad(state.model, v)
    pg, z_g, dots = policy_gradients(
        g_val, g_0, g_list, policies, p_o, p_tp, eta, z, zg_epsilon=c.zg_epsilon
    )
    updated = z_g >= c.zg_epsilon
    if updated:
        g_atp, g_ao = chain_to_alpha(state.policy, pg)
        new_tp = float(state.adam_tp.step(np.float64(state.policy.alpha_tp), np.float64(g_atp)))
        new_o = state.adam_o.step(state.policy.alpha_o, g_ao)
        state.policy = PolicyParams(new_tp, new_o)

    report = StepReport(
        step=state.step,
        epoch=state.epoch,
        z=z,
        z_g=z_g,
        dots=dots,
        g_ptp=pg.g_ptp,
        g_po_norm=float(np.linalg.norm(pg.g_po)),
        train_loss=train_loss,
        val_loss=val_loss,
        p_tp=state.policy.p_tp,
        p_o=state.policy.p_o,
        policies=policies,
        updated=updated,
    )
    state.step += 1
    return report


@dataclass
class SearchResult:
    schedule: Schedule
    steps: list[StepReport]
    state: SearchState


def run_search(config: SearchConfig, table: OpTable, train: Dataset, val: Dataset) -> SearchResult:
    """Search for ``config.epochs`` epochs, snapshotting ``(p_tp, p_o)`` after each."""
    state = init_state(config, table, train, val)
    steps_per_epoch = state.total_steps // config.epochs
    reports: list[StepReport] = []
    snaps: list[Snapshot] = []
    executor = ThreadPoolExecutor(config.threads) if config.threads > 1 else None
    state.executor = executor
    try:
        for epoch in range(1, config.epochs + 1):
            state.epoch = epoch
            for _ in range(steps_per_epoch):
                reports.append(search_step(state))
            snaps.append(
                Snapshot(epoch, state.policy.p_tp, tuple(float(p) for p in state.policy.p_o))
            )
    finally:
        if executor is not None:
            executor.shutdown()
        state.executor = None
    schedule = Schedule(table.ops, config.n_ops, tuple(snaps), ScheduleMeta(config.epochs))
    return SearchResult(schedule, reports, state)


def write_diagnostics_csv(reports: Sequence[StepReport], k: int, path) -> None:
    """``step, epoch, z, z_g, train_loss, val_loss, p_tp, p_o_0..p_o_{K-1}``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "epoch", "z", "z_g", "train_loss", "val_loss", "p_tp", *(f"p_o_{j}" for j in range(k))])
        for r in reports:
            w.writerow(
                [r.step, r.epoch, repr(r.z), repr(r.z_g), repr(r.train_loss), repr(r.val_loss), repr(r.p_tp)]
                + [repr(float(p)) for p in r.p_o]
            )
