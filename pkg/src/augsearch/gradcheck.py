"""Finite-difference oracles for the model and policy gradients.

Each check compares an analytic gradient against central differences of a
scalar function that never calls the analytic path.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import nnet
from .augment import AugPolicy, OpTable, apply_policy
from .nnet import Batch, Model
from .policy import d_policy_prob, policy_prob
from .search import policy_gradients

# Denominator floor: exact zeros (dead units) on both sides compare as 0.
REL_FLOOR = 1e-8
# The one-step surrogate has exactly-zero components (an Identity policy leaves
# g_l == g_0), where central differences return only roundoff of order
# eps * |L| / h. With h = 1e-4 that is ~1e-12, far below this floor.
SURROGATE_H = 1e-4
SURROGATE_FLOOR = 1e-6

MAX_K = 4
MAX_N_OPS = 2


def rel_error(analytic, numeric, floor: float = REL_FLOOR) -> np.ndarray:
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def central_difference(f: Callable[[np.ndarray], float], x: np.ndarray, h: float) -> np.ndarray:
    x = np.array(x, dtype=np.float64)
    out = np.empty_like(x)
    for i in range(x.size):
        orig = x.flat[i]
        x.flat[i] = orig + h
        up = f(x)
        x.flat[i] = orig - h
        down = f(x)
        x.flat[i] = orig
        out.flat[i] = (up - down) / (2.0 * h)
    return out


def min_preactivation_margin(model: Model, batch: Batch) -> float:
    """Smallest |pre-activation| over hidden units; FD is unreliable near ReLU kinks."""
    h = batch.images.reshape(len(batch), -1)
    margin = np.inf
    for w, b in model.layers()[:-1]:
        pre = h @ w + b
        margin = min(margin, float(np.abs(pre).min()))
        h = np.maximum(pre, 0.0)
    return margin


def model_fd_error(
    model: Model, batch: Batch, h: float = 1e-5, grad_fn=nnet.grad
) -> float:
    """Max per-coordinate relative error of ``grad_fn`` against central differences."""
    _, g = grad_fn(model, batch)
    numeric = central_difference(lambda p: nnet.loss(model.with_params(p), batch), model.params, h)
    return float(rel_error(g, numeric).max())


def random_case(rng: np.random.Generator, margin: float = 1e-3):
    """Small random (model, batch) whose hidden pre-activations avoid the ReLU kink."""
    while True:
        c = int(rng.integers(1, 3))
        s = int(rng.integers(2, 5))
        n_classes = int(rng.integers(2, 5))
        hidden = tuple(int(x) for x in rng.integers(2, 7, size=int(rng.integers(0, 3))))
        model = nnet.init_model(c * s * s, hidden, n_classes, int(rng.integers(2**31)))
        model = model.with_params(model.params + rng.normal(0, 0.3, size=model.params.shape))
        b = int(rng.integers(1, 6))
        batch = Batch(rng.random((b, c, s, s)), rng.integers(0, n_classes, size=b))
        if min_preactivation_margin(model, batch) > margin:
            return model, batch


def policy_prob_fd_error(policy: AugPolicy, p_o: np.ndarray, k: int, h: float = 1e-7) -> float:
    def f(x):
        q = p_o.copy()
        q[k] = x[0]
        return policy_prob(policy, q)

    numeric = central_difference(f, np.array([p_o[k]]), h)[0]
    return float(rel_error(d_policy_prob(policy, p_o, k), numeric, floor=1e-8))


def enumerate_policies(k: int, n_ops: int) -> list[AugPolicy]:
    return list(itertools.product(range(k), repeat=n_ops))


@dataclass
class SurrogateProblem:
    """Everything the one-step validation loss depends on besides ``p``."""

    model: Model
    d0: Batch
    val: Batch
    policies: list[AugPolicy]
    augmented: list[Batch]
    eta: float


def build_surrogate(
    model: Model, d0: Batch, val: Batch, table: OpTable, n_ops: int, eta: float, seed: int = 0
) -> SurrogateProblem:
    policies = enumerate_policies(len(table), n_ops)
    rng = np.random.default_rng(seed)
    augmented = [apply_policy(d0, phi, table, rng) for phi in policies]
    return SurrogateProblem(model, d0, val, policies, augmented, eta)


def surrogate_val_loss(prob: SurrogateProblem, p_tp: float, p_o: np.ndarray) -> float:
    """``L_val(theta - eta * E_p[grad L_train])`` with the expectation taken in full.

    ``p_o`` is not renormalized, so each entry can be perturbed on its own.
    """
    weights = [p_tp * policy_prob(phi, p_o) for phi in prob.policies]
    g = (1.0 - sum(weights)) * nnet.grad(prob.model, prob.d0)[1]
    for w, batch in zip(weights, prob.augmented):
        g = g + w * nnet.grad(prob.model, batch)[1]
    theta = prob.model.params - prob.eta * g
    return nnet.loss(prob.model.with_params(theta), prob.val)


def surrogate_fd(prob: SurrogateProblem, p_tp: float, p_o: np.ndarray, h: float = SURROGATE_H):
    g_po = central_difference(lambda x: surrogate_val_loss(prob, p_tp, x), p_o, h)
    g_ptp = central_difference(lambda x: surrogate_val_loss(prob, x[0], p_o), np.array([p_tp]), h)[0]
    return g_ptp, g_po


def surrogate_analytic(prob: SurrogateProblem, p_tp: float, p_o: np.ndarray, grad_fn=nnet.grad):
    """Policy gradients with every policy enumerated and the Z_g division off."""
    g_0 = grad_fn(prob.model, prob.d0)[1]
    g_list = [grad_fn(prob.model, b)[1] for b in prob.augmented]
    probs = [policy_prob(phi, p_o) for phi in prob.policies]
    z = float(np.sum(probs))
    mix = (1.0 - p_tp) * g_0
    for p, g_l in zip(probs, g_list):
        mix = mix + (p_tp * p / z) * g_l
    theta = prob.model.params - prob.eta * mix
    g_val = grad_fn(prob.model.with_params(theta), prob.val)[1]
    pg, _, _ = policy_gradients(
        g_val, g_0, g_list, prob.policies, p_o, p_tp, prob.eta, z, normalize=False
    )
    return pg.g_ptp, pg.g_po


def surrogate_error(prob: SurrogateProblem, p_tp: float, p_o: np.ndarray, grad_fn=nnet.grad) -> float:
    a_tp, a_po = surrogate_analytic(prob, p_tp, p_o, grad_fn)
    n_tp, n_po = surrogate_fd(prob, p_tp, p_o)
    return float(
        max(rel_error(a_tp, n_tp, SURROGATE_FLOOR).max(), rel_error(a_po, n_po, SURROGATE_FLOOR).max())
    )


@dataclass
class CheckResult:
    name: str
    max_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(self.max_error < self.tolerance)


def run_checks(
    table: OpTable,
    n_ops: int,
    *,
    seed: int = 0,
    n_model_cases: int = 20,
    eta: float = 0.5,
    grad_fn=nnet.grad,
) -> list[CheckResult]:
    """Model backprop, policy-probability derivative and one-step surrogate checks."""
    if len(table) > MAX_K or n_ops > MAX_N_OPS:
        raise ValueError(
            f"K={len(table)}, N_o={n_ops} exceeds the enumeration bound K<={MAX_K}, N_o<={MAX_N_OPS}"
        )
    rng = np.random.default_rng(seed)
    model_err = max(
        model_fd_error(*random_case(rng), grad_fn=grad_fn) for _ in range(n_model_cases)
    )

    k = len(table)
    pp_err = 0.0
    for _ in range(200):
        phi = tuple(int(i) for i in rng.integers(0, k, size=n_ops))
        p_o = rng.dirichlet(np.ones(k))
        pp_err = max(pp_err, policy_prob_fd_error(phi, p_o, int(rng.integers(k))))

    model = nnet.init_model(2 * 4 * 4, (6,), 3, seed)
    model = model.with_params(model.params + rng.normal(0, 0.3, size=model.params.shape))
    d0 = Batch(rng.random((4, 2, 4, 4)), rng.integers(0, 3, size=4))
    val = Batch(rng.random((5, 2, 4, 4)), rng.integers(0, 3, size=5))
    prob = build_surrogate(model, d0, val, table, n_ops, eta, seed)
    p_o = rng.dirichlet(np.ones(k) * 3)
    sur_err = surrogate_error(prob, float(rng.uniform(0.2, 0.8)), p_o, grad_fn)

    return [
        CheckResult("model_backprop", model_err, 1e-5),
        CheckResult("d_policy_prob", pp_err, 1e-6),
        CheckResult("policy_gradient_surrogate", sur_err, 1e-4),
    ]
