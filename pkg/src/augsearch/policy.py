"""Two-level augmentation probabilities.

``p_tp = sigmoid(alpha_tp)`` is the probability of augmenting at all and
``p_o = softmax(alpha_o)`` is the categorical distribution over the K
candidate ops. A policy of N_o ops drawn with replacement has probability
``prod_i p_o[phi_i]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .augment import AugPolicy


def sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def logit(p: float) -> float:
    if not 0.0 < p < 1.0:
        raise ValueError(f"logit needs p in (0, 1), got {p}")
    return math.log(p) - math.log1p(-p)


def softmax(x: np.ndarray) -> np.ndarray:
    z = np.asarray(x, dtype=np.float64)
    e = np.exp(z - z.max())
    return e / e.sum()


@dataclass
class PolicyParams:
    alpha_tp: float
    alpha_o: np.ndarray

    @classmethod
    def initial(cls, k: int, p_tp: float) -> "PolicyParams":
        """Uniform ``p_o`` and the requested ``p_tp``."""
        return cls(logit(p_tp), np.zeros(k))

    @property
    def p_tp(self) -> float:
        return sigmoid(self.alpha_tp)

    @property
    def p_o(self) -> np.ndarray:
        return softmax(self.alpha_o)


@dataclass
class PolicyGrad:
    """Gradient of the validation loss w.r.t. ``p_tp`` and each ``p_o[k]``."""

    g_ptp: float
    g_po: np.ndarray

    @classmethod
    def zeros(cls, k: int) -> "PolicyGrad":
        return cls(0.0, np.zeros(k))


def derive_probs(params: PolicyParams) -> tuple[float, np.ndarray]:
    return params.p_tp, params.p_o


def policy_prob(policy: AugPolicy, p_o: np.ndarray) -> float:
    out = 1.0
    for i in policy:
        out *= float(p_o[i])
    return out


def d_policy_prob(policy: AugPolicy, p_o: np.ndarray, k: int) -> float:
    """Partial derivative of :func:`policy_prob` w.r.t. ``p_o[k]``.

    Product rule over every position holding ``k``; no division, so it stays
    exact when some entries of ``p_o`` are zero.
    """
    total = 0.0
    for i, op in enumerate(policy):
        if op != k:
            continue
        term = 1.0
        for j, other in enumerate(policy):
            if j != i:
                term *= float(p_o[other])
        total += term
    return total


def sample_uniform_policies(
    n_policies: int, n_ops: int, k: int, rng: np.random.Generator
) -> list[AugPolicy]:
    """Draw ``n_policies`` policies with every op index i.i.d. uniform on [0, k)."""
    if n_policies < 1 or n_ops < 1:
        raise ValueError("need at least one policy of at least one op")
    if k < 2:
        raise ValueError(f"need at least 2 candidate ops, got {k}")
    draws = rng.integers(0, k, size=(n_policies, n_ops))
    return [tuple(int(i) for i in row) for row in draws]


def chain_to_alpha(params: PolicyParams, grad: PolicyGrad) -> tuple[float, np.ndarray]:
    """Push a probability-space gradient through sigmoid and softmax."""
    p_tp = params.p_tp
    p_o = params.p_o
    g_alpha_tp = grad.g_ptp * p_tp * (1.0 - p_tp)
    # softmax Jacobian: J[k, j] = p_k (delta_kj - p_j), symmetric
    g_alpha_o = p_o * (grad.g_po - float(np.dot(grad.g_po, p_o)))
    return g_alpha_tp, g_alpha_o
