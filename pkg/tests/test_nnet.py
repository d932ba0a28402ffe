from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from augsearch import nnet
from augsearch.gradcheck import model_fd_error, random_case
from augsearch.nnet import Batch, ShapeError


def scalar_loss(model, batch):
    """Per-sample Python loops, no numpy matmul: an independent forward pass."""
    layers = [(w.tolist(), b.tolist()) for w, b in model.layers()]
    total = 0.0
    for img, label in zip(batch.images, batch.labels):
        h = img.reshape(-1).tolist()
        for li, (w, b) in enumerate(layers):
            out = [b[j] + sum(h[i] * w[i][j] for i in range(len(h))) for j in range(len(b))]
            h = out if li == len(layers) - 1 else [max(v, 0.0) for v in out]
        m = max(h)
        lse = m + math.log(sum(math.exp(v - m) for v in h))
        total += lse - h[int(label)]
    return total / len(batch)


def test_uniform_logits_give_log_k():
    for k in (2, 10):
        model = nnet.init_model(4, (), k, 0)
        model = model.with_params(np.zeros_like(model.params))
        batch = Batch(np.random.default_rng(0).random((3, 1, 2, 2)), np.arange(3) % k)
        assert nnet.loss(model, batch) == pytest.approx(math.log(k), abs=1e-12)


def test_golden_loss_seed42():
    model = nnet.init_model(2 * 3 * 3, (5, 4), 3, 42)
    r = np.random.default_rng(42)
    batch = Batch(r.random((6, 2, 3, 3)), r.integers(0, 3, size=6))
    assert nnet.loss(model, batch) == pytest.approx(scalar_loss(model, batch), rel=1e-12)


def test_fd_100_cases():
    r = np.random.default_rng(7)
    worst = max(model_fd_error(*random_case(r)) for _ in range(100))
    assert worst < 1e-5


def test_duplicated_batch_same_gradient():
    model, batch = random_case(np.random.default_rng(1))
    doubled = Batch(np.concatenate([batch.images] * 2), np.concatenate([batch.labels] * 2))
    np.testing.assert_allclose(nnet.grad(model, doubled)[1], nnet.grad(model, batch)[1], atol=1e-14)


def test_sgd_decreases_loss_on_separable_toy():
    r = np.random.default_rng(0)
    x = r.random((64, 1, 2, 2))
    y = (x[:, 0, 0, 0] > x[:, 0, 1, 1]).astype(int)
    batch = Batch(x, y)
    model = nnet.init_model(4, (8,), 2, 0)
    losses = []
    for _ in range(51):
        value, g = nnet.grad(model, batch)
        losses.append(value)
        model = model.with_params(nnet.apply_step(model.params, g, 0.1))
    drops = sum(b < a for a, b in zip(losses, losses[1:]))
    assert drops >= 45
    assert losses[-1] < losses[0]


def test_gradient_vanishes_on_confident_fit():
    # a linear model with huge margins on a separable set is near-stationary
    model = nnet.init_model(2, (), 2, 0)
    w = np.array([[50.0, -50.0], [-50.0, 50.0]])
    model = model.with_params(np.concatenate([w.ravel(), [0.0, 0.0]]))
    batch = Batch(np.array([[[[1.0, 0.0]]], [[[0.0, 1.0]]]]), np.array([0, 1]))
    assert np.abs(nnet.grad(model, batch)[1]).max() < 1e-30


def test_apply_step_and_dot():
    p = np.array([1.0, 2.0])
    out = nnet.apply_step(p, np.array([0.5, -1.0]), 0.1)
    np.testing.assert_allclose(out, [0.95, 2.1])
    assert p.tolist() == [1.0, 2.0]
    assert nnet.dot(np.array([1.0, 2.0, 3.0]), np.array([4.0, 5.0, 6.0])) == 32.0
    assert nnet.dot(np.array([1e16, 1.0, -1e16]), np.ones(3)) == 1.0
    with pytest.raises(ShapeError):
        nnet.apply_step(p, np.ones(3), 0.1)
    with pytest.raises(ValueError):
        nnet.apply_step(p, p, 0.0)
    with pytest.raises(ShapeError):
        nnet.dot(p, np.ones(3))


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=30), st.randoms())
@settings(max_examples=50, deadline=None)
def test_dot_order_independent(xs, rnd):
    a = np.array(xs)
    b = np.linspace(-1, 1, len(xs))
    perm = list(range(len(xs)))
    rnd.shuffle(perm)
    assert nnet.dot(a, b) == nnet.dot(a[perm], b[perm])


def test_init_is_deterministic():
    a = nnet.init_model(10, (4,), 3, 5).params
    b = nnet.init_model(10, (4,), 3, 5).params
    c = nnet.init_model(10, (4,), 3, 6).params
    assert np.array_equal(a, b) and not np.array_equal(a, c)


def test_shape_errors():
    model = nnet.init_model(4, (3,), 2, 0)
    with pytest.raises(ShapeError):
        nnet.loss(model, Batch(np.zeros((2, 1, 3, 3)), np.zeros(2, dtype=int)))
    with pytest.raises(ShapeError):
        Batch(np.zeros((2, 4)), np.zeros(2, dtype=int))
    with pytest.raises(ShapeError):
        Batch(np.zeros((2, 1, 2, 2)), np.zeros(3, dtype=int))
    with pytest.raises(ShapeError):
        nnet.loss(model, Batch(np.zeros((1, 1, 2, 2)), np.array([2])))
