from __future__ import annotations

import dataclasses
import math

import numpy as np
import pytest

from augsearch import schedule as sched
from augsearch.augment import build_op_table
from augsearch.config import build_splits, sanity_config
from augsearch.data import make_synthetic
from augsearch.nnet import Batch
from augsearch.replay import (
    ReplayConfig,
    learning_rate,
    run_replay,
    sample_and_apply,
    write_metrics_csv,
)
from augsearch.search import run_search

TABLE = build_op_table([{"kind": "Identity"}, {"kind": "Rotate90"}, {"kind": "FlipLR"}])


@pytest.fixture(scope="module")
def data():
    base = make_synthetic(300, size=8, classes=4, seed=1)
    return base.subset(np.arange(200)), base.subset(np.arange(200, 300))


def test_p_tp_zero_leaves_batch_unchanged():
    batch = Batch(np.random.default_rng(0).random((16, 1, 5, 5)), np.zeros(16, dtype=int))
    out, n = sample_and_apply(batch, 0.0, [0.0, 1.0, 0.0], 2, TABLE, np.random.default_rng(1))
    assert n == 0
    np.testing.assert_array_equal(out.images, batch.images)


def test_identity_one_hot_leaves_batch_unchanged():
    batch = Batch(np.random.default_rng(0).random((16, 1, 5, 5)), np.zeros(16, dtype=int))
    out, n = sample_and_apply(batch, 1.0, [1.0, 0.0, 0.0], 2, TABLE, np.random.default_rng(1))
    assert n == 16
    np.testing.assert_array_equal(out.images, batch.images)


def test_realized_rate_monte_carlo():
    n, p = 100_000, 0.35
    batch = Batch(np.zeros((n, 1, 2, 2)), np.zeros(n, dtype=int))
    _, count = sample_and_apply(batch, p, [1.0, 0.0, 0.0], 1, TABLE, np.random.default_rng(5))
    assert abs(count - n * p) < 3 * math.sqrt(n * p * (1 - p))


def test_learning_rate_schedules():
    rc = ReplayConfig(epochs=4, lr=0.2, lr_schedule="cosine")
    assert learning_rate(rc, 1) == 0.2
    assert learning_rate(rc, 3) == pytest.approx(0.1)
    rc = ReplayConfig(epochs=6, lr=1.0, lr_schedule="step", lr_steps=(2, 4), lr_gamma=0.5)
    assert [learning_rate(rc, e) for e in range(1, 7)] == [1.0, 1.0, 0.5, 0.5, 0.25, 0.25]


def test_identity_schedule_matches_baseline(data):
    train, test = data
    s = sched.constant(TABLE.ops, 1, 0.8, [1.0, 0.0, 0.0], 3)
    rc = ReplayConfig(epochs=3, hidden=(8,), seed=2)
    dyn = run_replay(rc, s, TABLE, train, test)
    base = run_replay(dataclasses.replace(rc, mode="none"), s, TABLE, train, test)
    assert [(m.train_loss, m.test_error) for m in dyn] == [(m.train_loss, m.test_error) for m in base]
    assert all(m.realized_aug_rate > 0.5 for m in dyn)
    assert all(m.realized_aug_rate == 0.0 for m in base)


def test_fixed_both_matches_dynamic_on_constant(data):
    train, test = data
    p_o = (0.2, 0.5, 0.3)
    s = sched.constant(TABLE.ops, 2, 0.6, p_o, 3)
    rc = ReplayConfig(epochs=3, hidden=(8,), seed=4)
    dyn = run_replay(rc, s, TABLE, train, test)
    both = run_replay(dataclasses.replace(rc, mode="fixed_both", fixed_ptp=0.6, fixed_po=p_o), s, TABLE, train, test)
    tp = run_replay(dataclasses.replace(rc, mode="fixed_ptp", fixed_ptp=0.6), s, TABLE, train, test)
    po = run_replay(dataclasses.replace(rc, mode="fixed_po", fixed_po=p_o), s, TABLE, train, test)
    assert dyn == both == tp == po


def test_fixed_modes_differ_from_dynamic(data):
    train, test = data
    s = sched.from_trajectory(TABLE.ops, 1, [0.1, 0.9], [[0.8, 0.1, 0.1], [0.1, 0.8, 0.1]])
    rc = ReplayConfig(epochs=2, hidden=(8,))
    dyn = run_replay(rc, s, TABLE, train, test)
    tp = run_replay(dataclasses.replace(rc, mode="fixed_ptp", fixed_ptp=0.1), s, TABLE, train, test)
    assert dyn[0] == tp[0] and dyn[1] != tp[1]


def test_length_mismatch_is_an_error(data):
    train, test = data
    s = sched.constant(TABLE.ops, 1, 0.5, [0.4, 0.3, 0.3], 3)
    with pytest.raises(ValueError, match="3 epochs"):
        run_replay(ReplayConfig(epochs=4), s, TABLE, train, test)
    other = build_op_table([{"kind": "Identity"}, {"kind": "FlipUD"}, {"kind": "FlipLR"}])
    with pytest.raises(ValueError, match="ops"):
        run_replay(ReplayConfig(epochs=3), s, other, train, test)


@pytest.mark.parametrize(
    "kw",
    [dict(mode="fixed_ptp"), dict(mode="fixed_ptp", fixed_ptp=1.5), dict(mode="fixed_po"),
     dict(mode="fixed_po", fixed_po=(0.5, 0.6)), dict(mode="weird"), dict(lr=0.0), dict(lr_schedule="exp")],
)
def test_config_validation(kw):
    with pytest.raises(ValueError):
        ReplayConfig(**kw)


def test_metrics_csv(tmp_path, data):
    train, test = data
    s = sched.constant(TABLE.ops, 1, 0.5, [0.4, 0.3, 0.3], 2)
    m = run_replay(ReplayConfig(epochs=2, hidden=(4,)), s, TABLE, train, test)
    write_metrics_csv(m, tmp_path / "m.csv")
    lines = (tmp_path / "m.csv").read_text().splitlines()
    assert lines[0] == "epoch,train_loss,test_error,realized_aug_rate"
    assert len(lines) == 3


@pytest.mark.slow
def test_searched_schedule_beats_baseline_on_rotated_test():
    wins = []
    for seed in range(3):
        cfg = sanity_config(seed)
        splits = build_splits(cfg.data)
        found = run_search(cfg.search, cfg.table(), splits.train, splits.val).schedule
        s = sched.transform(found, 40, 2)
        rc = ReplayConfig(epochs=40, lr_schedule="cosine", seed=seed)
        dyn = run_replay(rc, s, cfg.table(), splits.train, splits.test)
        base = run_replay(dataclasses.replace(rc, mode="none"), s, cfg.table(), splits.train, splits.test)
        wins.append(base[-1].test_error - dyn[-1].test_error)
    assert np.median(wins) > 0.2
