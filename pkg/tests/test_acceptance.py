"""Acceptance gate: one test per criterion, each reporting a PASS/FAIL line."""

from __future__ import annotations

import dataclasses
import json
import math
import time
from pathlib import Path

import numpy as np
import pytest

from augsearch import nnet
from augsearch import schedule as sched
from augsearch.augment import AugOpKind, build_op_table
from augsearch.cli import main
from augsearch.config import build_splits, sanity_config
from augsearch.gradcheck import build_surrogate, enumerate_policies, model_fd_error, random_case, surrogate_error
from augsearch.nnet import Batch
from augsearch.policy import policy_prob
from augsearch.replay import ReplayConfig, run_replay
from augsearch.search import mixture_weights, run_search

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
SEEDS = range(5)


@pytest.mark.slow
def test_criterion_1_sanity_check(report):
    start = time.perf_counter()
    finals = []
    for seed in SEEDS:
        cfg = sanity_config(seed)
        s = cfg.search
        assert (s.n_ops, s.init_p_tp, s.epochs, s.threads) == (1, 0.75, 20, 1)
        assert cfg.data.rotate_val
        table = cfg.table()
        r90 = table.index_of(AugOpKind.ROTATE90)
        splits = build_splits(cfg.data)
        p_o = np.array(run_search(s, table, splits.train, splits.val).schedule.snapshots[-1].p_o)
        finals.append((int(p_o.argmax()) == r90, float(p_o[r90])))
    elapsed = time.perf_counter() - start
    wins = sum(1 for top, p in finals if top and p > 0.5)
    ok = wins >= 4 and elapsed < 300
    detail = f"{wins}/5 seeds with Rotate90 argmax and p>0.5 {[round(p, 3) for _, p in finals]}, {elapsed:.1f}s"
    report(1, "sanity check", ok, detail)
    assert ok, detail


def test_criterion_2_gradient_oracle(report):
    start = time.perf_counter()
    table = build_op_table([{"kind": "Identity"}, {"kind": "Rotate90"}, {"kind": "FlipLR"}])
    worst = 0.0
    for n_ops in (1, 2):
        for seed in range(20):
            r = np.random.default_rng(100 + seed)
            model = nnet.init_model(2 * 4 * 4, (6,), 3, seed)
            model = model.with_params(model.params + r.normal(0, 0.3, size=model.params.shape))
            d0 = Batch(r.random((4, 2, 4, 4)), r.integers(0, 3, size=4))
            val = Batch(r.random((5, 2, 4, 4)), r.integers(0, 3, size=5))
            prob = build_surrogate(model, d0, val, table, n_ops, eta=0.5, seed=seed)
            p_o = r.dirichlet(np.ones(3) * 3)
            worst = max(worst, surrogate_error(prob, float(r.uniform(0.2, 0.8)), p_o))
    elapsed = time.perf_counter() - start
    ok = worst < 1e-4 and elapsed < 60
    detail = f"K=3, N_o in (1, 2), 40 cases, max rel error {worst:.2e} (tol 1e-4), {elapsed:.2f}s"
    report(2, "policy gradient vs finite differences", ok, detail)
    assert ok, detail


def test_criterion_3_model_backprop(report):
    r = np.random.default_rng(2024)
    worst = max(model_fd_error(*random_case(r)) for _ in range(100))
    ok = worst < 1e-5
    detail = f"100 cases, max per-coordinate rel error {worst:.2e} (tol 1e-5)"
    report(3, "model backprop", ok, detail)
    assert ok, detail


def test_criterion_4_algebraic_identities(report):
    r = np.random.default_rng(4)
    mix_err = 0.0
    clean_exact = True
    for _ in range(1000):
        k = int(r.integers(2, 11))
        n_ops = int(r.integers(1, 3))
        p_o = r.dirichlet(np.ones(k))
        p_tp = float(r.uniform())
        pols = [tuple(r.integers(0, k, size=n_ops)) for _ in range(int(r.integers(1, 6)))]
        clean, aug = mixture_weights([policy_prob(p, p_o) for p in pols], p_tp)
        clean_exact &= clean == 1.0 - p_tp
        mix_err = max(mix_err, abs(clean + math.fsum(aug) - 1.0))
    enum_err = 0.0
    for k in range(2, 5):
        for n_ops in (1, 2):
            p_o = r.dirichlet(np.ones(k))
            p_tp = float(r.uniform())
            total = math.fsum(p_tp * policy_prob(phi, p_o) for phi in enumerate_policies(k, n_ops))
            enum_err = max(enum_err, abs(total - p_tp))
    ok = clean_exact and mix_err <= 1e-12 and enum_err <= 1e-12
    detail = f"mixture sum error {mix_err:.1e}, clean weight exact={clean_exact}, enumeration error {enum_err:.1e}"
    report(4, "algebraic identities", ok, detail)
    assert ok, detail


def test_criterion_5_schedule_transforms(report):
    ops = build_op_table([{"kind": "Identity"}, {"kind": "Rotate90"}]).ops
    s = sched.from_trajectory(ops, 1, [0.2, 0.4, 0.6], [[0.3, 0.7], [0.5, 0.5], [0.9, 0.1]])
    checks = {
        "upsample 3->6": sched.upsample_indices(3, 6) == [1, 1, 2, 2, 3, 3],
        "upsample schedule": sched.upsample(s, 6).p_tp == [0.2, 0.2, 0.4, 0.4, 0.6, 0.6],
        "mean F=2": np.allclose(sched.smooth_ptp(s, 2).p_tp, [0.2, 0.3, 0.5], rtol=0, atol=1e-15),
        "F=1 identity": sched.smooth_ptp(s, 1).snapshots == s.snapshots,
        "equal-length identity": sched.upsample(s, 3).snapshots == s.snapshots,
        "round trip": sched.from_dict(json.loads(sched.dumps(s))) == s,
    }
    t = sched.transform(s, 7, 3)
    checks["round trip transformed"] = sched.from_dict(json.loads(sched.dumps(t))) == t
    ok = all(checks.values())
    detail = ", ".join(f"{k}={'ok' if v else 'FAIL'}" for k, v in checks.items())
    report(5, "schedule transforms", ok, detail)
    assert ok, detail


def _tree(d: Path) -> dict:
    return {p.name: p.read_bytes() for p in sorted(d.iterdir())}


def test_criterion_6_determinism(tmp_path, report):
    cfg = json.loads((CONFIGS / "sanity.json").read_text())
    cfg["search"]["epochs"] = 4
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    trees = {}
    for name, extra in [("serial1", []), ("serial2", []), ("threads1", ["--threads", "3"]), ("threads2", ["--threads", "3"])]:
        assert main(["search", str(path), "--out", str(tmp_path / name), *extra]) == 0
        trees[name] = _tree(tmp_path / name)
    serial = trees["serial1"] == trees["serial2"]
    threaded = trees["threads1"] == trees["threads2"]
    cross = trees["serial1"] == trees["threads1"]
    ok = serial and threaded
    detail = (f"serial reruns identical={serial}, --threads 3 reruns identical={threaded}, "
              f"serial==threaded={cross}, files={sorted(trees['serial1'])}")
    report(6, "determinism", ok, detail)
    assert ok, detail


def test_criterion_7_replay_ablation_modes(tmp_path, report):
    cfg = json.loads((CONFIGS / "sanity.json").read_text())
    cfg["replay"]["epochs"] = 5
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    table = build_op_table(cfg["ops"])
    p_o = [0.04, 0.6, 0.04, 0.04, 0.04, 0.04, 0.04, 0.04, 0.04, 0.08]
    const = tmp_path / "const.json"
    sched.save(sched.constant(table.ops, 1, 0.7, p_o, 5), const)
    varying = tmp_path / "vary.json"
    sched.save(sched.from_trajectory(table.ops, 1, [0.1, 0.3, 0.5, 0.7, 0.9], [p_o] * 5), varying)

    codes = {}
    for mode, extra in [("dynamic", []), ("fixed_ptp", ["--fixed-ptp", "0.5"]),
                        ("fixed_po", ["--fixed-po", "last"]), ("fixed_both", ["--fixed-both"])]:
        codes[mode] = main(["replay", str(path), str(varying), "--out", str(tmp_path / f"v_{mode}.csv"), *extra])
    runs = codes == {m: 0 for m in codes}
    assert main(["replay", str(path), str(const), "--out", str(tmp_path / "c_dyn.csv")]) == 0
    assert main(["replay", str(path), str(const), "--fixed-both", "--out", str(tmp_path / "c_both.csv")]) == 0
    match = (tmp_path / "c_dyn.csv").read_bytes() == (tmp_path / "c_both.csv").read_bytes()
    ok = runs and match
    detail = f"exit codes {codes}, fixed_both == dynamic on constant schedule (bytes)={match}"
    report(7, "dynamic vs fixed replay", ok, detail)
    assert ok, detail


def test_criterion_8_not_reproducible(report):
    report(8, "full-scale benchmarks", None,
           "NOT REPRODUCIBLE at desk scale: CIFAR-10/100, SVHN, ImageNet error rates, COCO mAP and "
           "GPU-hour figures; covered instead by criteria 1-7")
    pytest.skip("full-scale benchmark numbers are not reproducible at desk scale")
