"""Search once, then replay the schedule under every ablation mode.

Reports final test error on the (rotated) test split for the dynamic schedule,
fixed p_tp, fixed p_o, both fixed at the last snapshot, and no augmentation.

    python scripts/replay_ablation.py --seeds 3
"""

from __future__ import annotations

import argparse
import dataclasses

import numpy as np

from augsearch import schedule as sched
from augsearch.config import build_splits, sanity_config
from augsearch.replay import ReplayConfig, run_replay
from augsearch.search import run_search


def modes(found: sched.Schedule, rc: ReplayConfig) -> dict[str, ReplayConfig]:
    last = found.snapshots[-1]
    mean_ptp = float(np.mean(found.p_tp))
    return {
        "dynamic": rc,
        "fixed_ptp": dataclasses.replace(rc, mode="fixed_ptp", fixed_ptp=mean_ptp),
        "fixed_po": dataclasses.replace(rc, mode="fixed_po", fixed_po=last.p_o),
        "fixed_both": dataclasses.replace(rc, mode="fixed_both", fixed_ptp=last.p_tp, fixed_po=last.p_o),
        "none": dataclasses.replace(rc, mode="none"),
    }


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--seeds", type=int, default=3)
    ap.add_argument("--epochs", type=int, default=40, help="replay epochs (search runs 20)")
    ap.add_argument("--smooth", type=int, default=2)
    ap.add_argument("--control", action="store_true", help="unrotated validation and test sets")
    args = ap.parse_args()

    results: dict[str, list[float]] = {}
    for seed in range(args.seeds):
        cfg = sanity_config(seed)
        cfg.data.rotate_val = not args.control
        splits = build_splits(cfg.data)
        table = cfg.table()
        found = run_search(cfg.search, table, splits.train, splits.val).schedule
        final = sched.transform(found, args.epochs, args.smooth)
        rc = ReplayConfig(epochs=args.epochs, lr_schedule="cosine", seed=seed)
        for name, mode_cfg in modes(final, rc).items():
            err = run_replay(mode_cfg, final, table, splits.train, splits.test)[-1].test_error
            results.setdefault(name, []).append(err)
        print(f"seed {seed}: " + "  ".join(f"{k}={v[-1]:.3f}" for k, v in results.items()), flush=True)

    print(f"\n{'mode':>10}  {'median test error':>17}")
    for name, errs in results.items():
        print(f"{name:>10}  {np.median(errs):17.3f}")


if __name__ == "__main__":
    main()
