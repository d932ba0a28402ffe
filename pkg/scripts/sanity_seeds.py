"""Run the rotated-validation sanity search over several seeds.

    python scripts/sanity_seeds.py --seeds 10
    python scripts/sanity_seeds.py --seeds 10 --alpha-lr 0.005 0.001   # slower alpha steps
    python scripts/sanity_seeds.py --control                           # unrotated validation
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from augsearch.augment import AugOpKind
from augsearch.config import build_splits, sanity_config
from augsearch.search import run_search


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--first-seed", type=int, default=0)
    ap.add_argument("--alpha-lr", type=float, nargs=2, metavar=("LR_O", "LR_TP"), default=None)
    ap.add_argument("--eta", type=float, default=None)
    ap.add_argument("--control", action="store_true", help="do not rotate the validation set")
    ap.add_argument("--threshold", type=float, default=0.5)
    args = ap.parse_args()

    overrides = {}
    if args.alpha_lr:
        overrides.update(alpha_lr_o=args.alpha_lr[0], alpha_lr_tp=args.alpha_lr[1])
    if args.eta is not None:
        overrides["eta"] = args.eta

    passed = 0
    print(f"{'seed':>4}  {'argmax':>16}  {'p_o[R90]':>8}  {'p_tp':>6}  {'sec':>5}")
    for seed in range(args.first_seed, args.first_seed + args.seeds):
        cfg = sanity_config(seed, **overrides)
        cfg.data.rotate_val = not args.control
        table = cfg.table()
        r90 = table.index_of(AugOpKind.ROTATE90)
        t0 = time.perf_counter()
        splits = build_splits(cfg.data)
        last = run_search(cfg.search, table, splits.train, splits.val).schedule.snapshots[-1]
        p_o = np.array(last.p_o)
        ok = int(p_o.argmax()) == r90 and p_o[r90] > args.threshold
        passed += ok
        print(f"{seed:>4}  {table.names[int(p_o.argmax())]:>16}  {p_o[r90]:8.4f}  {last.p_tp:6.3f}  "
              f"{time.perf_counter() - t0:5.1f}")
    print(f"Rotate90 dominant with p > {args.threshold}: {passed}/{args.seeds}")


if __name__ == "__main__":
    main()
