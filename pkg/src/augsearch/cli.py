"""Command-line entry point.

Exit codes: 0 success, 1 check failure, 2 usage or configuration error.
Errors are printed to stderr as a single ``<field>: <message>`` line.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__, config as cfgmod, nnet
from . import schedule as sched
from .augment import AugOpKind, build_op_table
from .gradcheck import MAX_K, MAX_N_OPS, run_checks
from .replay import run_replay, write_metrics_csv
from .search import run_search, write_diagnostics_csv

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

GRADCHECK_TABLE = [{"kind": "Identity"}, {"kind": "Rotate90"}, {"kind": "FlipLR"}]


class UsageError(Exception):
    pass


def _load_config(path) -> tuple[cfgmod.RunConfig, str]:
    try:
        return cfgmod.load(path)
    except FileNotFoundError:
        raise UsageError("config: not found") from None


def _write_manifest(out: Path, command: str, cfg: cfgmod.RunConfig, digest: str) -> None:
    manifest = {
        "command": command,
        "seed": cfg.search.seed,
        "config_sha256": digest,
        "versions": {
            "augsearch": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
        },
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")


def _search(cfg: cfgmod.RunConfig, threads: int | None):
    if threads is not None:
        cfg.search = dataclasses.replace(cfg.search, threads=threads)
    splits = cfgmod.build_splits(cfg.data)
    return run_search(cfg.search, cfg.table(), splits.train, splits.val)


def _write_search_outputs(out: Path, cfg: cfgmod.RunConfig, result) -> None:
    out.mkdir(parents=True, exist_ok=True)
    sched.save(result.schedule, out / "schedule.json")
    sched.write_trajectory_csv(result.schedule, out / "trajectory.csv")
    write_diagnostics_csv(result.steps, result.schedule.k, out / "diagnostics.csv")
    t = cfg.schedule
    if t.upsample is not None or t.smooth is not None:
        final = sched.transform(result.schedule, t.upsample, t.smooth, t.smooth_first)
        sched.save(final, out / "schedule_final.json")


def cmd_search(args) -> int:
    cfg, digest = _load_config(args.config)
    out = Path(args.out) if args.out else cfg.resolved_output_dir()
    result = _search(cfg, args.threads)
    _write_search_outputs(out, cfg, result)
    _write_manifest(out, "search", cfg, digest)
    last = result.schedule.snapshots[-1]
    print(f"search: {len(result.schedule)} epochs, final p_tp={last.p_tp:.4f}, wrote {out}")
    return EXIT_OK


def cmd_schedule(args) -> int:
    s = sched.load(args.input)
    try:
        s = sched.transform(s, args.upsample, args.smooth, args.smooth_first)
    except ValueError as exc:
        raise UsageError(f"upsample: {exc}") from None
    sched.save(s, args.output)
    if args.csv:
        sched.write_trajectory_csv(s, args.csv)
    print(f"schedule: {len(s)} epochs -> {args.output}")
    return EXIT_OK


def _parse_po(text: str, s: sched.Schedule) -> tuple[float, ...]:
    if text == "last":
        return s.snapshots[-1].p_o
    try:
        return tuple(float(x) for x in text.split(","))
    except ValueError:
        raise UsageError(f"fixed-po: expected 'last' or comma-separated floats, got {text!r}") from None


def cmd_replay(args) -> int:
    cfg, digest = _load_config(args.config)
    s = sched.load(args.schedule)
    rc = cfg.replay
    modes = [args.fixed_ptp is not None, args.fixed_po is not None, args.fixed_both, args.baseline]
    if sum(modes) > 1:
        raise UsageError("replay: --fixed-ptp, --fixed-po, --fixed-both and --baseline are exclusive")
    changes: dict = {}
    if args.fixed_ptp is not None:
        changes = dict(mode="fixed_ptp", fixed_ptp=args.fixed_ptp)
    elif args.fixed_po is not None:
        changes = dict(mode="fixed_po", fixed_po=_parse_po(args.fixed_po, s))
    elif args.fixed_both:
        last = s.snapshots[-1]
        changes = dict(mode="fixed_both", fixed_ptp=last.p_tp, fixed_po=last.p_o)
    elif args.baseline:
        changes = dict(mode="none")
    if args.epochs is not None:
        changes["epochs"] = args.epochs
    try:
        rc = dataclasses.replace(rc, **changes)
    except ValueError as exc:
        raise UsageError(f"replay: {exc}") from None

    splits = cfgmod.build_splits(cfg.data)
    if splits.test is None:
        raise UsageError("data: replay needs data.test_n > 0")
    try:
        metrics = run_replay(rc, s, cfg.table(), splits.train, splits.test)
    except ValueError as exc:
        raise UsageError(f"replay: {exc}") from None
    out = Path(args.out) if args.out else cfg.resolved_output_dir() / f"metrics_{rc.mode}.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(metrics, out)
    print(f"replay[{rc.mode}]: final test_error={metrics[-1].test_error:.4f}, wrote {out}")
    return EXIT_OK


def cmd_sanity(args) -> int:
    cfg, digest = _load_config(args.config)
    table = cfg.table()
    try:
        r90 = table.index_of(AugOpKind.ROTATE90)
    except KeyError:
        raise UsageError("ops: Rotate90 must be in the op table for the sanity check") from None
    threshold = cfg.sanity.threshold if args.threshold is None else args.threshold
    result = _search(cfg, args.threads)
    out = Path(args.out) if args.out else cfg.resolved_output_dir()
    _write_search_outputs(out, cfg, result)
    _write_manifest(out, "sanity", cfg, digest)

    names = table.names
    print("epoch  p_tp    " + "  ".join(f"{n:>10}" for n in names))
    for snap in result.schedule.snapshots:
        print(f"{snap.epoch:5d}  {snap.p_tp:.4f}  " + "  ".join(f"{p:10.4f}" for p in snap.p_o))
    final = np.array(result.schedule.snapshots[-1].p_o)
    winner = int(final.argmax())
    ok = winner == r90 and final[r90] > threshold
    summary = f"argmax={names[winner]} p_o[Rotate90]={final[r90]:.4f} threshold={threshold}"
    if not cfg.data.rotate_val:
        print(f"CONTROL (validation not rotated): {summary}")
        return EXIT_OK
    print(("PASS" if ok else "FAIL") + f": {summary}")
    return EXIT_OK if ok else EXIT_FAIL


def _corrupted_grad(model, batch):
    value, g = nnet.grad(model, batch)
    g = g.copy()
    g[0] += 0.1
    return value, g


def cmd_gradcheck(args) -> int:
    if args.config:
        cfg, _ = _load_config(args.config)
        entries, n_ops, seed = cfg.ops, cfg.search.n_ops, cfg.search.seed
    else:
        entries, n_ops, seed = GRADCHECK_TABLE, 2, 0
    table = build_op_table(entries)
    if len(table) > MAX_K or n_ops > MAX_N_OPS:
        raise UsageError(
            f"gradcheck: K={len(table)}, N_o={n_ops} exceeds the enumeration bound "
            f"K<={MAX_K}, N_o<={MAX_N_OPS}"
        )
    grad_fn = _corrupted_grad if args.inject_fault else nnet.grad
    results = run_checks(table, n_ops, seed=seed, grad_fn=grad_fn)
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{status} {r.name}: max_rel_error={r.max_error:.3e} tol={r.tolerance:.0e}")
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"FAIL: {', '.join(failed)}")
        return EXIT_FAIL
    print("PASS")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="augsearch", description="Differentiable augmentation policy search.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("search", help="run the policy search and write a schedule")
    s.add_argument("config")
    s.add_argument("--threads", type=int, default=None)
    s.add_argument("--out", default=None, help="output directory (overrides config and env)")
    s.set_defaults(func=cmd_search)

    s = sub.add_parser("schedule", help="upsample and/or smooth a schedule file")
    s.add_argument("input")
    s.add_argument("output")
    s.add_argument("--upsample", type=int, default=None, metavar="T")
    s.add_argument("--smooth", type=int, default=None, metavar="F_S")
    s.add_argument("--smooth-first", action="store_true", help="smooth before upsampling")
    s.add_argument("--csv", default=None, help="also write the trajectory CSV here")
    s.set_defaults(func=cmd_schedule)

    s = sub.add_parser("replay", help="train with a schedule and write per-epoch metrics")
    s.add_argument("config")
    s.add_argument("schedule")
    s.add_argument("--fixed-ptp", type=float, default=None, metavar="V")
    s.add_argument("--fixed-po", default=None, metavar="last|P0,P1,...")
    s.add_argument("--fixed-both", action="store_true", help="hold the last snapshot for every epoch")
    s.add_argument("--baseline", action="store_true", help="train without augmentation")
    s.add_argument("--epochs", type=int, default=None)
    s.add_argument("--out", default=None, help="metrics CSV path")
    s.set_defaults(func=cmd_replay)

    s = sub.add_parser("sanity", help="rotated-validation check: Rotate90 must dominate")
    s.add_argument("config")
    s.add_argument("--threshold", type=float, default=None)
    s.add_argument("--threads", type=int, default=None)
    s.add_argument("--out", default=None)
    s.set_defaults(func=cmd_sanity)

    s = sub.add_parser("gradcheck", help="finite-difference checks of every gradient")
    s.add_argument("config", nargs="?", default=None)
    s.add_argument("--inject-fault", action="store_true", help=argparse.SUPPRESS)
    s.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    except cfgmod.ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    except sched.ScheduleFormatError as exc:
        print(f"schedule: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"file: not found {exc.filename or exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"error: {' '.join(str(exc).split())}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
