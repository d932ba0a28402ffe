"""Per-epoch policy snapshots: upsampling, smoothing, (de)serialization.

Files are JSON. Python writes floats with ``repr``, which is the shortest
decimal that round-trips, so save/load is bit-exact.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .augment import AugOp, AugOpKind

FORMAT_VERSION = 1
SUM_TOL = 1e-9


class ScheduleFormatError(ValueError):
    """Malformed schedule; ``field`` names the offending entry."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass(frozen=True)
class Snapshot:
    epoch: int
    p_tp: float
    p_o: tuple[float, ...]


@dataclass(frozen=True)
class ScheduleMeta:
    source_epochs: int
    target_epochs: int | None = None
    smoothing: int | None = None
    transforms: tuple[str, ...] = ()


@dataclass(frozen=True)
class Schedule:
    ops: tuple[AugOp, ...]
    n_ops: int
    snapshots: tuple[Snapshot, ...]
    meta: ScheduleMeta = field(default=None)

    def __post_init__(self):
        if self.meta is None:
            object.__setattr__(self, "meta", ScheduleMeta(len(self.snapshots)))
        _validate(self)

    @property
    def k(self) -> int:
        return len(self.ops)

    def __len__(self) -> int:
        return len(self.snapshots)

    @property
    def p_tp(self) -> list[float]:
        return [s.p_tp for s in self.snapshots]

    @property
    def p_o(self) -> np.ndarray:
        return np.array([s.p_o for s in self.snapshots])


def _validate(s: Schedule) -> None:
    if len(s.ops) < 2:
        raise ScheduleFormatError("ops", f"need at least 2 ops, got {len(s.ops)}")
    if s.n_ops < 1:
        raise ScheduleFormatError("N_o", f"must be >= 1, got {s.n_ops}")
    if not s.snapshots:
        raise ScheduleFormatError("epochs", "no snapshots")
    for i, snap in enumerate(s.snapshots):
        where = f"epochs[{i}]"
        if snap.epoch != i + 1:
            raise ScheduleFormatError(f"{where}.epoch", f"expected {i + 1}, got {snap.epoch}")
        # closed interval: fixed ablation schedules use p_tp = 0 or 1
        if not (math.isfinite(snap.p_tp) and 0.0 <= snap.p_tp <= 1.0):
            raise ScheduleFormatError(f"{where}.p_tp", f"{snap.p_tp} not in [0, 1]")
        if len(snap.p_o) != len(s.ops):
            raise ScheduleFormatError(f"{where}.p_o", f"length {len(snap.p_o)} != K={len(s.ops)}")
        if any(not math.isfinite(p) or p < 0.0 for p in snap.p_o):
            raise ScheduleFormatError(f"{where}.p_o", "entries must be finite and non-negative")
        if abs(math.fsum(snap.p_o) - 1.0) > SUM_TOL:
            raise ScheduleFormatError(f"{where}.p_o", f"sums to {math.fsum(snap.p_o)!r}, not 1")


def from_trajectory(
    ops: Sequence[AugOp], n_ops: int, p_tp: Sequence[float], p_o: Sequence[Sequence[float]]
) -> Schedule:
    snaps = tuple(
        Snapshot(i + 1, float(t), tuple(float(x) for x in o))
        for i, (t, o) in enumerate(zip(p_tp, p_o))
    )
    return Schedule(tuple(ops), n_ops, snaps, ScheduleMeta(len(snaps)))


def constant(ops: Sequence[AugOp], n_ops: int, p_tp: float, p_o: Sequence[float], epochs: int) -> Schedule:
    return from_trajectory(ops, n_ops, [p_tp] * epochs, [p_o] * epochs)


def upsample_indices(source: int, target: int) -> list[int]:
    """1-based source epoch held at each of ``target`` epochs (nearest-neighbour hold)."""
    if target < source:
        raise ValueError(f"cannot upsample {source} epochs to {target}")
    return [(t * source) // target + 1 for t in range(target)]


def upsample(s: Schedule, epochs: int) -> Schedule:
    idx = upsample_indices(len(s), epochs)
    snaps = tuple(replace(s.snapshots[i - 1], epoch=t + 1) for t, i in enumerate(idx))
    meta = replace(s.meta, target_epochs=epochs, transforms=s.meta.transforms + (f"upsample:{epochs}",))
    return Schedule(s.ops, s.n_ops, snaps, meta)


def causal_mean(values: Sequence[float], window: int) -> list[float]:
    """Trailing mean over ``[max(0, t - window + 1), t]``."""
    if window < 1:
        raise ValueError(f"window must be >= 1, got {window}")
    out = []
    for t in range(len(values)):
        chunk = values[max(0, t - window + 1) : t + 1]
        m = math.fsum(chunk) / len(chunk)
        # the exact mean lies in [min, max]; clamp away the last-bit rounding
        out.append(min(max(m, min(chunk)), max(chunk)))
    return out


def smooth_ptp(s: Schedule, window: int) -> Schedule:
    smoothed = causal_mean(s.p_tp, window)
    snaps = tuple(replace(snap, p_tp=v) for snap, v in zip(s.snapshots, smoothed))
    meta = replace(s.meta, smoothing=window, transforms=s.meta.transforms + (f"smooth:{window}",))
    return Schedule(s.ops, s.n_ops, snaps, meta)


def transform(
    s: Schedule, epochs: int | None = None, window: int | None = None, smooth_first: bool = False
) -> Schedule:
    """Upsample then smooth (or the reverse with ``smooth_first``); either step optional."""
    steps = []
    if epochs is not None:
        steps.append(lambda x: upsample(x, epochs))
    if window is not None:
        steps.append(lambda x: smooth_ptp(x, window))
    if smooth_first:
        steps.reverse()
    for step in steps:
        s = step(s)
    return s


# --- serialization ----------------------------------------------------------


def to_dict(s: Schedule) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "K": s.k,
        "N_o": s.n_ops,
        "ops": [{"kind": op.kind.value, "magnitude": op.magnitude} for op in s.ops],
        "epochs": [
            {"epoch": snap.epoch, "p_tp": snap.p_tp, "p_o": list(snap.p_o)} for snap in s.snapshots
        ],
        "metadata": {
            "source_epochs": s.meta.source_epochs,
            "target_epochs": s.meta.target_epochs,
            "smoothing": s.meta.smoothing,
            "transforms": list(s.meta.transforms),
        },
    }


def _get(d: dict, key: str, where: str):
    if not isinstance(d, dict) or key not in d:
        raise ScheduleFormatError(f"{where}{key}", "missing")
    return d[key]


def _int(v, name: str, allow_none: bool = False):
    if v is None and allow_none:
        return None
    if isinstance(v, bool) or not isinstance(v, int):
        raise ScheduleFormatError(name, f"expected integer, got {v!r}")
    return v


def _float(v, name: str) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ScheduleFormatError(name, f"expected number, got {v!r}")
    return float(v)


def from_dict(d: dict) -> Schedule:
    version = _get(d, "format_version", "")
    if version != FORMAT_VERSION:
        raise ScheduleFormatError("format_version", f"unsupported version {version!r}")
    k = _int(_get(d, "K", ""), "K")
    n_ops = _int(_get(d, "N_o", ""), "N_o")
    raw_ops = _get(d, "ops", "")
    if not isinstance(raw_ops, list) or len(raw_ops) != k:
        raise ScheduleFormatError("ops", f"expected a list of K={k} ops")
    ops = []
    for i, entry in enumerate(raw_ops):
        where = f"ops[{i}]."
        name = _get(entry, "kind", where)
        try:
            kind = AugOpKind.parse(name)
        except ValueError:
            raise ScheduleFormatError(f"ops[{i}].kind", f"unknown op kind {name!r}") from None
        mag = entry.get("magnitude")
        try:
            ops.append(AugOp(kind, None if mag is None else _float(mag, f"{where}magnitude")))
        except ValueError as exc:
            if isinstance(exc, ScheduleFormatError):
                raise
            raise ScheduleFormatError(f"{where}magnitude", str(exc)) from None
    raw_epochs = _get(d, "epochs", "")
    if not isinstance(raw_epochs, list):
        raise ScheduleFormatError("epochs", "expected a list")
    snaps = []
    for i, e in enumerate(raw_epochs):
        where = f"epochs[{i}]."
        p_o = _get(e, "p_o", where)
        if not isinstance(p_o, list):
            raise ScheduleFormatError(f"{where}p_o", "expected a list")
        snaps.append(
            Snapshot(
                _int(_get(e, "epoch", where), f"{where}epoch"),
                _float(_get(e, "p_tp", where), f"{where}p_tp"),
                tuple(_float(x, f"{where}p_o") for x in p_o),
            )
        )
    m = _get(d, "metadata", "")
    meta = ScheduleMeta(
        _int(_get(m, "source_epochs", "metadata."), "metadata.source_epochs"),
        _int(m.get("target_epochs"), "metadata.target_epochs", allow_none=True),
        _int(m.get("smoothing"), "metadata.smoothing", allow_none=True),
        tuple(str(t) for t in m.get("transforms", [])),
    )
    return Schedule(tuple(ops), n_ops, tuple(snaps), meta)


def dumps(s: Schedule) -> str:
    return json.dumps(to_dict(s), indent=1) + "\n"


def save(s: Schedule, path) -> None:
    Path(path).write_text(dumps(s))


def load(path) -> Schedule:
    text = Path(path).read_text()
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScheduleFormatError("file", f"not valid JSON ({exc.msg} at line {exc.lineno})") from None
    return from_dict(d)


def write_trajectory_csv(s: Schedule, path) -> None:
    """``epoch, p_tp, p_o_0, ..., p_o_{K-1}``, one row per snapshot."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "p_tp", *(f"p_o_{k}" for k in range(s.k))])
        for snap in s.snapshots:
            w.writerow([snap.epoch, repr(snap.p_tp), *(repr(p) for p in snap.p_o)])
