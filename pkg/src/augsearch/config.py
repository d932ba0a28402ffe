"""Run configuration files (JSON) and the dataset/table plumbing they drive."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .augment import SANITY_TABLE, OpTable, build_op_table
from .data import Dataset, load_idx, make_synthetic, rotate90
from .replay import ReplayConfig
from .rng import substream
from .search import SearchConfig

FORMAT_VERSION = 1
OUTPUT_ENV = "AUGSEARCH_OUTPUT_DIR"


class ConfigError(ValueError):
    pass


@dataclass
class DataConfig:
    source: str = "synthetic"  # synthetic | idx
    n: int = 1600
    size: int = 12
    classes: int = 6
    channels: int = 1
    noise: float = 0.08
    jitter: int = 0
    seed: int = 0
    images_path: str | None = None
    labels_path: str | None = None
    train_n: int = 600
    val_n: int = 400
    test_n: int = 600
    rotate_val: bool = True

    def __post_init__(self):
        if self.source not in ("synthetic", "idx"):
            raise ConfigError(f"data.source must be synthetic or idx, got {self.source!r}")
        if self.source == "idx" and not (self.images_path and self.labels_path):
            raise ConfigError("data.images_path and data.labels_path are required for idx data")
        if min(self.train_n, self.val_n) < 1 or self.test_n < 0:
            raise ConfigError("data.train_n and data.val_n must be >= 1, data.test_n >= 0")


@dataclass
class ScheduleTransform:
    upsample: int | None = None
    smooth: int | None = None
    smooth_first: bool = False


@dataclass
class SanityConfig:
    threshold: float = 0.5


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    ops: list = field(default_factory=lambda: [dict(e) for e in SANITY_TABLE])
    search: SearchConfig = field(default_factory=SearchConfig)
    schedule: ScheduleTransform = field(default_factory=ScheduleTransform)
    replay: ReplayConfig = field(default_factory=ReplayConfig)
    sanity: SanityConfig = field(default_factory=SanityConfig)
    output_dir: str = "runs/default"
    format_version: int = FORMAT_VERSION

    def table(self) -> OpTable:
        try:
            return build_op_table(self.ops)
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"ops: {exc}") from None

    def resolved_output_dir(self) -> Path:
        return Path(os.environ.get(OUTPUT_ENV) or self.output_dir)


def _build(cls, raw: Any, section: str):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigError(f"{section}: expected an object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - names)
    if unknown:
        raise ConfigError(f"{section}: unknown keys {unknown}")
    try:
        return cls(**raw)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        msg = str(exc)
        raise ConfigError(msg if msg.startswith(section) else f"{section}: {msg}") from None


def from_dict(raw: dict) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config: expected a JSON object")
    known = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"config: unknown keys {unknown}")
    version = raw.get("format_version", FORMAT_VERSION)
    if version != FORMAT_VERSION:
        raise ConfigError(f"format_version: unsupported version {version!r}")
    cfg = RunConfig(
        data=_build(DataConfig, raw.get("data"), "data"),
        ops=raw.get("ops", [dict(e) for e in SANITY_TABLE]),
        search=_build(SearchConfig, raw.get("search"), "search"),
        schedule=_build(ScheduleTransform, raw.get("schedule"), "schedule"),
        replay=_build(ReplayConfig, raw.get("replay"), "replay"),
        sanity=_build(SanityConfig, raw.get("sanity"), "sanity"),
        output_dir=raw.get("output_dir", "runs/default"),
    )
    cfg.table()
    return cfg


def load(path) -> tuple[RunConfig, str]:
    """Parse a config file; also return the SHA-256 of its bytes."""
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(str(p))
    raw = p.read_bytes()
    try:
        d = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config: invalid JSON ({exc.msg} at line {exc.lineno})") from None
    return from_dict(d), hashlib.sha256(raw).hexdigest()


def to_dict(cfg: RunConfig) -> dict:
    return dataclasses.asdict(cfg)


@dataclass
class Splits:
    train: Dataset
    val: Dataset
    test: Dataset | None


def build_splits(dc: DataConfig) -> Splits:
    """Disjoint train/val/test; val and test are rotated 90 degrees when ``rotate_val``."""
    if dc.source == "synthetic":
        try:
            base = make_synthetic(dc.n, dc.size, dc.classes, dc.seed, channels=dc.channels, noise=dc.noise, jitter=dc.jitter)
        except ValueError as exc:
            raise ConfigError(f"data: {exc}") from None
    else:
        base = load_idx(dc.images_path, dc.labels_path)
    need = dc.train_n + dc.val_n + dc.test_n
    if need > len(base):
        raise ConfigError(f"data: insufficient data, need {need} samples, have {len(base)}")
    perm = substream(dc.seed, "splits").permutation(len(base))
    cuts = np.cumsum([dc.train_n, dc.val_n, dc.test_n])
    train = base.subset(np.sort(perm[: cuts[0]]))
    val = base.subset(np.sort(perm[cuts[0] : cuts[1]]))
    test = base.subset(np.sort(perm[cuts[1] : cuts[2]])) if dc.test_n else None
    if dc.rotate_val:
        val = Dataset(rotate90(val.images), val.labels, val.n_classes)
        if test is not None:
            test = Dataset(rotate90(test.images), test.labels, test.n_classes)
    return Splits(train, val, test)


def sanity_config(seed: int = 0, **search_overrides) -> RunConfig:
    """Rotated-validation setup: N_o = 1, p_tp starting at 0.75, 20 search epochs."""
    search = dict(
        epochs=20,
        n_policies=3,
        n_ops=1,
        init_p_tp=0.75,
        eta=0.1,
        alpha_lr_o=0.05,
        alpha_lr_tp=0.01,
        val_batch=256,
        seed=seed,
    )
    search.update(search_overrides)
    return RunConfig(
        data=DataConfig(n=2200, train_n=1200, seed=seed),
        search=SearchConfig(**search),
        output_dir=f"runs/sanity-{seed}",
    )
