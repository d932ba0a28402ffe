"""Pixel-space augmentation kernels and the candidate operation table.

Kernels act on the trailing ``(H, W)`` axes, so the deterministic ones work on
a single ``[C, H, W]`` image or a whole ``[B, C, H, W]`` stack. Rotations are
counter-clockwise.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Mapping, Sequence

import numpy as np

from .nnet import Batch


class AugOpKind(str, Enum):
    IDENTITY = "Identity"
    ROTATE90 = "Rotate90"
    ROTATE180 = "Rotate180"
    ROTATE270 = "Rotate270"
    FLIP_LR = "FlipLR"
    FLIP_UD = "FlipUD"
    INVERT = "Invert"
    BRIGHTNESS = "Brightness"
    CONTRAST = "Contrast"
    TRANSLATE_X = "TranslateX"
    TRANSLATE_Y = "TranslateY"
    CUTOUT = "Cutout"

    @classmethod
    def parse(cls, name: str) -> "AugOpKind":
        try:
            return cls(name)
        except ValueError:
            raise ValueError(f"unknown op kind {name!r}") from None


MAX_SHIFT = 64

_MAGNITUDE_KINDS = {
    AugOpKind.BRIGHTNESS,
    AugOpKind.CONTRAST,
    AugOpKind.TRANSLATE_X,
    AugOpKind.TRANSLATE_Y,
    AugOpKind.CUTOUT,
}


def needs_magnitude(kind: AugOpKind) -> bool:
    return kind in _MAGNITUDE_KINDS


def _check_magnitude(kind: AugOpKind, mag: float) -> None:
    if not np.isfinite(mag):
        raise ValueError(f"{kind.value}: magnitude must be finite")
    if kind is AugOpKind.BRIGHTNESS and not -0.5 <= mag <= 0.5:
        raise ValueError(f"Brightness: magnitude {mag} outside [-0.5, 0.5]")
    if kind is AugOpKind.CONTRAST and not 0.0 < mag <= 3.0:
        raise ValueError(f"Contrast: magnitude {mag} outside (0, 3]")
    if kind in (AugOpKind.TRANSLATE_X, AugOpKind.TRANSLATE_Y):
        if mag != int(mag) or abs(mag) > MAX_SHIFT:
            raise ValueError(f"{kind.value}: magnitude must be an integer pixel offset, |m| <= {MAX_SHIFT}")
    if kind is AugOpKind.CUTOUT and (mag != int(mag) or mag < 1):
        raise ValueError(f"Cutout: side must be a positive integer, got {mag}")


@dataclass(frozen=True)
class AugOp:
    kind: AugOpKind
    magnitude: float | None = None

    def __post_init__(self):
        if needs_magnitude(self.kind):
            if self.magnitude is None:
                raise ValueError(f"{self.kind.value} requires a magnitude")
            _check_magnitude(self.kind, self.magnitude)
        elif self.magnitude is not None:
            raise ValueError(f"{self.kind.value} takes no magnitude")

    @property
    def name(self) -> str:
        if self.magnitude is None:
            return self.kind.value
        return f"{self.kind.value}({self.magnitude:g})"


@dataclass(frozen=True)
class OpTable:
    ops: tuple[AugOp, ...]

    def __post_init__(self):
        if len(self.ops) < 2:
            raise ValueError(f"op table needs at least 2 entries, got {len(self.ops)}")
        seen = set()
        for op in self.ops:
            if op in seen:
                raise ValueError(f"duplicate op {op.name}")
            seen.add(op)

    def __len__(self) -> int:
        return len(self.ops)

    def __getitem__(self, i: int) -> AugOp:
        return self.ops[i]

    def index_of(self, kind: AugOpKind, magnitude: float | None = None) -> int:
        for i, op in enumerate(self.ops):
            if op.kind is kind and (magnitude is None or op.magnitude == magnitude):
                return i
        raise KeyError(kind.value)

    @property
    def names(self) -> list[str]:
        return [op.name for op in self.ops]


# A policy is a tuple of N_o indices into an OpTable; repeats are allowed.
AugPolicy = tuple[int, ...]


def build_op_table(entries: Iterable[Mapping]) -> OpTable:
    """Expand ``[{"kind": ..., "magnitudes": [...]}, ...]`` into an OpTable.

    Kinds that take a magnitude contribute one op per listed magnitude, in the
    listed order; other kinds contribute a single op.
    """
    ops: list[AugOp] = []
    for entry in entries:
        kind = AugOpKind.parse(entry["kind"])
        mags = entry.get("magnitudes")
        if needs_magnitude(kind):
            if not mags:
                raise ValueError(f"{kind.value} requires a non-empty magnitudes list")
            new = [AugOp(kind, float(m)) for m in mags]
        else:
            if mags:
                raise ValueError(f"{kind.value} takes no magnitudes")
            new = [AugOp(kind)]
        for op in new:
            if op in ops:
                raise ValueError(f"duplicate op {op.name}")
            ops.append(op)
    if not ops:
        raise ValueError("empty op table")
    return OpTable(tuple(ops))


SANITY_TABLE = [
    {"kind": "Identity"},
    {"kind": "Rotate90"},
    {"kind": "FlipLR"},
    {"kind": "FlipUD"},
    {"kind": "Invert"},
    {"kind": "Brightness", "magnitudes": [0.3]},
    {"kind": "Contrast", "magnitudes": [1.8]},
    {"kind": "TranslateX", "magnitudes": [2]},
    {"kind": "TranslateY", "magnitudes": [2]},
    {"kind": "Cutout", "magnitudes": [4]},
]

DEFAULT_TABLE = [
    {"kind": "Identity"},
    {"kind": "Rotate90"},
    {"kind": "Rotate180"},
    {"kind": "Rotate270"},
    {"kind": "FlipLR"},
    {"kind": "FlipUD"},
    {"kind": "Invert"},
    {"kind": "Brightness", "magnitudes": [-0.2, 0.2]},
    {"kind": "Contrast", "magnitudes": [0.5, 1.5]},
    {"kind": "TranslateX", "magnitudes": [-2, 2]},
    {"kind": "TranslateY", "magnitudes": [-2, 2]},
    {"kind": "Cutout", "magnitudes": [3, 5]},
]


def _shift(x: np.ndarray, offset: int, axis: int) -> np.ndarray:
    out = np.zeros_like(x)
    n = x.shape[axis]
    if abs(offset) >= n:
        return out
    src = [slice(None)] * x.ndim
    dst = [slice(None)] * x.ndim
    if offset >= 0:
        src[axis] = slice(0, n - offset)
        dst[axis] = slice(offset, n)
    else:
        src[axis] = slice(-offset, n)
        dst[axis] = slice(0, n + offset)
    out[tuple(dst)] = x[tuple(src)]
    return out


def _cutout(image: np.ndarray, side: int, rng: np.random.Generator) -> np.ndarray:
    h, w = image.shape[-2:]
    sh, sw = min(side, h), min(side, w)
    top = int(rng.integers(0, h - sh + 1))
    left = int(rng.integers(0, w - sw + 1))
    out = image.copy()
    out[..., top : top + sh, left : left + sw] = 0.0
    return out


def _apply_deterministic(x: np.ndarray, op: AugOp) -> np.ndarray:
    k = op.kind
    if k is AugOpKind.IDENTITY:
        return x.copy()
    if k is AugOpKind.ROTATE90:
        return np.ascontiguousarray(np.rot90(x, 1, axes=(-2, -1)))
    if k is AugOpKind.ROTATE180:
        return np.ascontiguousarray(np.rot90(x, 2, axes=(-2, -1)))
    if k is AugOpKind.ROTATE270:
        return np.ascontiguousarray(np.rot90(x, 3, axes=(-2, -1)))
    if k is AugOpKind.FLIP_LR:
        return np.ascontiguousarray(x[..., ::-1])
    if k is AugOpKind.FLIP_UD:
        return np.ascontiguousarray(x[..., ::-1, :])
    if k is AugOpKind.INVERT:
        return 1.0 - x
    if k is AugOpKind.BRIGHTNESS:
        return np.clip(x + op.magnitude, 0.0, 1.0)
    if k is AugOpKind.CONTRAST:
        mean = x.mean(axis=(-2, -1), keepdims=True)
        return np.clip((x - mean) * op.magnitude + mean, 0.0, 1.0)
    if k is AugOpKind.TRANSLATE_X:
        return _shift(x, int(op.magnitude), axis=x.ndim - 1)
    if k is AugOpKind.TRANSLATE_Y:
        return _shift(x, int(op.magnitude), axis=x.ndim - 2)
    raise AssertionError(k)


def apply_op(image: np.ndarray, op: AugOp, rng: np.random.Generator) -> np.ndarray:
    """Apply ``op`` to one ``[C, H, W]`` image. Only Cutout draws from ``rng``."""
    if op.kind is AugOpKind.CUTOUT:
        return _cutout(image, int(op.magnitude), rng)
    return _apply_deterministic(image, op)


def apply_ops_to_stack(
    images: np.ndarray, ops: Sequence[AugOp], rng: np.random.Generator
) -> np.ndarray:
    """Apply ``ops`` in order to every image of a ``[B, C, H, W]`` stack.

    Equivalent to calling :func:`apply_op` image by image; Cutout positions
    are drawn image by image in batch order for each Cutout op.
    """
    x = images
    for op in ops:
        if op.kind is AugOpKind.CUTOUT:
            x = np.stack([_cutout(img, int(op.magnitude), rng) for img in x])
        else:
            x = _apply_deterministic(x, op)
    return x


def apply_policy(
    batch: Batch, policy: AugPolicy, table: OpTable, rng: np.random.Generator
) -> Batch:
    """Transform every image by the policy's ops in order; labels untouched."""
    for i in policy:
        if not 0 <= i < len(table):
            raise IndexError(f"op index {i} out of range for table of size {len(table)}")
    images = apply_ops_to_stack(batch.images, [table[i] for i in policy], rng)
    return Batch(images, batch.labels)
