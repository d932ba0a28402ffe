"""Datasets: synthetic orientation-sensitive glyphs and IDX files."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .nnet import Batch
from .rng import substream


@dataclass(frozen=True)
class Dataset:
    images: np.ndarray  # [N, C, H, W], float64 in [0, 1]
    labels: np.ndarray  # [N], int64
    n_classes: int

    def __post_init__(self):
        if self.images.ndim != 4 or len(self.images) < 1:
            raise ValueError(f"images must be a non-empty [N, C, H, W] array, got {self.images.shape}")
        if len(self.labels) != len(self.images):
            raise ValueError(f"{len(self.labels)} labels for {len(self.images)} images")
        if self.labels.min() < 0 or self.labels.max() >= self.n_classes:
            raise ValueError(f"labels must lie in [0, {self.n_classes})")

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, idx: np.ndarray) -> "Dataset":
        return Dataset(self.images[idx], self.labels[idx], self.n_classes)

    def batch(self, idx: np.ndarray) -> Batch:
        return Batch(self.images[idx], self.labels[idx])

    @property
    def input_size(self) -> int:
        return int(np.prod(self.images.shape[1:]))


# --- synthetic glyphs -------------------------------------------------------
#
# Each glyph is drawn in a b x b box. No glyph is symmetric about either
# diagonal, so a 90 degree rotation never coincides with a flip, and no glyph
# is a rotation or mirror image of another class.


def _hbar(b, t):
    g = np.zeros((b, b))
    g[:t, :] = 1
    return g


def _ell(b, t):
    g = np.zeros((b, b))
    g[:, :t] = 1
    g[-t:, : b // 2 + 1] = 1
    return g


def _triangle(b, t):
    i, j = np.indices((b, b))
    return (2 * j <= i).astype(float)


def _tee(b, t):
    g = np.zeros((b, b))
    g[:t, :] = 1
    c = (b - t) // 2
    g[:, c : c + t] = 1
    return g


def _slash(b, t):
    i, j = np.indices((b, b))
    return (np.abs(2 * j - i) < 2 * t).astype(float)


def _cup(b, t):
    g = np.zeros((b, b))
    g[:, :t] = 1
    g[:, -t:] = 1
    g[-t:, :] = 1
    return g


def _step(b, t):
    g = np.zeros((b, b))
    h = b // 2
    g[:t, :h] = 1
    g[-t:, h:] = 1
    g[:, h - t // 2 - 1 : h - t // 2 - 1 + t] = 1
    return g


def _rails(b, t):
    g = np.zeros((b, b))
    g[:t, :] = 1
    g[-t:, :] = 1
    return g


def _eff(b, t):
    g = np.zeros((b, b))
    g[:, :t] = 1
    g[:t, :] = 1
    m = b // 2
    g[m : m + t, : b // 2 + 1] = 1
    return g


def _dots(b, t):
    g = np.zeros((b, b))
    s = max(2, b // 3)
    g[:s, :s] = 1
    g[:s, -s:] = 1
    return g


# The first five are mirror-symmetric left to right, so a flip never moves
# them toward their rotated form; with the default six classes Rotate90 is the
# only op that reproduces the rotated validation glyphs.
GLYPHS = (_hbar, _tee, _rails, _cup, _dots, _slash, _ell, _triangle, _step, _eff)


def make_synthetic(
    n: int,
    size: int = 12,
    classes: int = 6,
    seed: int = 0,
    *,
    channels: int = 1,
    noise: float = 0.08,
    jitter: int = 0,
) -> Dataset:
    """Render ``n`` noisy glyph images, classes balanced to within one sample.

    Each glyph is centred and then shifted by up to ``jitter`` pixels along
    each axis.

    Pixels are quantized to multiples of 1/255 so the result survives an IDX
    round trip unchanged.
    """
    if size < 8:
        raise ValueError(f"size must be >= 8, got {size}")
    if not 2 <= classes <= len(GLYPHS):
        raise ValueError(f"classes must be in [2, {len(GLYPHS)}], got {classes}")
    if n < 1 or channels < 1:
        raise ValueError("n and channels must be positive")
    if jitter < 0:
        raise ValueError(f"jitter must be >= 0, got {jitter}")
    rng = substream(seed, "synthetic")
    labels = np.arange(n) % classes
    labels = labels[rng.permutation(n)]
    images = np.zeros((n, channels, size, size))
    for idx, label in enumerate(labels):
        b = int(rng.integers(size // 2, size // 2 + 3))
        t = int(rng.integers(1, 3))
        top, left = np.clip((size - b) // 2 + rng.integers(-jitter, jitter + 1, size=2), 0, size - b)
        glyph = GLYPHS[label](b, t)
        intensity = rng.uniform(0.6, 1.0, size=channels)
        canvas = np.zeros((size, size))
        canvas[top : top + b, left : left + b] = glyph
        images[idx] = canvas[None] * intensity[:, None, None]
    images += rng.normal(0.0, noise, size=images.shape)
    images = np.round(np.clip(images, 0.0, 1.0) * 255.0) / 255.0
    return Dataset(images, labels.astype(np.int64), classes)


def rotate90(images: np.ndarray, k: int = 1) -> np.ndarray:
    """Counter-clockwise rotation of an ``[N, C, H, W]`` stack, same as Rotate90."""
    return np.ascontiguousarray(np.rot90(images, k, axes=(-2, -1)))


def make_sanity_split(
    base: Dataset, train_n: int, val_n: int, seed: int, *, rotate: bool = True
) -> tuple[Dataset, Dataset]:
    """Disjoint seeded train/val split with every validation image rotated 90 degrees.

    ``rotate=False`` gives the unrotated control split.
    """
    if train_n < 1 or val_n < 1:
        raise ValueError("train_n and val_n must be positive")
    if train_n + val_n > len(base):
        raise ValueError(
            f"insufficient data: need {train_n + val_n} samples, have {len(base)}"
        )
    perm = substream(seed, "sanity-split").permutation(len(base))
    train = base.subset(np.sort(perm[:train_n]))
    val = base.subset(np.sort(perm[train_n : train_n + val_n]))
    if rotate:
        val = Dataset(rotate90(val.images), val.labels, val.n_classes)
    return train, val


# --- IDX --------------------------------------------------------------------


class IdxError(ValueError):
    pass


class IdxMagicError(IdxError):
    pass


class IdxTruncatedError(IdxError):
    pass


class IdxMismatchError(IdxError):
    pass


def _read_idx(path: Path, ndim: int) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise IdxTruncatedError(f"{path}: truncated header")
    if raw[0] != 0 or raw[1] != 0 or raw[2] != 0x08:
        raise IdxMagicError(f"{path}: bad magic {raw[:3].hex()} (want 000008)")
    if raw[3] != ndim:
        raise IdxMagicError(f"{path}: expected {ndim} dims, header says {raw[3]}")
    head = 4 + 4 * ndim
    if len(raw) < head:
        raise IdxTruncatedError(f"{path}: truncated dimension sizes")
    dims = struct.unpack(f">{ndim}I", raw[4:head])
    count = int(np.prod(dims))
    if len(raw) - head < count:
        raise IdxTruncatedError(
            f"{path}: payload has {len(raw) - head} bytes, dims {dims} need {count}"
        )
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=head).reshape(dims)


def load_idx(images_path, labels_path, n_classes: int | None = None) -> Dataset:
    """Read an unsigned-byte IDX image file (N, H, W) and label file (N,)."""
    pixels = _read_idx(images_path, 3)
    labels = _read_idx(labels_path, 1).astype(np.int64)
    if len(pixels) != len(labels):
        raise IdxMismatchError(f"{len(pixels)} images but {len(labels)} labels")
    if n_classes is None:
        n_classes = int(labels.max()) + 1
    images = pixels[:, None, :, :].astype(np.float64) / 255.0
    return Dataset(images, labels, n_classes)


def write_idx(dataset: Dataset, images_path, labels_path) -> None:
    """Write a single-channel dataset as unsigned-byte IDX files."""
    if dataset.images.shape[1] != 1:
        raise ValueError("IDX export supports single-channel images only")
    n, _, h, w = dataset.images.shape
    pixels = np.round(dataset.images[:, 0] * 255.0).astype(np.uint8)
    Path(images_path).write_bytes(bytes([0, 0, 8, 3]) + struct.pack(">3I", n, h, w) + pixels.tobytes())
    Path(labels_path).write_bytes(
        bytes([0, 0, 8, 1]) + struct.pack(">I", n) + dataset.labels.astype(np.uint8).tobytes()
    )
