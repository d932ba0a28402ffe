"""Small fully-connected classifier with hand-written backprop.

The network is ``flatten -> [dense -> relu]* -> dense -> softmax`` and keeps
all of its weights in one flat float64 vector so that gradients can be dotted,
mixed and stepped as plain vectors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .rng import substream


class ShapeError(ValueError):
    """Raised when array dimensions do not agree."""


@dataclass(frozen=True)
class Batch:
    """Images of shape ``[B, C, H, W]`` in [0, 1] plus ``B`` integer labels."""

    images: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if self.images.ndim != 4:
            raise ShapeError(f"images must be [B, C, H, W], got shape {self.images.shape}")
        if self.labels.ndim != 1 or len(self.labels) != len(self.images):
            raise ShapeError(
                f"labels shape {self.labels.shape} does not match {len(self.images)} images"
            )
        if len(self.labels) < 1:
            raise ShapeError("empty batch")

    def __len__(self) -> int:
        return len(self.labels)


@dataclass(frozen=True)
class Arch:
    input_size: int
    hidden: tuple[int, ...]
    n_classes: int

    @property
    def layer_dims(self) -> list[tuple[int, int]]:
        sizes = [self.input_size, *self.hidden, self.n_classes]
        return list(zip(sizes[:-1], sizes[1:]))

    @property
    def n_params(self) -> int:
        return sum(fi * fo + fo for fi, fo in self.layer_dims)


@dataclass
class Model:
    arch: Arch
    params: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.params = np.asarray(self.params, dtype=np.float64)
        if self.params.shape != (self.arch.n_params,):
            raise ShapeError(
                f"expected {self.arch.n_params} parameters, got {self.params.shape}"
            )

    def with_params(self, params: np.ndarray) -> "Model":
        return Model(self.arch, params)

    def layers(self, params: np.ndarray | None = None) -> list[tuple[np.ndarray, np.ndarray]]:
        """(W, b) views into ``params``; W has shape (fan_in, fan_out)."""
        flat = self.params if params is None else params
        out = []
        offset = 0
        for fi, fo in self.arch.layer_dims:
            w = flat[offset : offset + fi * fo].reshape(fi, fo)
            offset += fi * fo
            b = flat[offset : offset + fo]
            offset += fo
            out.append((w, b))
        return out


def init_model(
    input_size: int, hidden: Sequence[int], n_classes: int, seed: int
) -> Model:
    """Glorot-uniform weights, zero biases."""
    arch = Arch(int(input_size), tuple(int(h) for h in hidden), int(n_classes))
    rng = substream(seed, "model-init")
    chunks = []
    for fi, fo in arch.layer_dims:
        s = math.sqrt(6.0 / (fi + fo))
        chunks.append(rng.uniform(-s, s, size=fi * fo))
        chunks.append(np.zeros(fo))
    return Model(arch, np.concatenate(chunks))


def _check(model: Model, batch: Batch) -> np.ndarray:
    x = batch.images.reshape(len(batch), -1)
    if x.shape[1] != model.arch.input_size:
        raise ShapeError(
            f"batch has {x.shape[1]} features per sample, model expects {model.arch.input_size}"
        )
    labels = batch.labels
    if labels.min() < 0 or labels.max() >= model.arch.n_classes:
        raise ShapeError(f"labels must lie in [0, {model.arch.n_classes})")
    return x


def _forward(model: Model, x: np.ndarray):
    acts = [x]
    layers = model.layers()
    h = x
    for w, b in layers[:-1]:
        h = np.maximum(h @ w + b, 0.0)
        acts.append(h)
    w, b = layers[-1]
    logits = h @ w + b
    shifted = logits - logits.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - logsumexp
    return acts, log_probs


def logits(model: Model, images: np.ndarray) -> np.ndarray:
    x = images.reshape(len(images), -1)
    h = x
    layers = model.layers()
    for w, b in layers[:-1]:
        h = np.maximum(h @ w + b, 0.0)
    w, b = layers[-1]
    return h @ w + b


def loss(model: Model, batch: Batch) -> float:
    """Mean softmax cross-entropy over the batch."""
    x = _check(model, batch)
    _, log_probs = _forward(model, x)
    return float(-log_probs[np.arange(len(batch)), batch.labels].mean())


def grad(model: Model, batch: Batch) -> tuple[float, np.ndarray]:
    """Loss and its gradient w.r.t. the flat parameter vector."""
    x = _check(model, batch)
    acts, log_probs = _forward(model, x)
    n = len(batch)
    rows = np.arange(n)
    value = float(-log_probs[rows, batch.labels].mean())

    delta = np.exp(log_probs)
    delta[rows, batch.labels] -= 1.0
    delta /= n

    layers = model.layers()
    out = np.empty_like(model.params)
    grads = model.layers(out)
    for i in range(len(layers) - 1, -1, -1):
        h = acts[i]
        gw, gb = grads[i]
        gw[...] = h.T @ delta
        gb[...] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ layers[i][0].T) * (h > 0.0)
    return value, out


def apply_step(params: np.ndarray, g: np.ndarray, eta: float) -> np.ndarray:
    """Return ``params - eta * g`` as a new array."""
    if params.shape != g.shape:
        raise ShapeError(f"parameter shape {params.shape} != gradient shape {g.shape}")
    if not eta > 0:
        raise ValueError(f"learning rate must be positive, got {eta}")
    return params - eta * g


def dot(a: np.ndarray, b: np.ndarray) -> float:
    # fsum is correctly rounded, hence independent of summation order
    if a.shape != b.shape:
        raise ShapeError(f"cannot dot shapes {a.shape} and {b.shape}")
    return math.fsum((np.asarray(a, dtype=np.float64) * b).tolist())


def error_rate(model: Model, images: np.ndarray, labels: np.ndarray) -> float:
    pred = logits(model, images).argmax(axis=1)
    return float(np.mean(pred != labels))
