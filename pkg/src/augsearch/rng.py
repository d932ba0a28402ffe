"""Deterministic random substreams.

Every consumer of randomness derives its own generator from ``(seed, tag,
*indices)`` so that results do not depend on the order in which independent
pieces of work are executed (serial vs. thread pool).
"""

from __future__ import annotations

import zlib

import numpy as np


def _tag_id(tag: str) -> int:
    return zlib.crc32(tag.encode("utf-8"))


def substream(seed: int, tag: str, *indices: int) -> np.random.Generator:
    """Return a generator keyed on ``seed``, a string tag and integer indices."""
    entropy = [int(seed) & 0xFFFFFFFF, _tag_id(tag), *(int(i) for i in indices)]
    return np.random.default_rng(np.random.SeedSequence(entropy))
