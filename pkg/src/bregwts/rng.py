"""Counter-based, splittable random streams.

Every random draw in the package comes from a Philox generator keyed by
``(master_seed, stage tag, *indices)``.  Two streams with different keys are
statistically independent, and any stream can be rebuilt in isolation, so a
single stage of an experiment is reproducible without replaying the others.
"""

from __future__ import annotations

import zlib

import numpy as np

__all__ = ["stream", "tag_id"]


def tag_id(tag: str) -> int:
    """Stable 32-bit id for a stage tag (``hash()`` is salted per process)."""
    return zlib.crc32(tag.encode("utf-8"))


def stream(seed: int, tag: str, *indices: int) -> np.random.Generator:
    """Return the generator for ``(seed, tag, *indices)``."""
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    key = (tag_id(tag),) + tuple(int(i) for i in indices)
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=key)
    return np.random.Generator(np.random.Philox(ss))
