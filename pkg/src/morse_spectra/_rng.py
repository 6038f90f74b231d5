"""Seed plumbing: every random draw comes from a stream keyed by (master seed, task path)."""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1


def stream(seed, *keys: int) -> np.random.Generator:
    """Independent generator for ``(seed, *keys)``.

    ``seed`` may already be a Generator, in which case it is returned unchanged
    (callers that thread their own generator keep full control).
    """
    if isinstance(seed, np.random.Generator):
        return seed
    if seed is None:
        seed = 0
    seed = int(seed)
    if not 0 <= seed <= MASK64:
        raise ValueError("seed must be an unsigned 64-bit integer")
    ss = np.random.SeedSequence(entropy=seed, spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.PCG64(ss))


def child_seeds(seed: int, count: int, *keys: int) -> list[int]:
    """Deterministic 64-bit seeds for ``count`` parallel tasks."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in keys))
    words = ss.generate_state(2 * count, dtype=np.uint32).astype(np.uint64)
    return [int(words[2 * i] << np.uint64(32) | words[2 * i + 1]) for i in range(count)]
