"""Deterministic seed derivation for reproducible simulation pipelines.

Every stochastic component takes an explicit 64-bit seed. Sub-tasks (one
tree of a forest, one cell of an experiment grid) get their own stream
derived from the parent seed and a task index, so results are bit-identical
for any execution order or worker count.
"""

from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def mix64(z: int) -> int:
    """SplitMix64 finalizer; bijective on 64-bit integers."""
    z &= _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def child_seed(seed: int, *indices: int) -> int:
    """Derive an independent child seed from a parent seed and task indices.

    Chained SplitMix64 mixing: well spread even for consecutive indices,
    and stable across platforms and processes.
    """
    state = mix64(seed)
    for idx in indices:
        state = mix64((state + (idx + 1) * _GOLDEN) & _MASK)
    return state


def generator(seed: int, *indices: int) -> np.random.Generator:
    """A numpy Generator seeded from ``child_seed(seed, *indices)``."""
    return np.random.default_rng(child_seed(seed, *indices))
