"""Deterministic randomness plumbing shared by every module.

Every randomized operation in this package draws from numpy's PCG64,
keyed through SeedSequence by a (seed, *stream) tuple. A given key
produces the same stream on every platform and every run, which is what
makes seeded experiments byte-reproducible.
"""
from __future__ import annotations

import numpy as np


def rng_from(seed: int, *stream: int) -> np.random.Generator:
    """Return the package PRNG for ``seed``, optionally sub-keyed by ``stream``.

    Sub-keys are used to derive independent per-trace generators, e.g.
    ``rng_from(seed, trace_index)``, so that parallel generation matches
    sequential generation bit for bit.
    """
    key = tuple(_as_entropy(s) for s in (seed, *stream))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(key)))


def _as_entropy(value: int) -> int:
    iv = int(value)
    if iv < 0:
        raise ValueError(f"seeds must be non-negative integers, got {iv}")
    return iv
