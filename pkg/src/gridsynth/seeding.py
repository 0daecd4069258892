"""Deterministic RNG derivation.

Every stochastic stage derives its generator from a master seed plus a
stable key, so jobs can run in any order (or fail) without shifting the
streams of their neighbours.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _key_to_ints(key) -> tuple[int, ...]:
    if isinstance(key, int):
        return (key,)
    if isinstance(key, str):
        digest = hashlib.sha256(key.encode("utf-8")).digest()
        return tuple(int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4))
    return tuple(int(k) for k in key)


def spawn_rng(master_seed: int, *keys) -> np.random.Generator:
    """Generator keyed by (master_seed, *keys); independent of call order."""
    spawn_key = ()
    for key in keys:
        spawn_key = spawn_key + _key_to_ints(key)
    seq = np.random.SeedSequence(entropy=int(master_seed), spawn_key=spawn_key)
    return np.random.Generator(np.random.PCG64(seq))


def spawn_seed(master_seed: int, *keys) -> int:
    """32-bit integer seed derived like :func:`spawn_rng`."""
    rng = spawn_rng(master_seed, *keys)
    return int(rng.integers(0, 2**31 - 1))
