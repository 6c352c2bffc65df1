"""Deterministic derivation of independent random streams.

Every source of randomness in the package flows through `spawn_rng` so
that a single top-level seed fully determines a run. String tags are
hashed with sha256 (stable across processes and platforms, unlike
Python's builtin hash).
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def _tag_to_int(tag: int | str) -> int:
    if isinstance(tag, (int, np.integer)):
        return int(tag) & _MASK64
    digest = hashlib.sha256(str(tag).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def derive_seed(seed: int, *tags: int | str) -> np.random.SeedSequence:
    entropy = [int(seed) & _MASK64] + [_tag_to_int(t) for t in tags]
    return np.random.SeedSequence(entropy)


def spawn_rng(seed: int, *tags: int | str) -> np.random.Generator:
    """A generator for the stream identified by (seed, *tags)."""
    return np.random.default_rng(derive_seed(seed, *tags))


def seed_int(seed: int, *tags: int | str) -> int:
    """A derived child seed, for APIs that take a plain integer seed."""
    state = derive_seed(seed, *tags).generate_state(1, np.uint64)[0]
    return int(state)
