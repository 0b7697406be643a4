"""
Named random streams.

All randomness in a run flows from one integer seed. A stage asks for its own
generator by name (plus optional integer indices), so any stage can be re-run in
isolation and produce the same draws regardless of what ran before it.
"""

import hashlib
from typing import Sequence

import numpy as np


def _name_key(name: str) -> int:
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def seed_sequence(seed: int, name: str, *index: int) -> np.random.SeedSequence:
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    entropy: Sequence[int] = [int(seed), _name_key(name), *[int(i) for i in index]]
    return np.random.SeedSequence(entropy)


def stream(seed: int, name: str, *index: int) -> np.random.Generator:
    """Return the generator for stage ``name`` (and ``index``) under ``seed``."""
    return np.random.default_rng(seed_sequence(seed, name, *index))


def derive_seed(seed: int, name: str, *index: int) -> int:
    """Plain integer seed for APIs that take an int (e.g. a per-scenario seed)."""
    return int(seed_sequence(seed, name, *index).generate_state(1, dtype=np.uint32)[0])
