"""Deterministic seed derivation.

Every stochastic component (env jitter, batch sampling, diffusion noise,
weight init, ...) draws from a numpy Generator whose seed is derived from the
experiment master seed plus a stable string/int tag path.  Derivation goes
through hashes, not PYTHONHASHSEED, so reruns are bit-identical.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _tag_to_int(tag: int | str) -> int:
    if isinstance(tag, (int, np.integer)):
        return int(tag) & 0xFFFFFFFF
    digest = hashlib.blake2s(str(tag).encode("utf-8"), digest_size=4).digest()
    return int.from_bytes(digest, "little")


def derive_seed(master: int, *tags: int | str) -> int:
    """A 32-bit seed deterministically derived from (master, *tags)."""
    entropy = [int(master) & 0xFFFFFFFF] + [_tag_to_int(t) for t in tags]
    return int(np.random.SeedSequence(entropy).generate_state(1, np.uint32)[0])


def rng_for(master: int, *tags: int | str) -> np.random.Generator:
    """A fresh PCG64 generator for the given tag path."""
    return np.random.default_rng(derive_seed(master, *tags))
