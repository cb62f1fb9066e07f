"""Seeded random streams.

Every random draw in the package comes from a generator obtained via
:func:`stream`, keyed by a base seed plus purpose tags.  Streams for
different tags are independent, so adding a new consumer never shifts the
draws of an existing one.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _tag_entropy(tag) -> int:
    if isinstance(tag, (int, np.integer)):
        return int(tag)
    digest = hashlib.sha256(str(tag).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def stream(seed: int, *tags) -> np.random.Generator:
    """Generator for (seed, tags); same arguments always give the same stream."""
    entropy = [int(seed)] + [_tag_entropy(t) for t in tags]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def derive_seed(seed: int, *tags) -> int:
    """Deterministic child seed for (seed, tags), usable as a new base seed."""
    text = repr((int(seed),) + tuple(str(t) for t in tags))
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")
