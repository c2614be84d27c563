"""Named random streams derived from one 64-bit experiment seed.

Every source of randomness (data generation, weight init, shuffling, gap
placement, ...) pulls its own generator via a stable name, so components can
be re-seeded independently and reruns are bit-reproducible.
"""
from __future__ import annotations

import hashlib

import numpy as np


def _name_key(name: str) -> int:
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def stream(seed: int, name: str) -> np.random.Generator:
    """Deterministic generator for (seed, name), independent across names."""
    return np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFFFFFFFFFF, _name_key(name)]))


def substream(seed: int, name: str, index: int) -> np.random.Generator:
    """Indexed member of a named family, e.g. one stream per episode."""
    return stream(seed, f"{name}/{index}")
