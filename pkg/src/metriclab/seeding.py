"""Deterministic named sub-streams derived from a single run seed.

Every random choice in the package draws from substream(seed, purpose), so
two runs with the same config seed replay identical randomness and adding a
new consumer never perturbs existing streams.
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["subseed", "substream"]


def subseed(seed: int, purpose: str) -> int:
    """64-bit integer derived from sha256 of "{seed}/{purpose}"."""
    digest = hashlib.sha256(f"{int(seed)}/{purpose}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def substream(seed: int, purpose: str) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(subseed(seed, purpose)))
