"""Deterministic, named random substreams.

Every source of randomness in the package (parameter init, frame-segment
sampling, shuffling, synthetic data) draws from a substream identified by a
string name. A substream is a Philox 4x64 counter-based generator keyed by

    key = [seed XOR sha256(name)[0:8], sha256(name)[8:16]]

(both words little-endian uint64). Philox streams keyed differently are
independent, so adding a new named stream never perturbs existing ones, and
the same (seed, name) pair reproduces bit-identical draws on any platform.
"""

from __future__ import annotations

import hashlib

import numpy as np


def substream(seed: int, name: str) -> np.random.Generator:
    """Return the generator for the named substream under `seed`."""
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    h0 = int.from_bytes(digest[0:8], "little")
    h1 = int.from_bytes(digest[8:16], "little")
    key = np.array([(seed & 0xFFFFFFFFFFFFFFFF) ^ h0, h1], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))
