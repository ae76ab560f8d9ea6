"""Deterministic random streams.

Every stochastic operation in the package draws from an explicitly passed
numpy Generator; nothing touches global random state.  Streams are keyed by
(seed, *labels): the key is hashed, pushed through splitmix64, and used as
the key of a counter-based Philox bit generator.  Any stream can therefore be
reconstructed on its own -- shuffle order for epoch 7, say -- without
replaying the draws that preceded it, which is what makes checkpoint resume
bit-exact.
"""

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    """One splitmix64 output step on a 64-bit word."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (x ^ (x >> 31)) & _MASK64


def stream_key(seed: int, *labels) -> tuple[int, int]:
    """Collapse (seed, labels) into two splitmix64-scrambled 64-bit words."""
    text = "|".join([str(int(seed))] + [str(part) for part in labels])
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    lo = int.from_bytes(digest[:8], "little")
    hi = int.from_bytes(digest[8:16], "little")
    return splitmix64(lo), splitmix64(hi)


def stream(seed: int, *labels) -> np.random.Generator:
    """Independent generator for the given purpose, e.g. stream(7, "shuffle", 3)."""
    return np.random.Generator(np.random.Philox(key=stream_key(seed, *labels)))
