"""Named random streams derived from one master seed.

Every random draw in the package comes from ``stream(seed, *keys)``. Keys are
ints or strings; strings are hashed with CRC32 so derivation is stable across
processes and Python versions. Work is split into fixed-size chunks whose
streams depend only on the chunk index, never on how many threads run them.
"""

import zlib

import numpy as np


def _key(k):
    if isinstance(k, str):
        return zlib.crc32(k.encode("utf-8"))
    k = int(k)
    if k < 0:
        raise ValueError("stream keys must be non-negative")
    return k


def stream(seed, *keys):
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(_key(k) for k in keys))
    return np.random.Generator(np.random.PCG64(ss))


def child_seed(rng):
    """Draw a 63-bit seed from ``rng`` for use as a sub-stream entropy source."""
    return int(rng.integers(0, 2**63 - 1))


def chunk_sizes(total, chunk):
    """Split ``total`` items into consecutive chunks of at most ``chunk``."""
    if total <= 0:
        return []
    n_full, rest = divmod(total, chunk)
    return [chunk] * n_full + ([rest] if rest else [])
