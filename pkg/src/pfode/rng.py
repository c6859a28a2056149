"""Seed-derived random streams.

Every Monte Carlo draw in the package comes from a stream keyed by
``(seed, tag, *extra, block)``.  Samples are grouped into fixed-size
blocks, so the value of sample ``i`` depends only on the seed, the tag
and ``i``; never on how many threads drew the other blocks.
"""
import numpy as np

BLOCK = 4096

# stream tags, one per consumer
SAMPLER = 1
DATA = 2
SCORE_ERROR = 3
THEORY = 4
PROBES = 5
POSTERIOR = 6


def stream(seed, *key):
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


def blocks(n, block=BLOCK):
    """Yield ``(block_index, start, stop)`` covering ``range(n)``."""
    for b, start in enumerate(range(0, n, block)):
        yield b, start, min(start + block, n)


def standard_normal(seed, key, n, d):
    """``(n, d)`` standard normals; row ``i`` is fixed by ``(seed, key, i)``."""
    out = np.empty((n, d))
    for b, lo, hi in blocks(n):
        out[lo:hi] = stream(seed, *key, b).standard_normal((hi - lo, d))
    return out
