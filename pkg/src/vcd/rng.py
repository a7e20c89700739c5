"""SplitMix64 streams and master-seed derivation.

The environment draws respawn columns straight from SplitMix64 so trajectories
are reproducible in any language. Everything else uses numpy generators seeded
with :func:`derive_seed`, one independent substream per purpose.
"""

from __future__ import annotations

import zlib

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15


def splitmix64_mix(z: int) -> int:
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9 & MASK64
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB & MASK64
    return z ^ (z >> 31)


def splitmix64_next(state: int) -> tuple[int, int]:
    """Advance ``state`` once; returns ``(new_state, output)``."""
    state = (state + GOLDEN_GAMMA) & MASK64
    return state, splitmix64_mix(state)


def draw_below(state: int, n: int) -> tuple[int, int]:
    """Integer in ``[0, n)`` as ``output % n``. Bias is below 2**-58 for small n."""
    state, out = splitmix64_next(state)
    return state, out % n


def derive_seed(master: int, stream: str) -> int:
    """64-bit seed for the named substream of ``master``."""
    tag = zlib.crc32(stream.encode("utf-8"))
    return splitmix64_mix((splitmix64_mix(master & MASK64) ^ tag) & MASK64)


def generator(master: int, stream: str) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(derive_seed(master, stream)))
