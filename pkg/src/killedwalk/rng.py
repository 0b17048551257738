"""Counter-based random streams.

A stream is identified by a 64-bit key derived from ``(seed, replicate
index)``.  The ``j``-th draw of a stream is ``mix64(key ^ mix64((j+1)*G))``,
a pure function of ``(key, j)``: no state is shared between paths, so results
never depend on how replicates are scheduled across workers.

Per-step hazard uniforms live in a further substream keyed by the segment
index, so the uniform for ``(segment k, age i)`` is fixed no matter whether,
or how often, it is looked at.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_SEED_SALT = np.uint64(0x5EED5A17C0FFEE01)
_SEGMENT_SALT = np.uint64(0xA5E9B3C1D2F40719)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_ONE = np.uint64(1)
_TWO_M53 = 1.0 / 9007199254740992.0

MASK64 = (1 << 64) - 1


@njit(cache=True)
def mix64(z):
    """SplitMix64 finalizer: a bijection on uint64 with full avalanche."""
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@njit(cache=True)
def stream_key(seed, index):
    s = mix64(np.uint64(seed) ^ _SEED_SALT)
    return mix64(s ^ mix64((np.uint64(index) + _ONE) * GOLDEN))


@njit(cache=True)
def segment_key(key, k):
    return mix64(key ^ _SEGMENT_SALT ^ mix64((np.uint64(k) + _ONE) * GOLDEN))


@njit(cache=True)
def draw_u64(key, counter):
    return mix64(key ^ mix64((np.uint64(counter) + _ONE) * GOLDEN))


@njit(cache=True)
def to_unit(u):
    """Map 64 random bits to a double in the open interval (0, 1)."""
    return (np.float64(u >> _S11) + 0.5) * _TWO_M53


@njit(cache=True)
def draw_uniform(key, counter):
    return to_unit(draw_u64(key, counter))


@dataclass
class RandomStream:
    """Handle on one counter-based stream.

    ``counter`` is the index of the next draw; operations that consume the
    stream advance it.  Two streams with equal ``key`` and ``counter`` produce
    identical futures.
    """

    key: int
    counter: int = 0

    @classmethod
    def for_replicate(cls, seed: int, index: int) -> "RandomStream":
        return cls(int(stream_key(np.uint64(seed & MASK64), np.uint64(index))))

    def next_u64(self) -> int:
        out = int(draw_u64(np.uint64(self.key), np.uint64(self.counter)))
        self.counter += 1
        return out

    def uniform(self) -> float:
        out = float(draw_uniform(np.uint64(self.key), np.uint64(self.counter)))
        self.counter += 1
        return out

    def segment(self, k: int) -> "RandomStream":
        """Substream holding the per-step uniforms of segment ``k``."""
        return RandomStream(int(segment_key(np.uint64(self.key), np.uint64(k))))

    def uniform_at(self, i: int) -> float:
        """The ``i``-th uniform of this stream, without moving the counter."""
        return float(draw_uniform(np.uint64(self.key), np.uint64(i)))
