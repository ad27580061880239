"""Seeded hash oracle: bucket hash and weighted level subsampling.

Both hashes are SipHash-2-4 evaluated on the 8-byte little-endian element
id, under two keys derived from the shared seed with distinct domain tags.
Everything is vectorised over numpy uint64 arrays; wrap-around arithmetic
is the intended behaviour.
"""
from __future__ import annotations

import hashlib
from fractions import Fraction

import numpy as np

from korsketch.errors import InvalidWeight

_U64 = np.uint64
_TWO64 = 1 << 64


def _rotl(x, b):
    return (x << _U64(b)) | (x >> _U64(64 - b))


def _sipround(v0, v1, v2, v3):
    v0 += v1
    v1 = _rotl(v1, 13)
    v1 ^= v0
    v0 = _rotl(v0, 32)
    v2 += v3
    v3 = _rotl(v3, 16)
    v3 ^= v2
    v0 += v3
    v3 = _rotl(v3, 21)
    v3 ^= v0
    v2 += v1
    v1 = _rotl(v1, 17)
    v1 ^= v2
    v2 = _rotl(v2, 32)
    return v0, v1, v2, v3


def siphash24(key: bytes, messages) -> np.ndarray:
    """SipHash-2-4 of each uint64 in ``messages`` (as an 8-byte LE string)."""
    k0 = _U64(int.from_bytes(key[:8], "little"))
    k1 = _U64(int.from_bytes(key[8:16], "little"))
    m = np.asarray(messages, dtype=np.uint64)
    with np.errstate(over="ignore"):
        v0 = np.full(m.shape, k0 ^ _U64(0x736F6D6570736575), dtype=np.uint64)
        v1 = np.full(m.shape, k1 ^ _U64(0x646F72616E646F6D), dtype=np.uint64)
        v2 = np.full(m.shape, k0 ^ _U64(0x6C7967656E657261), dtype=np.uint64)
        v3 = np.full(m.shape, k1 ^ _U64(0x7465646279746573), dtype=np.uint64)
        v3 ^= m
        for _ in range(2):
            v0, v1, v2, v3 = _sipround(v0, v1, v2, v3)
        v0 ^= m
        tail = _U64(8 << 56)
        v3 ^= tail
        for _ in range(2):
            v0, v1, v2, v3 = _sipround(v0, v1, v2, v3)
        v0 ^= tail
        v2 ^= _U64(0xFF)
        for _ in range(4):
            v0, v1, v2, v3 = _sipround(v0, v1, v2, v3)
        return v0 ^ v1 ^ v2 ^ v3


def _subkey(seed: bytes, tag: bytes) -> bytes:
    return hashlib.blake2b(tag, key=seed, digest_size=16).digest()


def level_of(s, w, num_levels: int):
    """Level i with s in (w/2^(i+1), w/2^i], or None.

    Exact for any real ``s`` and ``w`` representable as :class:`Fraction`.
    """
    s = Fraction(s)
    w = Fraction(w)
    if s > w:
        return None
    for i in range(num_levels):
        if s > w / 2 ** (i + 1):
            return i
    return None


def sampling_probability(i: int, w: float) -> float:
    """Probability w/2^(i+1) that an element of weight w lands on level i."""
    return w / 2.0 ** (i + 1)


def check_weights(weights: np.ndarray) -> None:
    bad = ~((weights > 0) & (weights <= 1))
    if np.any(bad):
        raise InvalidWeight(f"weight {weights[bad][0]!r} is outside (0, 1]")


def levels_from_hash(k: np.ndarray, weights: np.ndarray, num_levels: int) -> np.ndarray:
    """Vectorised level assignment for hash outputs ``k`` (s = (k+1)/2^64).

    With T_m = floor(w 2^(64-m)), s lies in level i exactly when
    T_(i+1) <= k < T_i, so the level is the number of m in 1..L with
    T_m > k.  Returns -1 for elements that are not sampled.
    """
    k = np.asarray(k, dtype=np.uint64)
    w = np.broadcast_to(np.asarray(weights, dtype=np.float64), k.shape)
    counts = np.zeros(k.shape, dtype=np.int64)
    for m in range(1, num_levels + 1):
        threshold = np.floor(np.ldexp(w, 64 - m)).astype(np.uint64)
        counts += threshold > k
    # T_0 = w 2^64 only overflows for w == 1, where every element is sampled
    below_w = w == 1.0
    partial = ~below_w
    if np.any(partial):
        t0 = np.floor(np.ldexp(w[partial], 64)).astype(np.uint64)
        below_w = below_w.copy()
        below_w[partial] = k[partial] < t0
    return np.where(below_w & (counts < num_levels), counts, -1)


class HashOracle:
    """Deterministic stand-in for the random bucket hash h and subsampling hash s."""

    def __init__(self, seed: bytes, n: int, num_levels: int):
        self.seed = bytes(seed)
        self.n = int(n)
        self.num_levels = int(num_levels)
        self._bucket_key = _subkey(self.seed, b"bucket")
        self._level_key = _subkey(self.seed, b"level")

    @classmethod
    def for_params(cls, params) -> "HashOracle":
        return cls(params.seed, params.buckets_per_level, params.num_levels)

    def bucket_hash(self, ids) -> np.ndarray:
        """0-based bucket for each id."""
        return siphash24(self._bucket_key, ids) % _U64(self.n)

    def level_hash(self, ids) -> np.ndarray:
        return siphash24(self._level_key, ids)

    def unit_value(self, j: int) -> Fraction:
        """s(j) as the exact fraction (k + 1) / 2^64."""
        k = int(self.level_hash(np.array([j], dtype=np.uint64))[0])
        return Fraction(k + 1, _TWO64)

    def bucket(self, j: int) -> int:
        """Bucket of element j in 1..n."""
        return int(self.bucket_hash(np.array([j], dtype=np.uint64))[0]) + 1

    def level(self, j: int, w: float):
        if not 0 < w <= 1:
            raise InvalidWeight(f"weight {w!r} is outside (0, 1]")
        k = self.level_hash(np.array([j], dtype=np.uint64))
        i = int(levels_from_hash(k, np.array([w]), self.num_levels)[0])
        return None if i < 0 else i

    def locate(self, ids, weights) -> tuple[np.ndarray, np.ndarray]:
        """(level, 0-based bucket) arrays; level is -1 where the element is unsampled."""
        ids = np.asarray(ids, dtype=np.uint64)
        weights = np.asarray(weights, dtype=np.float64)
        levels = levels_from_hash(self.level_hash(ids), weights, self.num_levels)
        return levels, self.bucket_hash(ids)
