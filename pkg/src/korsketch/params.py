"""Derived constants for one sketch family.

Every party that wants to combine sketches must agree on a
:class:`SketchParams` instance, including the shared 128-bit hash seed.
The binary header written in front of every sketch file is produced here.
"""
from __future__ import annotations

import hashlib
import math
import os
import struct
from dataclasses import dataclass, field
from statistics import NormalDist
from typing import Union

import numpy as np

from korsketch.errors import CorruptHeader, InvalidParams, LengthMismatch, VersionMismatch

MAGIC = b"KOR1"
FORMAT_VERSION = 1
HEADER = struct.Struct("<4sHQHI5d16s")

# constant of the accuracy lemma: gamma < (beta - 1/n)(1 - 2p) / (7 e^3)
C_GAMMA = 7.0 * math.e ** 3
# denominator of the strict sizing inequality: 20 * 4^3 * c_gamma^2 * 108
STRICT_CONSTANT = 20.0 * 4 ** 3 * C_GAMMA ** 2 * 108.0
GAMMA_MARGIN = 0.999

PAPER = "paper"
EMPIRICAL = "empirical"
INTERVAL_POLICIES = (PAPER, EMPIRICAL)


@dataclass(frozen=True)
class Strict:
    """Size n from the worst-case failure bound (astronomically large)."""


@dataclass(frozen=True)
class Practical:
    """n = ceil(c * log2(u) / (beta^2 eps^2))."""

    c: float = 8.0

    def __post_init__(self):
        if not (self.c > 0 and math.isfinite(self.c)):
            raise InvalidParams(f"practical sizing constant must be positive, got {self.c}")


@dataclass(frozen=True)
class Explicit:
    n: int

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 2:
            raise InvalidParams(f"explicit bucket count must be an integer >= 2, got {self.n}")


SizingPolicy = Union[Strict, Practical, Explicit]


def flip_probability(epsilon: float) -> float:
    return 1.0 / (2.0 + epsilon)


def epsilon_for_flip(p: float) -> float:
    """Inverse of :func:`flip_probability`."""
    return 1.0 / p - 2.0


def num_levels(u: int) -> int:
    """ceil(log2 u), computed exactly on integers."""
    return (u - 1).bit_length()


def paper_gamma(beta: float, n: int, p: float) -> float:
    """0.999 times the strict upper bound on gamma required by the accuracy analysis."""
    contrast = 1.0 - 2.0 * p
    accuracy_cap = (beta - 1.0 / n) * contrast / C_GAMMA
    interval_cap = 1.0 / (2.0 * math.e ** 3 / contrast - 1.0)
    return GAMMA_MARGIN * min(accuracy_cap, interval_cap, 1.0)


def paper_eta(gamma: float, p: float) -> float:
    """Interval-width threshold eta = 6g(a-1) / ((1-g) - 2g(a-1)) with a = e^3/(1-2p)."""
    a = math.e ** 3 / (1.0 - 2.0 * p) - 1.0
    denominator = (1.0 - gamma) - 2.0 * gamma * a
    if denominator <= 0:
        raise InvalidParams("eta denominator is not positive; gamma is too large")
    return 6.0 * gamma * a / denominator


def concentration_z(failure_prob: float, levels: int) -> float:
    """Two-sided normal quantile after a union bound over all levels."""
    if not 0 < failure_prob < 1:
        raise InvalidParams(f"failure probability must lie in (0, 1), got {failure_prob}")
    return NormalDist().inv_cdf(1.0 - failure_prob / (2.0 * levels))


def _relative_spread(n: int, p: float) -> float:
    # sd(Z)/E[Z] is largest on a noise-only level, where Z ~ Binomial(n, p)
    return math.sqrt((1.0 - p) / (p * n))


def empirical_gamma(n: int, p: float, z: float) -> float:
    """Concentration slack covering every level's Z with z standard deviations."""
    return z * _relative_spread(n, p)


def empirical_eta(beta: float, n: int) -> float:
    """Largest eta whose interval midpoint stays within (1 + beta) of the true weight.

    The midpoint of [lo, hi] with hi <= (1+eta) lo is within eta/2 of every point
    of the interval, and the log-product surrogate overestimates by at most 1/n.
    """
    return 2.0 * ((1.0 + beta) / (1.0 + 1.0 / n) - 1.0)


def strict_condition(n: int, u: int, epsilon: float, beta: float) -> bool:
    """exp(-(beta - 1/n)^2 eps^2 n / STRICT_CONSTANT) < 1/u^2, in log form."""
    if beta * n <= 1:
        return False
    exponent = (beta - 1.0 / n) ** 2 * epsilon ** 2 * n / STRICT_CONSTANT
    return exponent > 2.0 * math.log(u)


def strict_n(u: int, epsilon: float, beta: float) -> int:
    """Smallest n meeting the worst-case sizing inequality.

    The exponent (beta - 1/n)^2 n grows with n once n > 1/beta, so an
    exponential search followed by bisection finds the threshold.
    """
    _check_inputs(u, epsilon, beta)
    lo = max(1, math.floor(1.0 / beta))
    hi = max(2, lo * 2)
    while not strict_condition(hi, u, epsilon, beta):
        lo = hi
        hi *= 2
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if strict_condition(mid, u, epsilon, beta):
            hi = mid
        else:
            lo = mid
    return hi


def practical_n(u: int, epsilon: float, beta: float, c: float) -> int:
    return max(2, math.ceil(c * math.log2(u) / (beta ** 2 * epsilon ** 2)))


def _check_inputs(u, epsilon, beta):
    if int(u) != u or u < 2:
        raise InvalidParams(f"universe size must be an integer >= 2, got {u}")
    if not (epsilon > 0 and math.isfinite(epsilon)):
        raise InvalidParams(f"epsilon must be a positive finite number, got {epsilon}")
    if not 0 < beta < 1:
        raise InvalidParams(f"beta must lie in (0, 1), got {beta}")


def make_seed(seed=None) -> bytes:
    """Normalise a seed given as bytes, a hex string or an int; None draws a fresh one."""
    if seed is None:
        return os.urandom(16)
    if isinstance(seed, (bytes, bytearray)):
        if len(seed) != 16:
            raise InvalidParams(f"seed must be 16 bytes, got {len(seed)}")
        return bytes(seed)
    if isinstance(seed, str):
        text = seed.strip().lower()
        if text.startswith("0x"):
            text = text[2:]
        try:
            raw = bytes.fromhex(text)
        except ValueError:
            raise InvalidParams(f"seed is not valid hex: {seed!r}") from None
        return make_seed(raw)
    if isinstance(seed, int):
        if not 0 <= seed < 1 << 128:
            raise InvalidParams("integer seed must fit in 128 bits")
        return seed.to_bytes(16, "little")
    raise InvalidParams(f"unsupported seed type {type(seed).__name__}")


@dataclass(frozen=True)
class SketchParams:
    universe_size: int
    num_levels: int
    buckets_per_level: int
    epsilon: float
    beta: float
    flip_prob: float
    gamma: float
    eta: float
    seed: bytes = field(repr=False)

    @property
    def sketch_bits(self) -> int:
        return self.buckets_per_level * self.num_levels

    @property
    def interval_policy(self) -> str:
        """Which gamma/eta rule produced this family.

        Not stored explicitly in the header: the paper rule is recognised by
        recomputing its closed form, anything else is the empirical rule.
        """
        if self.gamma == paper_gamma(self.beta, self.buckets_per_level, self.flip_prob):
            return PAPER
        return EMPIRICAL

    @property
    def concentration_z(self) -> float:
        """Number of standard deviations the empirical gamma covers."""
        return self.gamma / _relative_spread(self.buckets_per_level, self.flip_prob)

    def level_gammas(self, counts, p: float):
        """Per-level slack for the empirical rule, from each level's observed count.

        A level holding Z ones has relative spread about sqrt((n - Z)/(n Z));
        levels carrying signal are therefore tighter than noise-only ones.
        Returns None under the paper rule, which uses one gamma for all levels.
        """
        if self.interval_policy == PAPER:
            return None
        n = self.buckets_per_level
        z = np.maximum(np.asarray(counts, dtype=np.float64), 1.0)
        spread = np.sqrt(np.maximum(n - z, 0.0) / (n * z))
        return np.minimum(self.concentration_z * spread, GAMMA_MARGIN)

    def intervals_for(self, p: float) -> tuple[float, float]:
        """(gamma, eta) to use for a sketch whose bits flip with probability p."""
        if p <= 0 or p == self.flip_prob:
            return self.gamma, self.eta
        n = self.buckets_per_level
        if self.interval_policy == PAPER:
            gamma = paper_gamma(self.beta, n, p)
            return gamma, paper_eta(gamma, p)
        return min(empirical_gamma(n, p, self.concentration_z), GAMMA_MARGIN), self.eta

    def to_header(self) -> bytes:
        if self.buckets_per_level >= 1 << 32:
            raise InvalidParams(
                f"n={self.buckets_per_level} does not fit the 32-bit header field")
        return HEADER.pack(
            MAGIC, FORMAT_VERSION, self.universe_size, self.num_levels,
            self.buckets_per_level, self.epsilon, self.beta, self.flip_prob,
            self.gamma, self.eta, self.seed)

    @classmethod
    def from_header(cls, data: bytes) -> "SketchParams":
        if len(data) < HEADER.size:
            if not data[:4] == MAGIC[: len(data[:4])]:
                raise CorruptHeader("bad magic")
            raise LengthMismatch(f"header needs {HEADER.size} bytes, got {len(data)}")
        magic, version, u, levels, n, eps, beta, p, gamma, eta, seed = HEADER.unpack_from(data)
        if magic != MAGIC:
            raise CorruptHeader(f"bad magic {magic!r}")
        if version != FORMAT_VERSION:
            raise VersionMismatch(f"unsupported format version {version}")
        if u < 2 or levels != num_levels(u) or n < 2:
            raise CorruptHeader("inconsistent universe/level/bucket fields")
        if not all(math.isfinite(x) for x in (eps, beta, p, gamma, eta)):
            raise CorruptHeader("non-finite parameter in header")
        return cls(u, levels, n, eps, beta, p, gamma, eta, seed)

    @property
    def digest(self) -> bytes:
        return hashlib.sha256(self.to_header()).digest()

    def describe(self) -> dict:
        return {
            "universe_size": self.universe_size,
            "num_levels": self.num_levels,
            "buckets_per_level": self.buckets_per_level,
            "sketch_bits": self.sketch_bits,
            "epsilon": self.epsilon,
            "beta": self.beta,
            "flip_prob": self.flip_prob,
            "gamma": self.gamma,
            "eta": self.eta,
            "intervals": self.interval_policy,
            "seed": self.seed.hex(),
        }


def derive_params(
    u: int,
    epsilon: float,
    beta: float,
    sizing: SizingPolicy | None = None,
    seed=None,
    intervals: str = EMPIRICAL,
    failure_prob: float = 0.002,
) -> SketchParams:
    """Build a validated :class:`SketchParams`.

    ``intervals="paper"`` uses the worst-case gamma/eta closed forms;
    they are only non-vacuous for astronomically large n.  The default
    ``"empirical"`` rule sets gamma so that every level's count stays inside
    its (1 +/- gamma) band with probability about ``1 - failure_prob``, and
    eta so that an accepted interval midpoint is a (1 + beta)-approximation.
    """
    _check_inputs(u, epsilon, beta)
    if intervals not in INTERVAL_POLICIES:
        raise InvalidParams(f"unknown interval policy {intervals!r}")
    sizing = Practical() if sizing is None else sizing
    if isinstance(sizing, Strict):
        n = strict_n(u, epsilon, beta)
    elif isinstance(sizing, Practical):
        n = practical_n(u, epsilon, beta, sizing.c)
    elif isinstance(sizing, Explicit):
        n = int(sizing.n)
    else:
        raise InvalidParams(f"unknown sizing policy {sizing!r}")
    if beta <= 1.0 / n:
        raise InvalidParams(f"beta={beta} must exceed 1/n={1.0 / n}")

    levels = num_levels(u)
    p = flip_probability(epsilon)
    if not 1.0 / (math.exp(epsilon) + 1.0) < p < 0.5:
        raise InvalidParams(f"flip probability {p} violates the privacy precondition")

    if intervals == PAPER:
        gamma = paper_gamma(beta, n, p)
        eta = paper_eta(gamma, p)
    else:
        gamma = empirical_gamma(n, p, concentration_z(failure_prob, levels))
        eta = empirical_eta(beta, n)
        if gamma >= 1.0:
            raise InvalidParams(
                f"n={n} is too small for empirical intervals (gamma={gamma:.3g} >= 1)")
    if not (0 < gamma < 1 and eta > 0 and math.isfinite(eta)):
        raise InvalidParams(f"derived gamma={gamma}, eta={eta} out of range")
    return SketchParams(u, levels, n, float(epsilon), float(beta), p, gamma, eta, make_seed(seed))
