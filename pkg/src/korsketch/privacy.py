"""Randomized-response noise, noise composition and Laplace-noised set weights."""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from itertools import product

import numpy as np

from korsketch.errors import DegenerateNoise, ParamsMismatch, PrivacyPreconditionViolated
from korsketch.params import SketchParams, epsilon_for_flip, flip_probability
from korsketch.sketch import KorSketch, pack_rows


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


@dataclass(frozen=True)
class NoiseState:
    """Per-bit flip probability carried by a noisy sketch.

    ``merge_count`` is 0 for a freshly noised sketch and grows by one per
    merge.  For more than one merge the composed epsilon follows from the
    flip-probability recursion but has no separate accuracy proof.
    """

    p_eff: float
    epsilon_eff: float
    merge_count: int = 0

    @classmethod
    def from_flip(cls, p: float, merge_count: int = 0) -> "NoiseState":
        eps = epsilon_for_flip(p) if p > 0 else math.inf
        return cls(p, eps, merge_count)


class NoisySketch:
    """Bits of H x + phi together with the noise that produced them."""

    def __init__(self, params: SketchParams, words: np.ndarray, noise: NoiseState):
        self.params = params
        self.params_digest = params.digest
        self.words = words
        self.noise = noise

    def bits(self) -> np.ndarray:
        return KorSketch(self.params, self.words).bits()

    def __eq__(self, other):
        if not isinstance(other, NoisySketch):
            return NotImplemented
        return (self.params_digest == other.params_digest and self.noise == other.noise
                and np.array_equal(self.words, other.words))

    def __repr__(self):
        return (f"NoisySketch(L={self.params.num_levels}, n={self.params.buckets_per_level}, "
                f"p_eff={self.noise.p_eff:.6g}, merges={self.noise.merge_count})")


def flip_mask(params: SketchParams, p: float, rng) -> np.ndarray:
    """Packed Bernoulli(p) bits, one per sketch cell."""
    rng = as_generator(rng)
    flips = rng.random((params.num_levels, params.buckets_per_level)) < p
    return pack_rows(flips)


def randomize(sketch: KorSketch, params: SketchParams | None = None, rng=None,
              epsilon: float | None = None, p: float | None = None) -> NoisySketch:
    """XOR every bit with an independent Bernoulli(p) bit.

    p defaults to 1/(2 + eps), with eps taken from ``epsilon`` or the params.
    It must satisfy 1/(e^eps + 1) < p < 1/2; the harness-only ``p=0`` path
    returns the clean bits unchanged.
    """
    params = sketch.params if params is None else params
    if params.digest != sketch.params_digest:
        raise ParamsMismatch("params do not match the sketch")
    epsilon = params.epsilon if epsilon is None else epsilon
    if p is None:
        p = flip_probability(epsilon)
    if p == 0:
        return NoisySketch(params, sketch.words.copy(), NoiseState(0.0, math.inf, 0))
    if not 1.0 / (math.exp(epsilon) + 1.0) < p < 0.5:
        raise PrivacyPreconditionViolated(
            f"flip probability {p} is outside (1/(e^eps+1), 1/2) for eps={epsilon}")
    words = sketch.words ^ flip_mask(params, p, rng)
    return NoisySketch(params, words, NoiseState.from_flip(p))


def composed_flip(p_a: float, p_b: float) -> float:
    """Flip probability of the XOR of two independent Bernoulli noises."""
    return p_a * (1.0 - p_b) + p_b * (1.0 - p_a)


def merged_epsilon(epsilon: float) -> float:
    """eps' = eps^2 / (2 + 2 eps), the effective privacy of two merged sketches."""
    return epsilon ** 2 / (2.0 + 2.0 * epsilon)


def merge(a: NoisySketch, b: NoisySketch) -> NoisySketch:
    """Noisy sketch of the symmetric difference of the two inputs."""
    if a.params_digest != b.params_digest:
        raise ParamsMismatch("sketches belong to different parameter families")
    p = composed_flip(a.noise.p_eff, b.noise.p_eff)
    if not p < 0.5:
        raise DegenerateNoise(f"composed flip probability {p} is not below 1/2")
    merges = a.noise.merge_count + b.noise.merge_count + 1
    return NoisySketch(a.params, a.words ^ b.words, NoiseState.from_flip(p, merges))


@dataclass(frozen=True)
class PrivateWeight:
    value: float
    epsilon: float
    sensitivity: float

    @property
    def scale(self) -> float:
        return self.sensitivity / self.epsilon


def laplace_noise(scale: float, rng) -> float:
    """Inverse-CDF Laplace draw from a 53-bit uniform strictly inside (0, 1)."""
    rng = as_generator(rng)
    k = int(rng.integers(0, 1 << 53, dtype=np.uint64))
    u = (k + 0.5) / float(1 << 53) - 0.5
    return -scale * math.copysign(1.0, u) * math.log1p(-2.0 * abs(u))


def laplace_weight(total: float, epsilon: float, sensitivity: float = 1.0,
                   rng=None) -> PrivateWeight:
    """Release ||w_A||_1 with Laplace(sensitivity / epsilon) noise.

    The floating-point draw is not hardened against least-significant-bit
    attacks; this is a research implementation.
    """
    if total < 0:
        raise ValueError("total weight must be non-negative")
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    if not 0 < sensitivity <= 1:
        raise ValueError("sensitivity must lie in (0, 1]")
    value = total + laplace_noise(sensitivity / epsilon, rng)
    return PrivateWeight(value, epsilon, sensitivity)


def verify_privacy_exhaustive(n_small: int, p, neighbor_bit: int = 0):
    """Maximum outcome-probability ratio for two neighbouring single-level sketches.

    The clean sketches are the all-zero row and the row with one bit set.
    Every one of the 2^n outcomes is enumerated and its probability under
    both inputs computed exactly; the ratio should equal (1 - p)/p.
    Returns a :class:`Fraction` when ``p`` is rational input, else a float.
    """
    if not 1 <= n_small <= 16:
        raise ValueError("n_small must lie in 1..16")
    exact = isinstance(p, (Fraction, int))
    p = Fraction(p) if exact else float(p)
    if not 0 < p < 0.5:
        raise ValueError("p must lie in (0, 1/2)")
    q = 1 - p
    clean_a = (0,) * n_small
    clean_b = tuple(int(k == neighbor_bit) for k in range(n_small))

    def prob(outcome, clean):
        flips = sum(o != c for o, c in zip(outcome, clean))
        return p ** flips * q ** (n_small - flips)

    best = 0
    for outcome in product((0, 1), repeat=n_small):
        pa, pb = prob(outcome, clean_a), prob(outcome, clean_b)
        best = max(best, pa / pb, pb / pa)
    return best
