"""Weight estimation from a (noisy) sketch by intersecting per-level intervals."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace

import numpy as np

from korsketch.errors import ParamsMismatch
from korsketch.params import SketchParams
from korsketch.privacy import NoisySketch, PrivateWeight, merge
from korsketch.sketch import KorSketch


class Status(str, enum.Enum):
    CONFIDENT = "Confident"
    BELOW_THRESHOLD_ZERO = "BelowThresholdZero"


@dataclass(frozen=True)
class LevelCounts:
    z: np.ndarray
    n: int

    def __post_init__(self):
        if np.any(self.z < 0) or np.any(self.z > self.n):
            raise ValueError("level counts must lie in [0, n]")


@dataclass(frozen=True)
class EstimationResult:
    estimate: float
    interval: tuple[float, float]
    status: Status
    level_counts: LevelCounts
    epsilon_eff: float = math.inf
    reason: str = ""

    @property
    def confident(self) -> bool:
        return self.status is Status.CONFIDENT

    def scaled(self, factor: float) -> "EstimationResult":
        lo, hi = self.interval
        return replace(self, estimate=self.estimate * factor, interval=(lo * factor, hi * factor))

    def record(self) -> dict:
        return {
            "estimate": self.estimate,
            "lo": self.interval[0],
            "hi": self.interval[1],
            "status": self.status.value,
            "reason": self.reason,
            "epsilon_eff": self.epsilon_eff,
            "z": [int(v) for v in self.level_counts.z],
        }


def count_ones(sketch) -> LevelCounts:
    """Popcount of every level row."""
    z = np.bitwise_count(sketch.words).sum(axis=1, dtype=np.int64)
    return LevelCounts(z, sketch.params.buckets_per_level)


def level_interval(z_i: int, i: int, params: SketchParams, p_eff: float,
                   gamma: float | None = None) -> tuple[float, float]:
    """Range of weights consistent with level i holding ``z_i`` ones."""
    n = params.buckets_per_level
    u = float(params.universe_size)
    if gamma is None:
        gamma = params.intervals_for(p_eff)[0]
    if z_i >= (1.0 - gamma) * n / 2.0:
        return 0.0, u
    contrast = 1.0 - 2.0 * p_eff
    scale = 2.0 ** i * n
    lo = scale * math.log(contrast / (1.0 - 2.0 * z_i / ((1.0 + gamma) * n)))
    hi = scale * math.log(contrast / (1.0 - 2.0 * z_i / ((1.0 - gamma) * n)))
    return min(max(lo, 0.0), u), min(max(hi, 0.0), u)


def _noise_of(sketch):
    if isinstance(sketch, NoisySketch):
        return sketch.noise.p_eff, sketch.noise.epsilon_eff
    # clean sketches are only estimated in tests
    return 0.0, math.inf


def estimate(sketch, params: SketchParams | None = None) -> EstimationResult:
    """Estimate ||w||_1 of the sketched set, or 0 when the intervals are too wide."""
    params = sketch.params if params is None else params
    if params.digest != sketch.params_digest:
        raise ParamsMismatch("params do not match the sketch")
    p_eff, eps_eff = _noise_of(sketch)
    gamma, eta = params.intervals_for(p_eff)
    counts = count_ones(sketch)
    gammas = params.level_gammas(counts.z, p_eff)
    lo, hi = 0.0, float(params.universe_size)
    for i, z_i in enumerate(counts.z):
        g = gamma if gammas is None else float(gammas[i])
        a, b = level_interval(int(z_i), i, params, p_eff, g)
        lo, hi = max(lo, a), min(hi, b)

    if lo > hi:
        reason = "empty_intersection"
    elif lo <= 0:
        reason = "zero_lower_bound"
    elif hi > (1.0 + eta) * lo:
        reason = "too_wide"
    else:
        return EstimationResult((lo + hi) / 2.0, (lo, hi), Status.CONFIDENT, counts,
                                eps_eff, "confident")
    return EstimationResult(0.0, (lo, hi), Status.BELOW_THRESHOLD_ZERO, counts, eps_eff, reason)


def estimate_symmetric_difference(a: NoisySketch, b: NoisySketch,
                                  params: SketchParams | None = None) -> EstimationResult:
    """Weight of A symmetric-difference B from the two parties' noisy sketches."""
    return estimate(merge(a, b), params)


@dataclass(frozen=True)
class SetAlgebraEstimates:
    """Union, intersection and differences from two set weights and a symmetric difference.

    Values are left unclipped so that union + intersection equals wA + wB
    bit for bit whenever 0 <= symdiff <= 3 (wA + wB), which covers every
    sensible input; beyond that the float rounding of the two halves differs.
    ``negative`` flags records where some quantity came out below zero and
    :meth:`clipped` returns the non-negative version.
    """

    union: float
    intersection: float
    a_minus_b: float
    b_minus_a: float
    negative: bool = False

    def clipped(self) -> "SetAlgebraEstimates":
        return SetAlgebraEstimates(max(self.union, 0.0), max(self.intersection, 0.0),
                                   max(self.a_minus_b, 0.0), max(self.b_minus_a, 0.0),
                                   self.negative)


def _value(x) -> float:
    if isinstance(x, PrivateWeight):
        return x.value
    if isinstance(x, EstimationResult):
        return x.estimate
    return float(x)


def set_algebra(w_a, w_b, symdiff) -> SetAlgebraEstimates:
    wa, wb, d = _value(w_a), _value(w_b), _value(symdiff)
    total = wa + wb
    union = (total + d) / 2.0
    # subtracting from the rounded total keeps union + intersection == wa + wb
    intersection = total - union
    a_minus_b = (wa + d - wb) / 2.0
    b_minus_a = (wb + d - wa) / 2.0
    negative = min(union, intersection, a_minus_b, b_minus_a) < 0
    return SetAlgebraEstimates(union, intersection, a_minus_b, b_minus_a, negative)
