import math
from fractions import Fraction

import numpy as np
import pytest

from korsketch.errors import DegenerateNoise, ParamsMismatch, PrivacyPreconditionViolated
from korsketch.params import Explicit, derive_params
from korsketch.privacy import (
    NoiseState,
    NoisySketch,
    composed_flip,
    laplace_weight,
    merge,
    merged_epsilon,
    randomize,
    verify_privacy_exhaustive,
)
from korsketch.sketch import KorSketch, WeightTable, build

PARAMS = derive_params(2**20, 1.0, 0.25, Explicit(50_000), seed=b"privacy-tests-01")


def test_exhaustive_ratio_exact():
    assert verify_privacy_exhaustive(8, Fraction(1, 3)) == 2
    assert verify_privacy_exhaustive(8, Fraction(1, 4)) == 3
    assert verify_privacy_exhaustive(6, Fraction(1, 3), neighbor_bit=5) == 2
    ratio = verify_privacy_exhaustive(8, 0.5 - 1e-9)
    assert ratio == pytest.approx(1.0, abs=1e-7)


@pytest.mark.parametrize("eps", [0.5, 1.0, 2.0])
def test_exhaustive_ratio_within_budget(eps):
    p = Fraction(1) / (2 + Fraction(eps))
    ratio = verify_privacy_exhaustive(8, p)
    assert ratio == 1 + Fraction(eps)
    assert float(ratio) <= math.exp(eps)


def test_zero_noise_bypass_keeps_bits():
    clean = build(range(1, 1000), WeightTable.unweighted(), PARAMS)
    noisy = randomize(clean, p=0)
    assert np.array_equal(noisy.words, clean.words)
    assert noisy.noise.epsilon_eff == math.inf


def test_flip_rate_at_unit_epsilon():
    noisy = randomize(KorSketch.zeros(PARAMS), rng=123)
    bits = noisy.bits()
    assert bits.size == 10**6
    p = 1 / 3
    assert abs(bits.mean() - p) < 4 * math.sqrt(p * (1 - p) / bits.size)
    assert noisy.noise.p_eff == pytest.approx(p)


def test_precondition_enforced():
    clean = KorSketch.zeros(PARAMS)
    with pytest.raises(PrivacyPreconditionViolated):
        randomize(clean, p=0.2)  # below 1/(e+1)
    with pytest.raises(PrivacyPreconditionViolated):
        randomize(clean, p=0.5)
    other = derive_params(2**20, 1.0, 0.25, Explicit(50_000), seed=b"privacy-tests-02")
    with pytest.raises(ParamsMismatch):
        randomize(clean, params=other)


def test_merge_at_unit_epsilon():
    zero = KorSketch.zeros(PARAMS)
    a, b = randomize(zero, rng=1), randomize(zero, rng=2)
    m = merge(a, b)
    assert m.noise.p_eff == pytest.approx(4 / 9, abs=1e-15)
    assert m.noise.epsilon_eff == pytest.approx(0.25, abs=1e-12)
    assert merged_epsilon(1.0) == 0.25
    assert m.noise.merge_count == 1
    bits = m.bits()
    q = 4 / 9
    assert abs(bits.mean() - q) < 4 * math.sqrt(q * (1 - q) / bits.size)


def test_merge_with_clean_stub_keeps_noise():
    zero = KorSketch.zeros(PARAMS)
    a = randomize(zero, rng=1)
    assert merge(a, randomize(zero, p=0)).noise.p_eff == a.noise.p_eff


@pytest.mark.parametrize("eps", [0.5, 1.0, 2.0])
def test_composed_flip_identity(eps):
    p = 1 / (2 + eps)
    assert abs(1 / (2 + merged_epsilon(eps)) - composed_flip(p, p)) < 1e-12


def test_repeated_merges_multiply_contrast():
    p = 1 / 3
    q = p
    for k in range(2, 6):
        q = composed_flip(q, p)
        assert 1 - 2 * q == pytest.approx((1 - 2 * p) ** k)


def test_merge_errors():
    zero = KorSketch.zeros(PARAMS)
    other = derive_params(2**20, 1.0, 0.25, Explicit(50_000), seed=b"privacy-tests-02")
    with pytest.raises(ParamsMismatch):
        merge(randomize(zero, rng=1), randomize(KorSketch.zeros(other), rng=1))
    almost_fair = NoiseState(0.5 - 1e-10, 1e-9)
    near = NoisySketch(PARAMS, zero.words.copy(), almost_fair)
    with pytest.raises(DegenerateNoise):
        merge(near, near)


def test_laplace_scale_and_symmetry():
    rng = np.random.default_rng(9)
    draws = np.array([laplace_weight(0.0, 1.0, 1.0, rng).value for _ in range(10**5)])
    assert abs(np.mean(np.abs(draws)) - 1.0) < 0.05
    positives = int(np.sum(draws > 0))
    assert abs(positives - 5 * 10**4) < 4 * math.sqrt(10**5 / 4)
    released = laplace_weight(10.0, 2.0, 0.5, rng)
    assert released.scale == 0.25 and released.sensitivity == 0.5


def test_laplace_rejects_bad_input():
    with pytest.raises(ValueError):
        laplace_weight(-1.0, 1.0)
    with pytest.raises(ValueError):
        laplace_weight(1.0, 0.0)
    with pytest.raises(ValueError):
        laplace_weight(1.0, 1.0, sensitivity=2.0)
