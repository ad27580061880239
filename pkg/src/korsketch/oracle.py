"""Closed-form and brute-force references for calibration and tests.

Nothing here is on the estimation hot path.  The Monte Carlo routines
draw the bucket and subsampling functions as fresh uniform randomness,
which is the fully random model the expectation formulas are stated in.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from korsketch.errors import CalibrationFailed, InvalidWeight
from korsketch.params import Explicit, SketchParams, derive_params, practical_n
from korsketch.privacy import as_generator, randomize
from korsketch.sketch import WeightTable, build


@dataclass(frozen=True)
class ExactStats:
    expected_Z: np.ndarray
    expected_L: np.ndarray
    w_hat: np.ndarray
    exact_weight: float


def _weights_of(elements, weights) -> np.ndarray:
    ids = np.asarray(list(elements) if not isinstance(elements, np.ndarray) else elements)
    if isinstance(weights, WeightTable):
        w = weights.lookup(ids.astype(np.uint64)) if ids.size else np.zeros(0)
    else:
        w = np.asarray(weights, dtype=np.float64)
    if np.any((w <= 0) | (w > 1)):
        raise InvalidWeight("weights must lie in (0, 1]")
    return w


def log_survival(w: np.ndarray, i: int, n: int) -> float:
    """log prod_j (1 - w_j / (2^i n)), summed in log space."""
    return float(np.sum(np.log1p(-w / (2.0 ** i * n))))


def exact_expected_ones(elements, weights, params: SketchParams, p: float) -> ExactStats:
    """Expected clean and noisy ones per level, and the log-product surrogate w_hat."""
    w = _weights_of(elements, weights)
    n = params.buckets_per_level
    logs = np.array([log_survival(w, i, n) for i in range(params.num_levels)])
    survive = np.exp(logs)
    expected_L = n / 2.0 * -np.expm1(logs)
    expected_Z = n / 2.0 * (1.0 - (1.0 - 2.0 * p) * survive)
    scales = 2.0 ** np.arange(params.num_levels) * n
    w_hat = scales * -logs
    return ExactStats(expected_Z, expected_L, w_hat, float(w.sum()))


@dataclass(frozen=True)
class MonteCarloZ:
    mean: np.ndarray
    var: np.ndarray
    trials: int
    inside_band: float | None = None


def _model_clean_counts(w, num_levels, n, trials, rng, chunk):
    """Clean ones per level under fully random h and s, shape (trials, L)."""
    m = len(w)
    out = np.zeros((trials, num_levels), dtype=np.int64)
    if m == 0:
        return out
    cells = num_levels * n
    for start in range(0, trials, chunk):
        t = min(chunk, trials - start)
        s = 1.0 - rng.random((t, m))
        with np.errstate(divide="ignore"):
            level = np.floor(np.log2(w / s))
        sampled = (s <= w) & (level < num_levels)
        bucket = rng.integers(0, n, size=(t, m))
        rows = np.broadcast_to(np.arange(t)[:, None], (t, m))
        flat = rows[sampled] * cells + level[sampled].astype(np.int64) * n + bucket[sampled]
        parity = np.bincount(flat, minlength=t * cells) & 1
        out[start:start + t] = parity.reshape(t, num_levels, n).sum(axis=2)
    return out


def monte_carlo_Z(elements, weights, params: SketchParams, p: float, trials: int,
                  rng=None, backend: str = "model", gamma: float | None = None,
                  chunk: int = 1024) -> MonteCarloZ:
    """Empirical mean and variance of Z_i over independent hash and noise draws.

    ``backend="model"`` samples h, s and the noise count directly (fast);
    ``backend="sketch"`` builds and randomizes real sketches with a fresh
    seed per trial.  With ``gamma`` given, also reports the fraction of
    trials in which every level satisfied (1-g)E[Z] < Z < (1+g)E[Z].
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = as_generator(rng)
    w = _weights_of(elements, weights)
    n, levels = params.buckets_per_level, params.num_levels
    if backend == "model":
        clean = _model_clean_counts(w, levels, n, trials, rng, chunk)
        z = rng.binomial(clean, 1.0 - p) + rng.binomial(n - clean, p)
    elif backend == "sketch":
        ids = np.asarray(elements, dtype=np.uint64)
        table = weights if isinstance(weights, WeightTable) else WeightTable.from_arrays(ids, w)
        z = np.empty((trials, levels), dtype=np.int64)
        for t in range(trials):
            trial_params = SketchParams(
                params.universe_size, levels, n, params.epsilon, params.beta,
                params.flip_prob, params.gamma, params.eta, rng.bytes(16))
            noisy = randomize(build(ids, table, trial_params), rng=rng, p=p)
            z[t] = np.bitwise_count(noisy.words).sum(axis=1)
    else:
        raise ValueError(f"unknown backend {backend!r}")
    inside = None
    if gamma is not None:
        expected = exact_expected_ones(elements, w, params, p).expected_Z
        ok = ((1 - gamma) * expected < z) & (z < (1 + gamma) * expected)
        inside = float(np.mean(np.all(ok, axis=1)))
    var = z.var(axis=0, ddof=1) if trials > 1 else np.zeros(levels)
    return MonteCarloZ(z.mean(axis=0), var, trials, inside)


def exact_symdiff_weight(a, b, weights) -> float:
    """||w_{A symdiff B}||_1 by direct set operations."""
    diff = set(int(j) for j in a) ^ set(int(j) for j in b)
    return _table_total(diff, weights)


def exact_union_weight(a, b, weights) -> float:
    union = set(int(j) for j in a) | set(int(j) for j in b)
    return _table_total(union, weights)


def _table_total(ids, weights) -> float:
    if not ids:
        return 0.0
    if isinstance(weights, WeightTable):
        return weights.total(np.fromiter(sorted(ids), dtype=np.uint64))
    return float(sum(weights[j] for j in ids))


def synthetic_set(target_weight: float, universe_size: int, rng,
                  weight_range: tuple[float, float] = (0.75, 1.0)):
    """Random distinct ids with random weights summing to just over ``target_weight``.

    Returns ``(ids, weights)`` as arrays.
    """
    rng = as_generator(rng)
    lo, hi = weight_range
    mean = (lo + hi) / 2.0
    guess = min(universe_size, int(target_weight / mean * 1.05) + 16)
    ids = rng.choice(universe_size, size=guess, replace=False).astype(np.uint64) + 1
    w = hi - (hi - lo) * rng.random(guess)
    cut = int(np.searchsorted(np.cumsum(w), target_weight)) + 1
    if cut > guess:
        raise ValueError(f"universe too small for target weight {target_weight}")
    return ids[:cut], w[:cut]


def relative_error(estimate: float, exact: float) -> float:
    return abs(estimate - exact) / exact if exact else abs(estimate)


def _trial_ok(params, target, rng, beta, weight_range, parties) -> bool:
    from korsketch.estimator import estimate
    from korsketch.privacy import merge

    if parties == 1:
        ids, w = synthetic_set(target, params.universe_size, rng, weight_range)
        table = WeightTable.from_arrays(ids, w)
        result = estimate(randomize(build(ids, table, params), rng=rng))
        return relative_error(result.estimate, float(w.sum())) <= beta
    # two parties sharing an eighth of the symmetric-difference weight as common items
    ids, w = synthetic_set(target * 1.125, params.universe_size, rng, weight_range)
    common = int(np.searchsorted(np.cumsum(w), target / 8.0))
    side = rng.random(ids.size) < 0.5
    a = np.concatenate([ids[:common], ids[common:][side[common:]]])
    b = np.concatenate([ids[:common], ids[common:][~side[common:]]])
    table = WeightTable.from_arrays(ids, w)
    exact = float(w[common:].sum())
    sa = randomize(build(a, table, params), rng=rng)
    sb = randomize(build(b, table, params), rng=rng)
    return relative_error(estimate(merge(sa, sb)).estimate, exact) <= beta


def success_rate(params_factory, target: float, trials: int, rng, beta: float,
                 weight_range: tuple[float, float] = (0.75, 1.0), parties: int = 1,
                 max_failures: int | None = None) -> float:
    """Fraction of end-to-end trials whose estimate is within beta of the exact weight.

    With ``parties=2`` each trial estimates a symmetric difference of weight
    ``target`` from two merged noisy sketches.  Stops early, returning the
    rate so far, once more than ``max_failures`` trials have failed.
    """
    rng = as_generator(rng)
    failures = 0
    for t in range(trials):
        params = params_factory(rng.bytes(16))
        if not _trial_ok(params, target, rng, beta, weight_range, parties):
            failures += 1
            if max_failures is not None and failures > max_failures:
                return 1.0 - failures / (t + 1)
    return 1.0 - failures / trials


def default_c_grid() -> list[float]:
    return [8.0 * 2 ** (k / 4) for k in range(0, 41)]


def calibrate_practical_c(u: int, epsilon: float, beta: float, target_success: float,
                          trials: int, rng=None, grid: Sequence[float] | None = None,
                          multiples: Sequence[float] = (1, 4, 16),
                          weight_range: tuple[float, float] = (0.9, 1.0), parties: int = 1,
                          margin_steps: int = 0, **param_kwargs) -> float:
    """Smallest grid value of c whose sizing meets ``target_success`` at every multiple of n.

    ``margin_steps`` moves that many grid points further up as a safety
    margin, since success rises steeply around the threshold.
    """
    if not 0.5 <= target_success < 1:
        raise ValueError("target_success must lie in [0.5, 1)")
    rng = as_generator(rng)
    grid = sorted(default_c_grid() if grid is None else grid)
    budget = int(math.floor((1.0 - target_success) * trials + 1e-9))
    mean_w = sum(weight_range) / 2.0
    for k, c in enumerate(grid):
        n = practical_n(u, epsilon, beta, c)
        if beta * n <= 1 or max(multiples) * n * 1.2 / mean_w > u:
            continue
        try:
            def factory(seed, n=n):
                return derive_params(u, epsilon, beta, Explicit(n), seed=seed, **param_kwargs)
            factory(bytes(16))
        except Exception:
            continue
        if all(success_rate(factory, m * n, trials, rng, beta, weight_range, parties, budget)
               >= target_success for m in multiples):
            return grid[min(k + margin_steps, len(grid) - 1)]
    raise CalibrationFailed(f"no c in the grid reached success {target_success}")
