"""Pre-sampled sketches for streams with repeated items, and union estimation.

Every occurrence of an item is kept with a fresh fair coin before it is
toggled into the sketch, so an item seen c >= 1 times ends up present with
probability exactly 1/2 instead of cancelling out on even counts.  XOR of
two such sketches is then a sketch of the union at half the weight.
"""
from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, field

import numpy as np

from korsketch.estimator import EstimationResult, estimate
from korsketch.hashing import HashOracle
from korsketch.oracle import exact_union_weight, relative_error
from korsketch.params import SketchParams
from korsketch.privacy import NoisySketch, as_generator, merge, randomize
from korsketch.sketch import KorSketch, WeightTable, _as_ids, _check_range, cell_parity


class PreSampledSketch:
    def __init__(self, params: SketchParams, inner: KorSketch | None = None):
        self.inner = KorSketch(params) if inner is None else inner
        self.occurrences_seen = 0
        self.occurrences_kept = 0

    @property
    def params(self) -> SketchParams:
        return self.inner.params

    def randomize(self, rng=None, epsilon: float | None = None) -> NoisySketch:
        return randomize(self.inner, rng=rng, epsilon=epsilon)


def stream_insert(sketch: PreSampledSketch, j: int, weights: WeightTable, rng) -> PreSampledSketch:
    """Feed one occurrence of j; it is toggled in with probability 1/2."""
    rng = as_generator(rng)
    ids = _as_ids([j])
    _check_range(ids, sketch.params)
    weights.lookup(ids)
    sketch.occurrences_seen += 1
    if rng.random() < 0.5:
        sketch.occurrences_kept += 1
        sketch.inner.toggle(j, weights)
    return sketch


def stream_extend(sketch: PreSampledSketch, occurrences, weights: WeightTable,
                  rng) -> PreSampledSketch:
    """Feed many occurrences at once; same distribution as repeated :func:`stream_insert`."""
    rng = as_generator(rng)
    ids = _as_ids(occurrences)
    _check_range(ids, sketch.params)
    kept = ids[rng.random(ids.size) < 0.5]
    unique, inverse = np.unique(kept, return_inverse=True)
    levels, buckets = HashOracle.for_params(sketch.params).locate(unique, weights.lookup(unique))
    sketch.inner.words ^= cell_parity(sketch.params, levels[inverse], buckets[inverse])
    sketch.occurrences_seen += int(ids.size)
    sketch.occurrences_kept += int(kept.size)
    return sketch


def union_estimate(a: NoisySketch, b: NoisySketch, params: SketchParams | None = None) -> EstimationResult:
    """Twice the estimate of the merged pre-sampled sketches."""
    return estimate(merge(a, b), params).scaled(2.0)


@dataclass
class TwoPartyReport:
    rows: list[dict] = field(default_factory=list)
    timings: dict[str, float] = field(default_factory=dict)

    COLUMNS = ("trial", "exact_union", "estimate", "rel_error", "status")

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=self.COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in self.rows:
            writer.writerow({k: row[k] for k in self.COLUMNS})
        return buf.getvalue()

    def summary(self) -> dict:
        if not self.rows:
            return {"trials": 0}
        errs = np.array([r["rel_error"] for r in self.rows])
        return {"trials": len(self.rows), "mean_rel_error": float(errs.mean()),
                "std_rel_error": float(errs.std()), **self.timings}


def simulate_two_party(stream_a, stream_b, weights: WeightTable, params: SketchParams,
                       epsilon: float | None = None, trials: int = 1, rng=None) -> TwoPartyReport:
    """Each trial: pre-sample both streams, noise each sketch, merge and estimate the union."""
    rng = as_generator(rng)
    stream_a = _as_ids(stream_a)
    stream_b = _as_ids(stream_b)
    report = TwoPartyReport()
    if trials <= 0:
        return report
    exact = exact_union_weight(np.unique(stream_a), np.unique(stream_b), weights)
    phases = {"build_s": 0.0, "noise_s": 0.0, "estimate_s": 0.0}
    for trial in range(trials):
        t0 = time.perf_counter()
        a = stream_extend(PreSampledSketch(params), stream_a, weights, rng)
        b = stream_extend(PreSampledSketch(params), stream_b, weights, rng)
        t1 = time.perf_counter()
        na, nb = a.randomize(rng, epsilon), b.randomize(rng, epsilon)
        t2 = time.perf_counter()
        result = union_estimate(na, nb)
        t3 = time.perf_counter()
        phases["build_s"] += t1 - t0
        phases["noise_s"] += t2 - t1
        phases["estimate_s"] += t3 - t2
        report.rows.append({
            "trial": trial,
            "exact_union": exact,
            "estimate": result.estimate,
            "rel_error": relative_error(result.estimate, exact),
            "status": result.status.value,
        })
    report.timings = {k: v / trials for k, v in phases.items()}
    return report
