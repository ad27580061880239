"""Differentially private, mergeable sketches for weighted distinct-element estimation."""
from korsketch.errors import *  # noqa: F401,F403
from korsketch.estimator import (
    EstimationResult,
    SetAlgebraEstimates,
    Status,
    estimate,
    estimate_symmetric_difference,
    set_algebra,
)
from korsketch.hashing import HashOracle
from korsketch.params import Explicit, Practical, SketchParams, Strict, derive_params, strict_n
from korsketch.privacy import NoisySketch, laplace_weight, merge, randomize
from korsketch.sketch import KorSketch, WeightTable, build, deserialize, serialize, update, xor
from korsketch.streaming import PreSampledSketch, simulate_two_party, stream_insert, union_estimate

__version__ = "0.1.0"
