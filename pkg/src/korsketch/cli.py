"""Command-line interface: ``korsketch <subcommand> ...``.

Exit codes: 0 success, 2 usage or invalid input, 3 parameter-family
mismatch, 4 corrupt sketch file.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from korsketch.errors import KorError, ParamsMismatch, SketchFormatError
from korsketch.estimator import estimate, set_algebra
from korsketch.oracle import relative_error, synthetic_set
from korsketch.params import (
    EMPIRICAL,
    INTERVAL_POLICIES,
    Explicit,
    Practical,
    SketchParams,
    Strict,
    derive_params,
    make_seed,
)
from korsketch.privacy import laplace_weight, merge, randomize
from korsketch.sketch import WeightTable, build, deserialize, read_ids, read_weights, serialize
from korsketch.streaming import simulate_two_party

EXIT_USAGE, EXIT_MISMATCH, EXIT_CORRUPT = 2, 3, 4
FORMATS = ("text", "csv", "json-lines")


class UsageError(Exception):
    pass


def worker_count(jobs: int) -> int:
    cap = os.environ.get("KOR_THREADS")
    limit = int(cap) if cap else (os.cpu_count() or 1)
    return max(1, min(limit, jobs))


def emit(record: dict, fmt: str, out=None) -> None:
    out = sys.stdout if out is None else out
    if fmt == "json-lines":
        out.write(json.dumps(record) + "\n")
    elif fmt == "csv":
        writer = csv.DictWriter(out, fieldnames=list(record), lineterminator="\n")
        writer.writeheader()
        writer.writerow({k: json.dumps(v) if isinstance(v, list) else v
                         for k, v in record.items()})
    else:
        for k, v in record.items():
            out.write(f"{k}: {v}\n")


def _read_bytes(path) -> bytes:
    with open(path, "rb") as fh:
        return fh.read()


def _write_bytes(path, data: bytes) -> None:
    with open(path, "wb") as fh:
        fh.write(data)


def _load_params(path) -> SketchParams:
    return SketchParams.from_header(_read_bytes(path))


def _load_sketch(path):
    return deserialize(_read_bytes(path))


def _write_text(path, text: str) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)


def _sizing(args):
    if args.strict:
        return Strict()
    if args.n is not None:
        return Explicit(args.n)
    return Practical(args.c) if args.c is not None else Practical()


def cmd_params(args):
    params = derive_params(args.universe, args.epsilon, args.beta, _sizing(args),
                           seed=make_seed(args.seed), intervals=args.intervals,
                           failure_prob=args.failure_prob)
    if args.out:
        _write_bytes(args.out, params.to_header())
    emit(params.describe(), args.format)


def cmd_build(args):
    params = _load_params(args.params)
    ids = read_ids(args.input)
    weights = read_weights(args.weights)
    _write_bytes(args.out, serialize(build(ids, weights, params)))


def cmd_randomize(args):
    sketch = _load_sketch(args.input)
    if hasattr(sketch, "noise"):
        raise UsageError("input sketch is already noisy")
    noisy = randomize(sketch, rng=np.random.default_rng(args.rng_seed), epsilon=args.epsilon)
    _write_bytes(args.out, serialize(noisy))


def cmd_merge(args):
    a, b = _load_sketch(args.a), _load_sketch(args.b)
    if not (hasattr(a, "noise") and hasattr(b, "noise")):
        raise UsageError("merge takes two noisy sketches")
    _write_bytes(args.out, serialize(merge(a, b)))


def cmd_estimate(args):
    result = estimate(_load_sketch(args.input))
    emit(result.record(), args.format)


def cmd_setops(args):
    ops = set_algebra(args.wa, args.wb, args.symdiff_est)
    emit({"union": ops.union, "intersection": ops.intersection, "a_minus_b": ops.a_minus_b,
          "b_minus_a": ops.b_minus_a, "negative": ops.negative}, args.format)


def cmd_release_weight(args):
    ids = read_ids(args.input)
    weights = read_weights(args.weights)
    w = weights.lookup(ids)
    sensitivity = args.sensitivity if args.sensitivity is not None else float(w.max(initial=1.0))
    released = laplace_weight(float(w.sum()), args.epsilon, sensitivity,
                              np.random.default_rng(args.rng_seed))
    emit({"value": released.value, "epsilon": released.epsilon,
          "sensitivity": released.sensitivity}, args.format)


def _parse_sizes(text: str, n: int) -> list[float]:
    sizes = []
    for tok in text.split(","):
        tok = tok.strip()
        if tok.endswith("n"):
            sizes.append(float(tok[:-1] or 1) * n)
        else:
            sizes.append(float(tok))
    if not sizes or any(s <= 0 for s in sizes):
        raise UsageError("sizes must be positive")
    return sizes


def _bench_trial(base: SketchParams, target: float, seed_seq) -> tuple[float, float, float]:
    rng = np.random.default_rng(seed_seq)
    params = SketchParams(base.universe_size, base.num_levels, base.buckets_per_level,
                          base.epsilon, base.beta, base.flip_prob, base.gamma, base.eta,
                          rng.bytes(16))
    ids, w = synthetic_set(target, params.universe_size, rng)
    table = WeightTable.from_arrays(ids, w)
    t0 = time.perf_counter()
    result = estimate(randomize(build(ids, table, params), rng=rng))
    wall = (time.perf_counter() - t0) * 1e3
    return float(w.sum()), result.estimate, wall


def cmd_bench(args):
    if args.trials < 1:
        raise UsageError("--trials must be >= 1")
    base = derive_params(args.universe, args.epsilon, args.beta, Explicit(args.n),
                         seed=bytes(16), intervals=args.intervals,
                         failure_prob=args.failure_prob)
    sizes = _parse_sizes(args.sizes, args.n)
    streams = np.random.SeedSequence(args.rng_seed).spawn(len(sizes) * args.trials)
    jobs = [(target, streams[k * args.trials + t])
            for k, target in enumerate(sizes) for t in range(args.trials)]
    with ThreadPoolExecutor(worker_count(len(jobs))) as pool:
        results = list(pool.map(lambda job: _bench_trial(base, *job), jobs))

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["m_target", "exact", "mean_est", "mean_rel_err", "p95_rel_err",
                     "zero_rate", "wall_ms"])
    for k, target in enumerate(sizes):
        rows = results[k * args.trials:(k + 1) * args.trials]
        exact = np.array([r[0] for r in rows])
        est = np.array([r[1] for r in rows])
        errs = np.array([relative_error(e, x) for e, x in zip(est, exact)])
        wall = np.array([r[2] for r in rows])
        writer.writerow([f"{target:.6g}", f"{exact.mean():.6f}", f"{est.mean():.6f}",
                         f"{errs.mean():.6f}", f"{np.quantile(errs, 0.95):.6f}",
                         f"{np.mean(est == 0):.6f}", f"{wall.mean():.3f}"])
    _write_text(args.out, buf.getvalue())


def cmd_stream_sim(args):
    params = _load_params(args.params)
    a = read_ids(args.stream_a, allow_repeats=True)
    b = read_ids(args.stream_b, allow_repeats=True)
    weights = read_weights(args.weights)
    report = simulate_two_party(a, b, weights, params, args.epsilon, args.trials,
                                np.random.default_rng(args.rng_seed))
    _write_text(args.out, report.to_csv())
    if report.rows:
        sys.stderr.write(json.dumps(report.summary()) + "\n")


def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="korsketch", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def fmt(p, default):
        p.add_argument("--format", choices=FORMATS, default=default)

    def intervals(p):
        p.add_argument("--intervals", choices=INTERVAL_POLICIES, default=EMPIRICAL)
        p.add_argument("--failure-prob", type=float, default=0.002)

    p = sub.add_parser("params", help="derive and print sketch parameters")
    p.add_argument("--universe", type=int, required=True)
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--beta", type=float, required=True)
    size = p.add_mutually_exclusive_group()
    size.add_argument("--n", type=_positive_int)
    size.add_argument("--strict", action="store_true")
    size.add_argument("--c", type=float)
    p.add_argument("--seed", required=True, help="hex seed for the shared hash functions")
    p.add_argument("--out", help="write the binary params header here")
    intervals(p)
    fmt(p, "text")
    p.set_defaults(func=cmd_params)

    p = sub.add_parser("build", help="sketch a set file")
    p.add_argument("--input", required=True)
    p.add_argument("--weights")
    p.add_argument("--params", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("randomize", help="add randomized-response noise")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--rng-seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_randomize)

    p = sub.add_parser("merge", help="XOR two noisy sketches")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_merge)

    p = sub.add_parser("estimate", help="estimate the weight of a sketch")
    p.add_argument("--in", dest="input", required=True)
    fmt(p, "json-lines")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("setops", help="union, intersection and differences")
    p.add_argument("--wa", type=float, required=True)
    p.add_argument("--wb", type=float, required=True)
    p.add_argument("--symdiff-est", type=float, required=True)
    fmt(p, "json-lines")
    p.set_defaults(func=cmd_setops)

    p = sub.add_parser("release-weight", help="Laplace-noised total weight of a set")
    p.add_argument("--input", required=True)
    p.add_argument("--weights")
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--sensitivity", type=float)
    p.add_argument("--rng-seed", type=int)
    fmt(p, "json-lines")
    p.set_defaults(func=cmd_release_weight)

    p = sub.add_parser("bench", help="accuracy and timing sweep on synthetic sets")
    p.add_argument("--universe", type=int, required=True)
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--n", type=_positive_int, required=True)
    p.add_argument("--sizes", required=True, help="comma list, e.g. 0.25n,16n,64n or 5000")
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--rng-seed", type=int, default=0)
    p.add_argument("--out")
    intervals(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("stream-sim", help="two-party streaming union simulation")
    p.add_argument("--stream-a", required=True)
    p.add_argument("--stream-b", required=True)
    p.add_argument("--weights")
    p.add_argument("--params", required=True)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--trials", type=int, default=1)
    p.add_argument("--rng-seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_stream_sim)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except ParamsMismatch as exc:
        return _fail(exc, EXIT_MISMATCH)
    except SketchFormatError as exc:
        return _fail(exc, EXIT_CORRUPT)
    except (KorError, UsageError, ValueError, OSError) as exc:
        return _fail(exc, EXIT_USAGE)
    return 0


def _fail(exc, code) -> int:
    message = " ".join(str(exc).split()) or type(exc).__name__
    sys.stderr.write(f"korsketch: error: {message}\n")
    return code


if __name__ == "__main__":
    sys.exit(main())
