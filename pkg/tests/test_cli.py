import csv
import io
import json
import subprocess
import sys

import numpy as np
import pytest

from korsketch.cli import main, worker_count
from korsketch.params import strict_condition

SEED = "000102030405060708090a0b0c0d0e0f"


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def family(tmp_path, capsys):
    path = tmp_path / "p.bin"
    code, _, _ = run(["params", "--universe", 2**20, "--epsilon", 2, "--beta", 0.25,
                      "--n", 14482, "--seed", SEED, "--out", path], capsys)
    assert code == 0
    return path


def write_set(path, ids):
    path.write_text("".join(f"{j}\n" for j in ids))
    return path


def test_params_prints_flip_probability(capsys):
    code, out, _ = run(["params", "--universe", 1024, "--epsilon", 1, "--beta", 0.5,
                        "--n", 4096, "--seed", SEED], capsys)
    assert code == 0
    assert "flip_prob: 0.333333" in out


def test_params_strict(capsys):
    code, out, _ = run(["params", "--universe", 1024, "--epsilon", 1, "--beta", 0.5,
                        "--strict", "--seed", SEED, "--format", "json-lines"], capsys)
    n = json.loads(out)["buckets_per_level"]
    assert code == 0
    assert strict_condition(n, 1024, 1.0, 0.5) and not strict_condition(n - 1, 1024, 1.0, 0.5)


def test_missing_seed_is_usage_error():
    proc = subprocess.run([sys.executable, "-m", "korsketch.cli", "params", "--universe", "1024",
                           "--epsilon", "1", "--beta", "0.5"], capture_output=True, text=True)
    assert proc.returncode == 2


def test_invalid_params_exit_2(capsys):
    code, _, err = run(["params", "--universe", 1024, "--epsilon", -1, "--beta", 0.5,
                        "--n", 64, "--seed", SEED], capsys)
    assert code == 2 and err.count("\n") == 1


def test_pipeline_on_large_set(tmp_path, family, capsys):
    ids = write_set(tmp_path / "a.txt", range(1, 100_001))
    assert run(["build", "--input", ids, "--params", family, "--out", tmp_path / "a.kor"],
               capsys)[0] == 0
    assert run(["randomize", "--in", tmp_path / "a.kor", "--rng-seed", 1,
                "--out", tmp_path / "a.nkor"], capsys)[0] == 0
    code, out, _ = run(["estimate", "--in", tmp_path / "a.nkor"], capsys)
    assert code == 0
    lines = out.strip().splitlines()
    assert len(lines) == 1
    record = json.loads(lines[0])
    assert record["status"] == "Confident"
    assert abs(record["estimate"] - 1e5) <= 0.25e5
    assert {"lo", "hi", "epsilon_eff", "z"} <= set(record)


def test_self_merge_estimates_zero(tmp_path, family, capsys):
    ids = write_set(tmp_path / "a.txt", range(1, 20_001))
    run(["build", "--input", ids, "--params", family, "--out", tmp_path / "a.kor"], capsys)
    zeros = 0
    for seed in range(100):
        for side in (0, 1):
            run(["randomize", "--in", tmp_path / "a.kor", "--rng-seed", 2 * seed + side,
                 "--out", tmp_path / f"{side}.nkor"], capsys)
        run(["merge", "--a", tmp_path / "0.nkor", "--b", tmp_path / "1.nkor",
             "--out", tmp_path / "m.nkor"], capsys)
        code, out, _ = run(["estimate", "--in", tmp_path / "m.nkor"], capsys)
        record = json.loads(out)
        assert code == 0 and record["status"] in ("Confident", "BelowThresholdZero")
        zeros += record["estimate"] == 0
    assert zeros >= 99


def test_merge_mismatch_and_corrupt_files(tmp_path, family, capsys):
    other = tmp_path / "q.bin"
    run(["params", "--universe", 2**20, "--epsilon", 2, "--beta", 0.25, "--n", 14482,
         "--seed", "ff" + SEED[2:], "--out", other], capsys)
    ids = write_set(tmp_path / "a.txt", range(1, 100))
    for name, fam in (("a", family), ("b", other)):
        run(["build", "--input", ids, "--params", fam, "--out", tmp_path / f"{name}.kor"], capsys)
        run(["randomize", "--in", tmp_path / f"{name}.kor", "--rng-seed", 1,
             "--out", tmp_path / f"{name}.nkor"], capsys)
    code, _, err = run(["merge", "--a", tmp_path / "a.nkor", "--b", tmp_path / "b.nkor",
                        "--out", tmp_path / "m.nkor"], capsys)
    assert code == 3 and err.startswith("korsketch: error:")
    data = (tmp_path / "a.nkor").read_bytes()
    (tmp_path / "cut.nkor").write_bytes(data[:-10])
    assert run(["estimate", "--in", tmp_path / "cut.nkor"], capsys)[0] == 4
    (tmp_path / "bad.nkor").write_bytes(b"NOPE" + data[4:])
    assert run(["estimate", "--in", tmp_path / "bad.nkor"], capsys)[0] == 4
    assert run(["estimate", "--in", tmp_path / "missing.nkor"], capsys)[0] == 2


def test_randomize_is_deterministic_given_rng_seed(tmp_path, family, capsys):
    ids = write_set(tmp_path / "a.txt", range(1, 1000))
    run(["build", "--input", ids, "--params", family, "--out", tmp_path / "a.kor"], capsys)
    for name in ("x", "y"):
        run(["randomize", "--in", tmp_path / "a.kor", "--rng-seed", 7,
             "--out", tmp_path / f"{name}.nkor"], capsys)
    assert (tmp_path / "x.nkor").read_bytes() == (tmp_path / "y.nkor").read_bytes()


def test_weights_file(tmp_path, family, capsys):
    ids = write_set(tmp_path / "a.txt", range(1, 100_001))
    weights = tmp_path / "w.tsv"
    weights.write_text("".join(f"{j}\t0.5\n" for j in range(1, 50_001)))
    run(["build", "--input", ids, "--weights", weights, "--params", family,
         "--out", tmp_path / "a.kor"], capsys)
    run(["randomize", "--in", tmp_path / "a.kor", "--rng-seed", 3, "--out", tmp_path / "a.nkor"],
        capsys)
    record = json.loads(run(["estimate", "--in", tmp_path / "a.nkor"], capsys)[1])
    assert abs(record["estimate"] - 75_000) <= 0.25 * 75_000


def test_setops(capsys):
    code, out, _ = run(["setops", "--wa", 5, "--wb", 5, "--symdiff-est", 10], capsys)
    record = json.loads(out)
    assert code == 0 and record["union"] == 10 and record["intersection"] == 0


def test_release_weight(tmp_path, capsys):
    ids = write_set(tmp_path / "a.txt", range(1, 11))
    _, out, _ = run(["release-weight", "--input", ids, "--epsilon", 1, "--rng-seed", 4], capsys)
    record = json.loads(out)
    assert record["sensitivity"] == 1.0 and abs(record["value"] - 10) < 30
    assert out == run(["release-weight", "--input", ids, "--epsilon", 1, "--rng-seed", 4],
                      capsys)[1]


def test_bench(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("KOR_THREADS", "2")
    out = tmp_path / "bench.csv"
    code, _, _ = run(["bench", "--universe", 2**20, "--epsilon", 2, "--beta", 0.25,
                      "--n", 14482, "--sizes", "0.05n,16n", "--trials", 10, "--out", out], capsys)
    assert code == 0
    rows = list(csv.DictReader(io.StringIO(out.read_text())))
    assert list(rows[0]) == ["m_target", "exact", "mean_est", "mean_rel_err", "p95_rel_err",
                             "zero_rate", "wall_ms"]
    assert float(rows[0]["zero_rate"]) == 1.0
    assert float(rows[1]["p95_rel_err"]) <= 0.25
    assert run(["bench", "--universe", 1024, "--epsilon", 2, "--beta", 0.25, "--n", 4096,
                "--sizes", "10", "--trials", 0], capsys)[0] == 2


def test_bench_rows_independent_of_threads(tmp_path, capsys, monkeypatch):
    args = ["bench", "--universe", 2**16, "--epsilon", 2, "--beta", 0.25, "--n", 4096,
            "--sizes", "2n,4n", "--trials", 4, "--rng-seed", 9]
    outputs = []
    for threads in ("1", "3"):
        monkeypatch.setenv("KOR_THREADS", threads)
        _, out, _ = run(args, capsys)
        outputs.append([row.rsplit(",", 1)[0] for row in out.splitlines()])
    assert outputs[0] == outputs[1]


def test_worker_count(monkeypatch):
    monkeypatch.setenv("KOR_THREADS", "3")
    assert worker_count(10) == 3 and worker_count(2) == 2
    monkeypatch.delenv("KOR_THREADS")
    assert worker_count(1) == 1


def test_stream_sim(tmp_path, capsys):
    fam = tmp_path / "s.bin"
    run(["params", "--universe", 2**16, "--epsilon", 4, "--beta", 0.25, "--n", 2048,
         "--seed", SEED, "--out", fam], capsys)
    rng = np.random.default_rng(0)
    write_set(tmp_path / "a.txt", np.repeat(np.arange(1, 30_001), rng.integers(1, 9, 30_000)))
    write_set(tmp_path / "b.txt", np.repeat(np.arange(20_001, 40_001), 2))
    argv = ["stream-sim", "--stream-a", tmp_path / "a.txt", "--stream-b", tmp_path / "b.txt",
            "--params", fam, "--trials", 5, "--rng-seed", 1]
    code, out, err = run(argv, capsys)
    assert code == 0 and "mean_rel_error" in err
    rows = list(csv.DictReader(io.StringIO(out)))
    assert len(rows) == 5 and rows[0]["exact_union"] == "40000.0"
    assert out == run(argv, capsys)[1]
