import json
import subprocess
import sys

import pytest

from fasco import persistence as io
from fasco.calibration import DEFAULT_BUDGET

from test_explain import HASH_JOIN_EXPLAIN


def fasco(*args, env=None, check=True):
    proc = subprocess.run([sys.executable, "-m", "fasco.cli", *map(str, args)],
                          capture_output=True, text=True, env=env)
    if check and proc.returncode != 0:
        raise AssertionError(f"exit {proc.returncode}: {proc.stderr}")
    return proc


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    fasco("gen-synth", "--out", d / "data", "--n-plans", 160, "--seed", 3)
    data = d / "data"
    fasco("build-lookups", "--catalog", data / "catalog.json", "--tables", data / "tables.npz",
          "--out", d / "lk")
    fasco("train", "--train", data / "train.jsonl", "--catalog", data / "catalog.json",
          "--lookups", d / "lk", "--out", d / "model.bin", "--epochs", 2)
    return d


def test_gen_synth_default_counts(tmp_path):
    fasco("gen-synth", "--out", tmp_path)
    for name in ("train.jsonl", "test.jsonl"):
        assert len((tmp_path / name).read_text().splitlines()) == 2000
    assert (tmp_path / "catalog.json").exists() and (tmp_path / "tables.npz").exists()


def test_gen_synth_reproducible(tmp_path):
    for sub in ("a", "b"):
        fasco("gen-synth", "--out", tmp_path / sub, "--n-plans", 40, "--seed", 9,
              "--split-ratio", 0.25)
    for name in ("train.jsonl", "test.jsonl", "catalog.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert len((tmp_path / "a" / "train.jsonl").read_text().splitlines()) == 10


@pytest.mark.parametrize("flag", [("--rho", "1.5"), ("--split-ratio", "0")])
def test_gen_synth_rejects_bad_flags(tmp_path, flag):
    proc = fasco("gen-synth", "--out", tmp_path, "--n-plans", 10, *flag, check=False)
    assert proc.returncode != 0 and "error" in proc.stderr


def test_lookups_budget_and_version(work, tmp_path):
    store = io.load_lookup_store(work / "lk")
    assert len(store) == 15
    assert all(ll.nbytes <= DEFAULT_BUDGET + 8 * len(ll.columns) for ll in store)
    assert {ll.version for ll in store} == {0}
    out = tmp_path / "lk"
    data = work / "data"
    args = ("build-lookups", "--catalog", data / "catalog.json", "--tables", data / "tables.npz",
            "--out", out, "--budget-bytes", 20000)
    fasco(*args)
    fasco(*args, env={"FASCO_THREADS": "2", "PATH": ""})
    store = io.load_lookup_store(out)
    assert {ll.version for ll in store} == {1}
    assert all(ll.nbytes <= 20000 + 8 * len(ll.columns) for ll in store)


def test_train_writes_trace(work):
    trace = json.loads((work / "model.trace.json").read_text())
    assert len(trace["epoch_mean_loss"]) == 2
    assert io.load_model(work / "model.bin").config["epochs"] == 2


def test_estimate_deterministic_and_verbose(work, tmp_path):
    plan = tmp_path / "one.json"
    plan.write_text((work / "data" / "test.jsonl").read_text().splitlines()[0])
    base = ("estimate", "--model", work / "model.bin", "--plan", plan,
            "--catalog", work / "data" / "catalog.json", "--lookups", work / "lk")
    a, b = fasco(*base), fasco(*base)
    assert a.stdout == b.stdout and float(a.stdout) > 0
    v = fasco(*base, "--verbose", "--time")
    assert v.stdout.splitlines()[0] == a.stdout.strip()
    assert any(l.strip().startswith("node") for l in v.stdout.splitlines()[1:])
    assert "latency" in v.stderr and "latency" not in v.stdout


def test_estimate_missing_pair_warns(work, tmp_path):
    lines = (work / "data" / "test.jsonl").read_text().splitlines()
    plan = next(l for l in lines if '"join_keys"' in l)
    (tmp_path / "p.json").write_text(plan)
    (tmp_path / "empty").mkdir()
    proc = fasco("estimate", "--model", work / "model.bin", "--plan", tmp_path / "p.json",
                 "--catalog", work / "data" / "catalog.json", "--lookups", tmp_path / "empty")
    assert float(proc.stdout) > 0
    assert "WARNING" in proc.stderr and "no lookup list" in proc.stderr


def test_evaluate_report(work, tmp_path):
    proc = fasco("evaluate", "--model", work / "model.bin", "--test", work / "data" / "test.jsonl",
                 "--catalog", work / "data" / "catalog.json", "--lookups", work / "lk",
                 "--report", tmp_path / "r.jsonl", "--compare-vanilla",
                 "--train", work / "data" / "train.jsonl")
    lines = proc.stdout.splitlines()
    ours = json.loads(lines[0].split(" ", 1)[1])
    assert ours["p50"] <= ours["p95"] <= ours["p99"] <= ours["max"]
    assert lines[1].startswith("vanilla ")
    assert len(io.read_report(tmp_path / "r.jsonl")) == ours["n"] == 80


def test_compare_vanilla_needs_train(work):
    proc = fasco("evaluate", "--model", work / "model.bin", "--test", work / "data" / "test.jsonl",
                 "--catalog", work / "data" / "catalog.json", "--compare-vanilla", check=False)
    assert proc.returncode == 1 and "--train" in proc.stderr


def test_adapt_explain(tmp_path):
    f = tmp_path / "e.json"
    f.write_text(json.dumps(HASH_JOIN_EXPLAIN))
    doc = json.loads(fasco("adapt-explain", f).stdout)
    assert doc["node_type"] == "Hash Join" and doc["source"] == "ADAPTER"
    f.write_text("garbage")
    assert fasco("adapt-explain", f, check=False).returncode == 1
