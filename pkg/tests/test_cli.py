"""Command-line entry point."""

from __future__ import annotations

import csv
import json
import subprocess
import sys
from pathlib import Path

import pytest

from hypetkg.cli import run
from hypetkg.data import load_dataset, write_dataset
from hypetkg.toy import make_toy_dataset

FIXTURES = Path(__file__).parent / "fixtures"
TINY = ["--dim", "8", "--transformer-heads", "2", "--dropout", "0", "--batch-size", "64"]


@pytest.fixture
def dataset(tmp_path):
    ds = make_toy_dataset(
        n_entities=12, n_facts=40, qual_prob=0.4, split=(4, 4), n_ti_facts=8, n_ti_entities=2, seed=5
    )
    write_dataset(ds, tmp_path / "ds")
    return tmp_path / "ds"


def test_stats(dataset, capsys):
    assert run(["stats", str(dataset), "--json"]) == 0
    stats = json.loads(capsys.readouterr().out)
    assert stats["n_train"] == 32 and stats["n_ti_facts"] == 8
    assert run(["stats", str(dataset)]) == 0
    assert "qual_percent=" in capsys.readouterr().out


def test_missing_dataset_is_a_user_error(tmp_path, capsys):
    assert run(["stats", str(tmp_path / "nope")]) == 1
    assert "error:" in capsys.readouterr().err


def test_unknown_flag_is_a_user_error(dataset, capsys):
    assert run(["stats", str(dataset), "--frobnicate"]) == 1
    assert "unrecognized arguments" in capsys.readouterr().err


def test_malformed_data_is_a_user_error(tmp_path, capsys):
    root = tmp_path / "bad"
    root.mkdir()
    (root / "train.txt").write_text("a\tr\tb\n")
    (root / "valid.txt").write_text("")
    (root / "test.txt").write_text("")
    assert run(["stats", str(root)]) == 1
    assert "train.txt:1" in capsys.readouterr().err


def test_sample(tmp_path, capsys):
    ds = make_toy_dataset(n_entities=20, n_facts=200, qual_prob=0.2, split=(30, 30), seed=1)
    write_dataset(ds, tmp_path / "full")
    assert run(["sample", str(tmp_path / "full"), "--percent", "66", "--seed", "1", "--out", str(tmp_path / "s")]) == 0
    out = capsys.readouterr().out
    sub = load_dataset(tmp_path / "s")
    assert out.strip() == f"train={len(sub.train)} valid={len(sub.valid)} test={len(sub.test)}"
    assert sub.stats.n_facts_with_qual == ds.stats.n_facts_with_qual


def test_sample_unreachable(tmp_path):
    write_dataset(make_toy_dataset(n_facts=20, qual_prob=1.0), tmp_path / "full")
    assert run(["sample", str(tmp_path / "full"), "--percent", "33"]) == 1


def test_gradcheck(capsys):
    assert run(["gradcheck", "--dim", "8", "--entities", "6", "--facts", "8", "--max-coords", "3"]) == 0
    assert "max relative error" in capsys.readouterr().out.lower()


def test_failed_gradcheck_exits_nonzero(capsys):
    assert run(["gradcheck", "--dim", "8", "--entities", "6", "--facts", "8", "--max-coords", "2", "--tol", "0"]) == 2


def test_preset_conflict(dataset, tmp_path, capsys):
    code = run(["train", str(dataset), "--out", str(tmp_path / "o"), "--preset", "tau", "--time"])
    assert code == 1
    assert "conflicts" in capsys.readouterr().err


def test_preset_agreeing_flag_is_fine(dataset, tmp_path):
    assert run(["train", str(dataset), "--out", str(tmp_path / "o"), "--preset", "tau", "--no-time",
                "--epochs", "1", *TINY]) == 0


def test_config_precedence(dataset, tmp_path):
    cfg = tmp_path / "run.toml"
    cfg.write_text("seed = 3\n[model]\ndim = 8\ntransformer_heads = 2\n[train]\nepochs = 2\nlearning_rate = 0.01\n")
    out = tmp_path / "o"
    assert run(["train", str(dataset), "--out", str(out), "--config", str(cfg), "--epochs", "1"]) == 0
    meta = json.loads((out / "model.ckpt.json").read_text())
    assert meta["train"]["epochs"] == 1  # flag beats file
    assert meta["train"]["learning_rate"] == 0.01  # file beats default
    assert meta["model"]["dim"] == 8 and meta["seed"] == 3
    assert meta["train"]["batch_size"] == 256  # default untouched


def test_config_unknown_key(dataset, tmp_path, capsys):
    cfg = tmp_path / "run.toml"
    cfg.write_text("epochz = 3\n")
    assert run(["train", str(dataset), "--out", str(tmp_path / "o"), "--config", str(cfg)]) == 1
    assert "epochz" in capsys.readouterr().err


def test_train_psi_then_eval_offline(dataset, tmp_path, capsys, monkeypatch):
    import socket

    def no_network(*a, **k):
        raise AssertionError("network access attempted")

    monkeypatch.setattr(socket, "create_connection", no_network)
    out = tmp_path / "run"
    args = ["train", str(dataset), "--out", str(out), "--preset", "psi", "--epochs", "2", "--eval-every", "1", *TINY]
    assert run(args) == 0
    rows = list(csv.DictReader((out / "metrics.csv").open()))
    assert [r["epoch"] for r in rows] == ["1", "2"] and rows[0]["valid_MRR"]
    meta = json.loads((out / "model.ckpt.json").read_text())
    assert meta["model"]["use_ti"] is True and "rng_state" in meta
    report = tmp_path / "report.json"
    assert run(["eval", str(dataset), "--checkpoint", str(out / "model.ckpt"), "--report", str(report),
                "--per-query", "--workers", "2"]) == 0
    printed = capsys.readouterr().out
    assert "MRR" in printed and "H@10" in printed
    rep = json.loads(report.read_text())
    assert rep["n_queries"] == 8 and len(rep["per_query"]) == 8
    assert 0 < rep["mrr"] <= 1

    dump = tmp_path / "att.json"
    assert run(["dump-attention", str(dataset), "--checkpoint", str(out / "model.ckpt"), "--limit", "3",
                "--out", str(dump)]) == 0
    records = json.loads(dump.read_text())
    assert len(records) == 3
    for rec in records:
        assert len(rec["eta"]) == len(rec["subject_related_qualifiers"])
        if rec["eta"]:
            assert abs(sum(rec["eta"]) - 1) < 1e-12
        assert isinstance(rec["ti_neighbors"], list)
    assert any(rec["ti_neighbors"] for rec in records)


def test_train_is_deterministic(dataset, tmp_path):
    for name in ("a", "b"):
        assert run(["train", str(dataset), "--out", str(tmp_path / name), "--epochs", "2", "--seed", "4", *TINY]) == 0
    assert (tmp_path / "a" / "model.ckpt").read_bytes() == (tmp_path / "b" / "model.ckpt").read_bytes()


def test_build_from_fixtures(tmp_path, capsys):
    out = tmp_path / "built"
    code = run(["build", str(FIXTURES / "yago_sample"), "--out", str(out), "--yago-relations",
                "--fixtures", str(FIXTURES / "wikidata")])
    assert code == 0
    assert json.loads(capsys.readouterr().out)["counts"] == {"train": 6, "valid": 2, "test": 2}
    assert load_dataset(out).stats.n_train == 6


def test_build_bad_ratios(tmp_path):
    assert run(["build", str(FIXTURES / "yago_sample"), "--out", str(tmp_path / "o"), "--redistribute",
                "--ratios", "0.5,0.5", "--fixtures", str(FIXTURES / "wikidata")]) == 1


def test_module_entry_point(dataset):
    proc = subprocess.run([sys.executable, "-m", "hypetkg", "stats", str(dataset), "--json"],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0 and json.loads(proc.stdout)["n_valid"] == 4
