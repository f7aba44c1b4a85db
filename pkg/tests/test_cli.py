import json

import numpy as np
import pytest

from moco.cli import main
from moco.model import ModelConfig, init_params, save_checkpoint
from moco.scalarize import training_spec

TINY = ModelConfig(embed_dim=16, n_layers=1, n_heads=2, head_dim=8, ff_dim=32,
                   hyper_hidden=(16,), hyper_embed=8)


def _write_ckpt(path, kind="motsp", m=2, seed=0):
    params = init_params(kind, m, TINY, seed=seed)
    meta = {"kind": kind, "m": m, "n": 6, "model_config": TINY.to_dict(),
            "scalarization": training_spec(kind, m).to_dict(), "seed": seed}
    save_checkpoint(path, params, meta)
    return path


@pytest.fixture()
def workdir(tmp_path):
    ckpt = _write_ckpt(tmp_path / "model.ckpt")
    assert main(["sample", "--problem", "motsp", "--nodes", "6", "--count", "3",
                 "--seed", "0", "--out", str(tmp_path / "instances.jsonl")]) == 0
    return tmp_path, str(ckpt), str(tmp_path / "instances.jsonl")


def test_sample_and_solve_roundtrip(workdir):
    tmp, ckpt, instances = workdir
    out = tmp / "solve"
    rc = main(["solve", "--ckpt", ckpt, "--instances", instances,
               "--pref-grid", "5", "--out", str(out)])
    assert rc == 0
    rows = [json.loads(l) for l in (out / "solutions.jsonl").read_text().splitlines()]
    assert len(rows) == 3 * 5
    assert {"instance_id", "lambda", "solution", "objectives", "scalarized_cost"} <= rows[0].keys()
    metrics = json.loads((out / "metrics.json").read_text())
    assert 0 <= metrics["mean_normalized_hv"] <= 1
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == "solve"
    assert "solutions.jsonl" in manifest["artifacts"]


def test_solve_is_reproducible(workdir):
    tmp, ckpt, instances = workdir
    outs = []
    for name in ("a", "b"):
        out = tmp / name
        main(["solve", "--ckpt", ckpt, "--instances", instances,
              "--pref-grid", "3", "--out", str(out)])
        outs.append((out / "solutions.jsonl").read_bytes())
    assert outs[0] == outs[1]


def test_solve_single_lambda_and_aug(workdir):
    tmp, ckpt, instances = workdir
    out = tmp / "aug"
    rc = main(["solve", "--ckpt", ckpt, "--instances", instances,
               "--lambda", "0.3,0.7", "--aug", "--out", str(out)])
    assert rc == 0
    rows = [json.loads(l) for l in (out / "solutions.jsonl").read_text().splitlines()]
    assert len(rows) == 3
    assert rows[0]["lambda"] == [0.3, 0.7]


def test_solve_kind_mismatch_exits_with_diagnostic(workdir, capsys):
    tmp, ckpt, _ = workdir
    kp_file = tmp / "kp.jsonl"
    main(["sample", "--problem", "mokp", "--nodes", "6", "--count", "1",
          "--out", str(kp_file)])
    rc = main(["solve", "--ckpt", ckpt, "--instances", str(kp_file),
               "--pref-grid", "3", "--out", str(tmp / "x")])
    assert rc == 2
    assert "checkpoint is for" in capsys.readouterr().err


def test_malformed_instance_line_reports_position(workdir, capsys):
    tmp, ckpt, _ = workdir
    bad = tmp / "bad.jsonl"
    bad.write_text('{"kind": "motsp"}\n')
    rc = main(["solve", "--ckpt", ckpt, "--instances", str(bad),
               "--pref-grid", "3", "--out", str(tmp / "y")])
    assert rc == 2
    assert ":1:" in capsys.readouterr().err


def test_enumerate_and_eval(workdir):
    tmp, ckpt, instances = workdir
    exact_dir = tmp / "exact"
    assert main(["enumerate", "--instances", instances, "--out", str(exact_dir)]) == 0
    fronts = [json.loads(l) for l in (exact_dir / "exact_fronts.jsonl").read_text().splitlines()]
    assert len(fronts) == 3 and fronts[0]["objectives"]

    solve_dir = tmp / "solve"
    main(["solve", "--ckpt", ckpt, "--instances", instances,
          "--pref-grid", "5", "--out", str(solve_dir)])
    eval_dir = tmp / "eval"
    rc = main(["eval", "--fronts", str(solve_dir / "solutions.jsonl"),
               "--exact", str(exact_dir / "exact_fronts.jsonl"), "--out", str(eval_dir)])
    assert rc == 0
    rep = json.loads((eval_dir / "eval.json").read_text())
    method = rep["per_method"][str(solve_dir / "solutions.jsonl")]
    assert "mean_igd" in method and method["mean_hv"] > 0


def test_adapt_command(workdir):
    tmp, ckpt, instances = workdir
    out = tmp / "adapt"
    rc = main(["adapt", "--ckpt", ckpt, "--instance", instances, "--steps", "2",
               "--lr", "0.001", "--front-prefs", "5", "--out", str(out)])
    assert rc == 0
    assert (out / "adapted.ckpt").exists()
    curve = (out / "adapt_curve.csv").read_text().splitlines()
    assert curve[0] == "step,hypervolume,mean_cost"
    hvs = [float(r.split(",")[1]) for r in curve[1:]]
    assert all(b >= a - 1e-12 for a, b in zip(hvs, hvs[1:]))


def test_train_command_writes_checkpoint(tmp_path):
    out = tmp_path / "run"
    rc = main(["train", "--problem", "motsp", "--nodes", "5", "--objectives", "2",
               "--preset", "desk", "--seed", "0", "--out", str(out),
               "--epochs", "1", "--steps-per-epoch", "2", "--batch", "2"])
    assert rc == 0
    assert (out / "epoch_0001.ckpt").exists()
    assert (out / "curve.csv").exists()
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["preset"] == "desk"


def test_conflicting_pref_sources_rejected(workdir, capsys):
    tmp, ckpt, instances = workdir
    rc = main(["solve", "--ckpt", ckpt, "--instances", instances,
               "--pref-grid", "3", "--pref-dasdennis", "4", "--out", str(tmp / "z")])
    assert rc == 2


def test_three_objective_dasdennis_sweep(tmp_path):
    ckpt = _write_ckpt(tmp_path / "m3.ckpt", kind="motsp", m=3)
    main(["sample", "--problem", "motsp", "--nodes", "5", "--objectives", "3",
          "--count", "1", "--out", str(tmp_path / "m3.jsonl")])
    out = tmp_path / "m3out"
    rc = main(["solve", "--ckpt", str(ckpt), "--instances", str(tmp_path / "m3.jsonl"),
               "--pref-dasdennis", "13", "--out", str(out)])
    assert rc == 0
    rows = (out / "solutions.jsonl").read_text().splitlines()
    assert len(rows) == 105  # simplex lattice size at p=13 for three objectives
