import csv
import json
import math

import numpy as np
import pytest
import torch
import yaml

from hgt import metrics
from hgt.backbone import read_feature_matrix, save_precomputed
from hgt.cli import main
from hgt.data import load_annotations
from hgt.schema import build_task_schema, save_schema
from hgt.training import load_checkpoint


def _train_yaml(path, data, **extra):
    cfg = {"data": str(data), "task": "clipping_with_cvs_prior", "hidden_dim": 8, "phase1_epochs": 1,
           "phase2_epochs": 1, "batch_size": 16, "max_steps_per_epoch": 3, "seed": 5}
    cfg.update(extra)
    path.write_text(yaml.safe_dump(cfg))
    return path


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["synthesize", "--out", str(root / "data"), "--n-sequences", "10", "--length", "30",
                 "--seed", "3"]) == 0
    cfg = _train_yaml(root / "train.yaml", root / "data")
    assert main(["train", "--config", str(cfg), "--out", str(root / "run")]) == 0
    return root


def test_synthesize_counts_and_manifest(workspace):
    data = workspace / "data"
    assert len(list((data / "annotations").glob("*.txt"))) == 10
    assert len(list((data / "features").glob("*.feat"))) == 10
    manifest = json.loads((data / "manifest.json").read_text())
    assert manifest["command"] == "synthesize" and manifest["seed"] == 3
    assert {"config", "seed", "schema_hash", "code_version", "started", "finished", "outputs"} <= set(manifest)
    seqs = load_annotations(data)
    assert len(seqs) == 10 and all(s.features.shape == (30, 16) for s in seqs)


def test_synthesize_byte_identical(workspace, tmp_path):
    assert main(["synthesize", "--out", str(tmp_path / "again"), "--n-sequences", "10", "--length", "30",
                 "--seed", "3"]) == 0
    for sub in ("annotations", "features"):
        for f in sorted((workspace / "data" / sub).iterdir()):
            assert f.read_bytes() == (tmp_path / "again" / sub / f.name).read_bytes()
    assert (workspace / "data" / "vocabulary.txt").read_bytes() == (tmp_path / "again" / "vocabulary.txt").read_bytes()


def test_train_outputs_and_manifest(workspace):
    run = workspace / "run"
    for name in ("best.pt", "last.pt", "metrics.jsonl", "manifest.json"):
        assert (run / name).exists()
    manifest = json.loads((run / "manifest.json").read_text())
    assert manifest["schema_hash"] == build_task_schema("clipping_with_cvs_prior").digest()
    assert manifest["config"]["hidden_dim"] == 8


def test_flags_override_file(workspace, tmp_path):
    cfg = _train_yaml(tmp_path / "t.yaml", workspace / "data", task="clipping")
    code = main(["train", "--config", str(cfg), "--out", str(tmp_path / "r"), "--phase1-epochs", "0",
                 "--variant", "recurrent_cell", "--seed", "9"])
    assert code == 0
    manifest = json.loads((tmp_path / "r" / "manifest.json").read_text())
    assert manifest["config"]["phase1_epochs"] == 0
    assert manifest["config"]["variant"] == "recurrent_cell"
    assert manifest["config"]["seed"] == 9 and manifest["config"]["task"] == "clipping"
    log = [json.loads(x) for x in (tmp_path / "r" / "metrics.jsonl").read_text().splitlines()]
    assert [r["phase"] for r in log] == [2]
    _, ckpt = load_checkpoint(tmp_path / "r" / "best.pt")
    assert ckpt["variant"] == "recurrent_cell"


def test_exit_codes(workspace, tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("learning_rate: -1\n")
    assert main(["train", "--config", str(bad), "--data", str(workspace / "data"), "--out", str(tmp_path / "x")]) == 2
    assert main(["train", "--data", str(tmp_path / "missing"), "--out", str(tmp_path / "x")]) == 3
    # a dataset whose features are NaN diverges immediately
    nan_data = tmp_path / "nan"
    assert main(["synthesize", "--out", str(nan_data), "--n-sequences", "4", "--length", "20"]) == 0
    for f in (nan_data / "features").glob("*.feat"):
        save_precomputed(f, np.full_like(read_feature_matrix(f), np.nan))
    cfg = _train_yaml(tmp_path / "n.yaml", nan_data)
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "n")]) == 4
    assert "step 1" in capsys.readouterr().err


def test_evaluate_reports(workspace):
    out = workspace / "eval"
    assert main(["evaluate", "--checkpoint", str(workspace / "run" / "best.pt"), "--data", str(workspace / "data"),
                 "--out", str(out), "--horizons", "0", "4", "--plots"]) == 0
    reports = sorted(out.glob("report_hp*.json"))
    assert [p.name for p in reports] == ["report_hp0.json", "report_hp4.json"]
    for h in (0, 4):
        report = json.loads((out / f"report_hp{h}.json").read_text())
        rows = [r for r in metrics.read_table(out / "table.csv") if r["horizon"] == str(h) and r["condition"] == ""
                and r["ap"] != ""]
        recomputed = math.fsum(float(r["ap"]) for r in rows) / len(rows)
        assert abs(recomputed - report["mean_ap"]) <= 1e-12
    for png in ("pr_hp0.png", "pr_hp4.png", "ap_vs_horizon.png"):
        assert (out / png).read_bytes()[:4] == b"\x89PNG"
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == "evaluate" and len(manifest["outputs"]["reports"]) == 2


def test_evaluate_refuses_hash_mismatch(workspace, tmp_path, capsys):
    code = main(["evaluate", "--checkpoint", str(workspace / "run" / "best.pt"), "--data", str(workspace / "data"),
                 "--out", str(tmp_path / "e"), "--task", "clipping"])
    assert code == 2
    assert "does not match" in capsys.readouterr().err


def test_evaluate_empty_set(workspace, tmp_path):
    empty = tmp_path / "empty"
    (empty / "annotations").mkdir(parents=True)
    (empty / "vocabulary.txt").write_text("x\n")
    code = main(["evaluate", "--checkpoint", str(workspace / "run" / "best.pt"), "--data", str(empty),
                 "--out", str(tmp_path / "e")])
    assert code == 3


def _read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_predict_single_window_matches_forward(workspace, tmp_path):
    feats = read_feature_matrix(workspace / "data" / "features" / "sim0.feat")
    save_precomputed(tmp_path / "short.feat", feats[:5])
    out = tmp_path / "pred.csv"
    assert main(["predict", "--checkpoint", str(workspace / "run" / "best.pt"), "--features",
                 str(tmp_path / "short.feat"), "--out", str(out)]) == 0
    header, *rows = _read_rows(out)
    assert header[:3] == ["t", "offset", "target_t"] and len(header) == 3 + 10
    assert len(rows) == 5
    assert [int(r[1]) for r in rows] == [0, 1, 2, 3, 4]
    model, _ = load_checkpoint(workspace / "run" / "best.pt")
    with torch.no_grad():
        probs = model(torch.from_numpy(feats[None, :5]), 4, 4)[0].numpy()
    got = np.array([[float(v) for v in r[3:]] for r in rows])
    np.testing.assert_allclose(got, probs, atol=1e-6)


def test_predict_errors(workspace, tmp_path):
    feats = read_feature_matrix(workspace / "data" / "features" / "sim0.feat")
    save_precomputed(tmp_path / "tiny.feat", feats[:4])
    ckpt = str(workspace / "run" / "best.pt")
    assert main(["predict", "--checkpoint", ckpt, "--features", str(tmp_path / "tiny.feat")]) == 3
    save_precomputed(tmp_path / "wide.feat", np.zeros((6, 3), np.float32))
    assert main(["predict", "--checkpoint", ckpt, "--features", str(tmp_path / "wide.feat")]) == 3


def test_validate_schema(tmp_path, capsys):
    assert main(["validate-schema", "--task", "triplet"]) == 0
    s = build_task_schema("cvs")
    save_schema(s, tmp_path / "ok.yaml")
    assert main(["validate-schema", "--schema", str(tmp_path / "ok.yaml")]) == 0
    text = (tmp_path / "ok.yaml").read_text().replace("hepatocystic-triangle]", "ghost]")
    (tmp_path / "bad.yaml").write_text(text)
    capsys.readouterr()
    assert main(["validate-schema", "--schema", str(tmp_path / "bad.yaml")]) == 2
    assert "ghost" in capsys.readouterr().out
