import csv
import json
from pathlib import Path

import numpy as np
import pytest

from emstagcn.cli import run_command
from emstagcn.data import dataset_read

TINY = {
    "model": {"channels": [8, 8], "strides": [1, 2], "window": 16, "sam_kernel": 3},
    "train": {"batch_size": 8, "total_epochs": 2, "milestones": [1]},
}


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    (tmp_path / "cfg.json").write_text(json.dumps(TINY))
    assert run_command(["synth", "--out", "d", "--classes", "4", "--per-class", "2", "--joints", "7",
                        "--frames", "12", "--seed", "42"]) == 0
    return tmp_path


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_synth_counts(tmp_path):
    assert run_command(["synth", "--out", str(tmp_path / "d"), "--classes", "4", "--per-class", "16",
                        "--joints", "11", "--frames", "64", "--seed", "42"]) == 0
    ds = dataset_read(tmp_path / "d")
    assert len(ds) == 64 and ds.samples[0].shape == (3, 64, 11, 1)


def test_train_eval_export_pipeline(workdir, capsys):
    assert run_command(["train", "--data", "d", "--stream", "joint", "--config", "cfg.json", "--out", "run1"]) == 0
    for name in ("model.json", "model.bin", "metrics.jsonl", "effective_config.json"):
        assert (workdir / "run1" / name).is_file()
    records = [json.loads(l) for l in (workdir / "run1" / "metrics.jsonl").read_text().splitlines()]
    assert [r["epoch"] for r in records] == [0, 1] and records[1]["lr"] == 0.001
    assert run_command(["eval", "--ckpt", "run1/model", "--data", "d", "--topk", "1,5",
                        "--scores-out", "s/scores_joint.json"]) == 0
    out = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert out["top5"] == 1.0
    scores = json.loads((workdir / "s" / "scores_joint.json").read_text())
    assert len(scores) == 8 and all(abs(sum(v) - 1) < 1e-9 for v in scores.values())


def test_eval_missing_checkpoint(workdir, capsys):
    assert run_command(["eval", "--ckpt", "run1/model", "--data", "d", "--topk", "1,5"]) == 2
    assert "run1/model" in capsys.readouterr().err


def test_usage_errors(capsys):
    assert run_command(["bogus"]) == 1
    assert run_command(["train", "--nope"]) == 1
    assert run_command([]) == 1
    assert "usage" in capsys.readouterr().err


def test_unknown_config_keys_rejected(workdir, capsys):
    Path("bad.json").write_text(json.dumps({"model": {"dropout": 0.1}}))
    assert run_command(["train", "--data", "d", "--config", "bad.json", "--out", "r"]) == 1
    Path("bad.json").write_text(json.dumps({"learning_rate": 0.1}))
    assert run_command(["train", "--data", "d", "--config", "bad.json", "--out", "r"]) == 1
    assert "unknown" in capsys.readouterr().err


def test_contradicting_data_bound_field(workdir):
    Path("c.json").write_text(json.dumps({**TINY, "model": {**TINY["model"], "num_classes": 9}}))
    assert run_command(["train", "--data", "d", "--config", "c.json", "--out", "r"]) == 1


def test_effective_config_reproduces_run(workdir):
    assert run_command(["train", "--data", "d", "--config", "cfg.json", "--out", "a", "--seed", "3"]) == 0
    assert run_command(["train", "--config", "a/effective_config.json", "--out", "b"]) == 0
    assert (workdir / "a" / "metrics.jsonl").read_bytes() == (workdir / "b" / "metrics.jsonl").read_bytes()
    assert (workdir / "a" / "model.bin").read_bytes() == (workdir / "b" / "model.bin").read_bytes()


def test_resume_continues_the_run(workdir):
    assert run_command(["train", "--data", "d", "--config", "cfg.json", "--out", "full"]) == 0
    assert run_command(["train", "--data", "d", "--config", "cfg.json", "--out", "part", "--stop-after", "1"]) == 0
    assert run_command(["train", "--resume", "part/model", "--out", "part"]) == 0
    full = [json.loads(l) for l in (workdir / "full" / "metrics.jsonl").read_text().splitlines()]
    part = [json.loads(l) for l in (workdir / "part" / "metrics.jsonl").read_text().splitlines()]
    assert [r["epoch"] for r in part] == [0, 1]
    assert abs(full[-1]["mean_loss"] - part[-1]["mean_loss"]) <= 1e-12


def test_export_graphs_of_fresh_checkpoint(workdir):
    Path("z.json").write_text(json.dumps({**TINY, "train": {**TINY["train"], "total_epochs": 0, "milestones": []}}))
    assert run_command(["train", "--data", "d", "--config", "z.json", "--out", "fresh"]) == 0
    assert run_command(["export", "--ckpt", "fresh/model", "--what", "graphs", "--out", "g1"]) == 0
    assert run_command(["export", "--ckpt", "fresh/model", "--what", "graphs", "--out", "g2"]) == 0
    from emstagcn.train import checkpoint_load

    model, _ = checkpoint_load("fresh/model")
    for l in range(2):
        for k in range(3):
            rows = read_rows(workdir / "g1" / f"adjacency_k{k}_layer{l}.csv")
            assert len(rows) == 7 and all(len(r) == 7 for r in rows)
            assert np.array_equal(np.array(rows, dtype=float), model.blocks[l].agcl.adjacency.matrices[k])
    gates = read_rows(workdir / "g1" / "gate.csv")
    assert gates[0] == ["layer", "alpha"] and all(float(a) == 0.0 for _, a in gates[1:])
    for f in (workdir / "g1").iterdir():
        assert f.read_bytes() == (workdir / "g2" / f.name).read_bytes()


def test_export_attention(workdir, capsys):
    Path("z.json").write_text(json.dumps({**TINY, "train": {**TINY["train"], "total_epochs": 0, "milestones": []}}))
    assert run_command(["train", "--data", "d", "--config", "z.json", "--out", "r"]) == 0
    args = ["export", "--ckpt", "r/model", "--what", "attention", "--data", "d", "--sample", "c01_s0000"]
    assert run_command(args + ["--out", "a1"]) == 0
    assert run_command(args + ["--out", "a2"]) == 0
    sam = np.array(read_rows(workdir / "a1" / "sam_layer0_samplec01_s0000.csv"), dtype=float)
    assert sam.shape == (1, 7) and np.all(sam == 0.5)
    tam = np.array(read_rows(workdir / "a1" / "tam_kernels_layer1_samplec01_s0000.csv"), dtype=float)
    assert tam.shape == (8, 5) and np.all(np.abs(tam.sum(axis=1) - 1) <= 1e-9)
    cam = np.array(read_rows(workdir / "a1" / "cam_layer1_samplec01_s0000.csv"), dtype=float)
    assert cam.shape == (1, 8)
    for f in (workdir / "a1").iterdir():
        assert f.read_bytes() == (workdir / "a2" / f.name).read_bytes()
    assert run_command(args[:-1] + ["nope", "--out", "a3"]) == 1


def test_export_uses_seventeen_significant_digits(workdir):
    assert run_command(["train", "--data", "d", "--config", "cfg.json", "--out", "r"]) == 0
    assert run_command(["export", "--ckpt", "r/model", "--what", "graphs", "--out", "g"]) == 0
    from emstagcn.train import checkpoint_load

    model, _ = checkpoint_load("r/model")
    rows = read_rows(workdir / "g" / "adjacency_k1_layer0.csv")
    expect = model.blocks[0].agcl.adjacency.matrices[1] + model.blocks[0].agcl.B[1].data
    assert np.array_equal(np.array(rows, dtype=float), expect)  # round-trips exactly


def test_fuse_command(workdir, capsys):
    assert run_command(["train", "--data", "d", "--config", "cfg.json", "--out", "j", "--stream", "joint"]) == 0
    assert run_command(["train", "--data", "d", "--config", "cfg.json", "--out", "b", "--stream", "bone"]) == 0
    assert run_command(["eval", "--ckpt", "j/model", "--data", "d"]) == 0
    assert run_command(["eval", "--ckpt", "b/model", "--data", "d"]) == 0
    capsys.readouterr()
    assert run_command(["fuse", "--scores", "j/scores_joint.json", "b/scores_bone.json", "--data", "d",
                        "--out", "f.json", "--topk", "1"]) == 0
    line = json.loads(capsys.readouterr().out.strip())
    assert line["stream"] == "joint+bone" and 0 <= line["top1"] <= 1
    assert run_command(["fuse", "--scores", "j/scores_joint.json", "--weights", "1,2", "--out", "f.json"]) == 1
    assert run_command(["fuse", "--scores", "missing.json", "--out", "f.json"]) == 2


def test_preprocess_streams(workdir):
    assert run_command(["preprocess", "--input", "d", "--out", "p",
                        "--streams", "joint,bone,joint-motion,bone-motion,joint-length,bone-length"]) == 0
    assert dataset_read(workdir / "p" / "bone-length").samples[0].shape[0] == 1
    assert run_command(["preprocess", "--input", "d", "--out", "p", "--streams", "elbow"]) == 1


def test_preprocess_raw_ntu_files(tmp_path):
    from test_data import ntu_text

    raw = tmp_path / "raw"
    raw.mkdir()
    (raw / "S001C001P001R001A003.skeleton").write_text(ntu_text([[("a", np.ones((25, 3)), 2)]] * 3))
    assert run_command(["preprocess", "--input", str(raw), "--out", str(tmp_path / "p"), "--streams", "joint"]) == 0
    ds = dataset_read(tmp_path / "p" / "joint")
    assert ds.samples[0].label == 2 and ds.topology.name == "ntu25"
    (raw / "S001C001P001R001A004.skeleton").write_text("3\n1\n")
    assert run_command(["preprocess", "--input", str(raw), "--out", str(tmp_path / "q")]) == 2


def test_gradcheck_and_params(capsys):
    assert run_command(["gradcheck", "--seed", "0"]) == 0
    assert capsys.readouterr().out.strip().splitlines()[-1].endswith("PASS")
    assert run_command(["params"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[-1] == "total\t4051648"
    assert "blocks.0.agcl\t3284" in lines
