"""Command-line interface: full command chain, artifacts, and exit codes."""

from __future__ import annotations

import json

import pytest

from rgbdet import cli

CONFIG_YAML = """\
blocks:
  widths: [4, 8, 12, 16, 16]
  rep_dim: 8
  input_size: [32, 32]
transform:
  out_size: [32, 32]
synth:
  num_sequences: 2
  frames_per_sequence: 6
  image_size: [32, 32]
  num_actors: 1
  occluder_density: 0.0
  seed: 3
"""

SYNTH_ARGS = ["--sequences", "2", "--frames", "6", "--actors", "1", "--size", "32", "32",
              "--occluder-density", "0.0", "--seed", "3"]


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cliwork")
    cfg_file = root / "config.yaml"
    cfg_file.write_text(CONFIG_YAML)
    data = root / "data"
    rc = cli.main(["synth", "--out", str(data), "--split", "train", *SYNTH_ARGS])
    assert rc == 0
    return root, cfg_file, data


@pytest.fixture(scope="module")
def encoder_ckpt(workspace):
    root, cfg_file, data = workspace
    run_dir = root / "pretrain-run"
    rc = cli.main(
        ["pretrain", "--data", str(data), "--config", str(cfg_file), "--epochs", "1",
         "--steps-per-epoch", "2", "--batch-size", "2", "--run-dir", str(run_dir)]
    )
    assert rc == 0
    return run_dir / "encoder.ckpt"


@pytest.fixture(scope="module")
def detector_ckpt(workspace, encoder_ckpt):
    root, cfg_file, data = workspace
    run_dir = root / "finetune-run"
    rc = cli.main(
        ["finetune", "--data", str(data), "--config", str(cfg_file),
         "--encoder", str(encoder_ckpt), "--epochs", "1", "--steps-per-epoch", "2",
         "--batch-size", "2", "--run-dir", str(run_dir)]
    )
    assert rc == 0
    return run_dir / "detector.ckpt"


@pytest.fixture(scope="module")
def detections_json(workspace, detector_ckpt):
    root, _, data = workspace
    run_dir = root / "detect-run"
    rc = cli.main(
        ["detect", "--data", str(data), "--split", "train", "--checkpoint", str(detector_ckpt),
         "--conf-threshold", "0.001", "--run-dir", str(run_dir)]
    )
    assert rc == 0
    return run_dir / "detections.json"


def test_synth_writes_dataset_tree(workspace):
    _, _, data = workspace
    seq_dirs = sorted(p.name for p in (data / "train").iterdir() if p.is_dir())
    assert len(seq_dirs) == 2
    first = data / "train" / seq_dirs[0]
    assert sorted(p.name for p in (first / "rgb").iterdir()) == [
        f"{i:06d}.png" for i in range(6)
    ]
    assert sorted(p.name for p in (first / "depth").iterdir()) == [
        f"{i:06d}.png" for i in range(6)
    ]
    annotations = json.loads((data / "train" / "annotations.json").read_text())
    assert len(annotations) == 12
    assert all(len(rec["boxes"]) >= 1 for rec in annotations)
    assert (data / "train" / "config.yaml").is_file()


def test_synth_is_deterministic(workspace, tmp_path):
    _, _, data = workspace
    rc = cli.main(["synth", "--out", str(tmp_path / "again"), "--split", "train", *SYNTH_ARGS])
    assert rc == 0
    seq = sorted(p.name for p in (data / "train").iterdir() if p.is_dir())[0]
    rel_rgb = f"train/{seq}/rgb/000002.png"
    assert (tmp_path / "again" / rel_rgb).read_bytes() == (data / rel_rgb).read_bytes()
    assert (tmp_path / "again" / "train" / "annotations.json").read_bytes() == (
        data / "train" / "annotations.json"
    ).read_bytes()


def test_pretrain_artifacts(encoder_ckpt):
    run_dir = encoder_ckpt.parent
    assert encoder_ckpt.is_file()
    assert (run_dir / "config.yaml").is_file()
    log = (run_dir / "train_log.csv").read_text().splitlines()
    assert log[0] == "step,lr,loss_mcl,loss_rgbd,loss_rgb_d,loss_d_rgb"
    assert len(log) == 1 + 2


def test_finetune_artifacts(detector_ckpt):
    run_dir = detector_ckpt.parent
    assert detector_ckpt.is_file()
    assert (run_dir / "train_log.csv").is_file()
    from rgbdet.checkpoint import read_checkpoint

    state = read_checkpoint(detector_ckpt)
    assert state.meta["kind"] == "detector"
    assert state.meta["config"]["blocks"]["input_size"] == [32, 32]


def test_detect_artifacts(detections_json):
    payload = json.loads(detections_json.read_text())
    assert len(payload) == 12  # one record per frame
    assert {rec["seq_id"] for rec in payload} and all("detections" in rec for rec in payload)
    assert any(rec["detections"] for rec in payload)


def test_eval_writes_metrics_and_prints_summary(workspace, detections_json, capsys):
    root, _, data = workspace
    run_dir = root / "eval-run"
    rc = cli.main(
        ["eval", "--data", str(data), "--split", "train", "--preds", str(detections_json),
         "--run-dir", str(run_dir)]
    )
    assert rc == 0
    out = capsys.readouterr().out
    assert "ap50=" in out and "ap=" in out
    lines = (run_dir / "metrics.csv").read_text().splitlines()
    assert lines[0] == "dataset,split,class,threshold,ap"
    assert len(lines) == 1 + 10 + 2


def test_eval_custom_thresholds_and_method(workspace, detections_json):
    root, _, data = workspace
    out_csv = root / "metrics-custom.csv"
    rc = cli.main(
        ["eval", "--data", str(data), "--split", "train", "--preds", str(detections_json),
         "--thresholds", "0.5,0.75", "--method", "allpoint", "--out", str(out_csv),
         "--run-dir", str(root / "eval-run2")]
    )
    assert rc == 0
    lines = out_csv.read_text().splitlines()
    assert len(lines) == 1 + 2 + 2


def test_output_root_env_var(workspace, detections_json, monkeypatch, tmp_path):
    _, _, data = workspace
    monkeypatch.setenv("RGBDET_OUTPUT_ROOT", str(tmp_path / "envroot"))
    rc = cli.main(
        ["eval", "--data", str(data), "--split", "train", "--preds", str(detections_json)]
    )
    assert rc == 0
    runs = list((tmp_path / "envroot").iterdir())
    assert len(runs) == 1 and runs[0].name.startswith("eval-")
    assert (runs[0] / "metrics.csv").is_file()


# Failure exit codes ---------------------------------------------------------------


def test_missing_data_exits_2(tmp_path, capsys):
    rc = cli.main(["pretrain", "--data", str(tmp_path / "nothing"), "--epochs", "1",
                   "--run-dir", str(tmp_path / "run")])
    assert rc == 2
    assert capsys.readouterr().err.startswith("error:")


def test_unknown_config_key_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("pretrain:\n  epochz: 3\n")
    rc = cli.main(["synth", "--out", str(tmp_path / "d"), "--config", str(bad), *SYNTH_ARGS])
    assert rc == 2
    assert "epochz" in capsys.readouterr().err


def test_corrupt_checkpoint_exits_2(workspace, tmp_path, capsys):
    _, _, data = workspace
    junk = tmp_path / "junk.ckpt"
    junk.write_bytes(b"this is not a checkpoint")
    rc = cli.main(["detect", "--data", str(data), "--split", "train",
                   "--checkpoint", str(junk), "--run-dir", str(tmp_path / "run")])
    assert rc == 2
    assert "not a checkpoint" in capsys.readouterr().err


def test_missing_predictions_exits_2(workspace, tmp_path, capsys):
    _, _, data = workspace
    rc = cli.main(["eval", "--data", str(data), "--split", "train",
                   "--preds", str(tmp_path / "missing.json"), "--run-dir", str(tmp_path / "run")])
    assert rc == 2
    assert "not found" in capsys.readouterr().err


def test_finetune_timclr_without_encoder_exits_2(workspace, tmp_path, capsys):
    root, cfg_file, data = workspace
    rc = cli.main(["finetune", "--data", str(data), "--config", str(cfg_file),
                   "--epochs", "1", "--steps-per-epoch", "1",
                   "--run-dir", str(tmp_path / "run")])
    assert rc == 2
    assert "requires --encoder" in capsys.readouterr().err


# gradcheck ------------------------------------------------------------------------


def test_gradcheck_passes_with_default_tolerance(capsys):
    rc = cli.main(["gradcheck", "--samples", "3"])
    assert rc == 0
    out = capsys.readouterr().out
    assert "contrastive loss" in out and "detection loss" in out and "FAIL" not in out


def test_gradcheck_fails_with_impossible_tolerance():
    rc = cli.main(["gradcheck", "--samples", "2", "--tolerance", "1e-30"])
    assert rc == 1
