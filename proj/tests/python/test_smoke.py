import json
import math
import os
import subprocess
from pathlib import Path

import pytest

import clab

CLI = os.environ.get("CLAB_CLI", "clab")


def tiny_config(root: Path) -> dict:
    return {
        "seed": 3,
        "output_dir": str(root / "run"),
        "data": {
            "train_dir": str(root / "data" / "train"),
            "val_dir": str(root / "data" / "val"),
            "train_videos": 6,
            "val_videos": 2,
            "frames_per_video": 4,
            "height": 64,
            "width": 64,
            "min_scale": 6.0,
            "max_scale": 10.0,
        },
        "train": {
            "epochs": 1,
            "steps_per_epoch": 4,
            "videos_per_batch": 2,
            "frames_per_video": 2,
            "lr_drop_epochs": [],
            "log_every": 2,
            "probe_videos": 2,
        },
        "cab": {"conv_channels": 8, "proj_hidden": 8, "proj_out": 4},
        "sweep": {"temperature": [0.1, 0.5], "weight": [0.005]},
    }


@pytest.fixture()
def workspace(tmp_path):
    cfg = tiny_config(tmp_path)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    return tmp_path, cfg, path


def run_cli(*args, check=True):
    proc = subprocess.run([CLI, *map(str, args)], capture_output=True, text=True)
    if check and proc.returncode != 0:
        raise AssertionError(f"{args} exited {proc.returncode}: {proc.stderr}")
    return proc


def test_geometry_and_schedule():
    assert clab.iou([0, 0, 2, 2], [1, 1, 3, 3]) == pytest.approx(1 / 7, abs=1e-15)
    assert clab.dlw_weight(0) == 0.005
    assert clab.dlw_weight(12500) == 0.0025
    assert clab.dlw_weight(25000) == 0.0
    assert clab.dlw_weight(30000) == 0.0
    assert clab.dlw_weight(10**6, 0.01, None) == 0.01
    kept = clab.nms([([0, 0, 10, 10], 0, 0.9), ([1, 1, 10, 10], 0, 0.8), ([1, 1, 10, 10], 1, 0.7)], 0.5)
    assert [(c, s) for _, c, s in kept] == [(0, 0.9), (1, 0.7)]


def test_info_nce_matches_oracle():
    z = [[1.0, 0.2, -0.3], [0.9, 0.1, -0.2], [-0.5, 1.0, 0.4], [-0.4, 0.8, 0.6]]
    videos = [0, 0, 1, 1]
    for tau in (0.05, 0.1, 0.5, 1.0):
        a = clab.info_nce_loss(z, videos, tau)
        b = clab.info_nce_oracle(z, videos, tau)
        assert abs(a - b) <= 1e-12 * max(1.0, abs(b))
    same = [[0.3, 0.3]] * 6
    assert clab.info_nce_loss(same, [0, 0, 1, 1, 2, 2], 0.1) == pytest.approx(math.log(5), abs=1e-9)
    assert clab.alignment_gap(z, videos) > 0
    with pytest.raises(ValueError):
        clab.info_nce_loss(z, videos, 0.0)


def test_config_validation():
    norm = json.loads(clab.normalized_config())
    assert norm["cab"]["temperature"] == 0.1
    assert norm["dlw"]["initial_weight"] == 0.005
    with pytest.raises(clab.ConfigError):
        clab.normalized_config('{"cab": {"temperature": 0}}')
    with pytest.raises(clab.ConfigError):
        clab.normalized_config('{"train": {"unknown": 1}}')


def test_generate_train_evaluate(workspace):
    root, cfg, _ = workspace
    text = json.dumps(cfg)
    clab.generate(root / "data", text)
    summary = clab.dataset_summary(root / "data" / "train")
    assert summary["videos"] == 6 and summary["frames"] == 24 and summary["boxes"] > 0
    clab.generate(root / "again", text)
    assert clab.dataset_summary(root / "again" / "train")["content_hash"] == summary["content_hash"]

    result = clab.train(root / "data" / "train", root / "data" / "val", root / "run", text)
    assert result["steps"] == 4
    assert result["has_auxiliary_branch"]
    assert [s for s, _ in result["alignment_gap_curve"]] == [0, 2, 4]
    assert 0.0 <= result["eval"]["map"] <= 1.0
    ev = clab.evaluate(root / "run" / "checkpoint.ckpt", root / "data" / "val")
    assert ev["map"] == result["eval"]["map"]


def test_verification_checks_pass():
    results = clab.run_checks(7)
    assert results and all(r["passed"] for r in results), [r for r in results if not r["passed"]]


def test_cli_end_to_end(workspace):
    root, cfg, config = workspace
    run_cli("generate", "--config", config)
    assert (root / "data" / "train" / "annotations.json").exists() or any((root / "data" / "train").iterdir())

    out = run_cli("train", "--config", config)
    run_dir = root / "run"
    for name in ["checkpoint.ckpt", "metrics.jsonl", "eval.json", "loss_curve.svg", "weight_schedule.svg",
                 "alignment_gap.svg", "report.txt", "config.json"]:
        assert (run_dir / name).exists(), name
    lines = [json.loads(l) for l in (run_dir / "metrics.jsonl").read_text().splitlines()]
    steps = [l for l in lines if "step" in l and "eval" not in l]
    assert [l["step"] for l in steps] == [0, 1, 2, 3]
    assert steps[0]["auxiliary_weight"] == 0.005
    assert "mAP" in out.stdout or "map" in out.stdout.lower()

    ev = run_cli("eval", "--config", config)
    assert "map" in ev.stdout.lower()

    sw = run_cli("sweep", "--config", config, "--axis", "temperature", "--out", root / "sweep")
    table = (root / "sweep" / "sweep.tsv").read_text().splitlines()
    assert len(table) == 3
    assert table[0].startswith("axis\tvalue")

    check = run_cli("check", "--seed", "5")
    assert "FAIL" not in check.stdout


def test_cli_errors(workspace):
    root, cfg, config = workspace
    missing = run_cli("train", "--config", config, check=False)
    assert missing.returncode != 0
    assert "error" in missing.stderr.lower()

    bad = root / "bad.json"
    bad.write_text('{"cab": {"temperature": 0}}')
    rejected = run_cli("train", "--config", bad, check=False)
    assert rejected.returncode != 0
    assert "temperature" in rejected.stderr

    unknown = run_cli("sweep", "--config", config, "--axis", "learning_rate", check=False)
    assert unknown.returncode != 0
