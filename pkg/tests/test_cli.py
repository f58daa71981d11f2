import csv
import json

import numpy as np
import pytest

from pswa.cli import main
from pswa.numerics import load_tensor, dump_tensor, ops


@pytest.fixture
def tiny_config(tmp_path):
    cfg = {
        "seed": 0,
        "model": {
            "image_h": 8,
            "image_w": 8,
            "patch": 4,
            "d_model": 8,
            "depth": 2,
            "num_heads": 2,
            "mlp_ratio": 1.0,
        },
        "schedule": {"timesteps": 10},
        "training": {
            "steps": 3,
            "lr": 1e-3,
            "batch_size": 4,
            "dataset_size": 8,
            "log_every": 0,
        },
        "diagnostics": {"survey_samples": 6, "sample_count": 2},
    }
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    return path


# ---------------------------------------------------------------------------
# gradcheck command
# ---------------------------------------------------------------------------

def test_gradcheck_numerics_passes(capsys):
    assert main(["gradcheck", "--module", "numerics"]) == 0
    out = capsys.readouterr().out
    assert "gradient checks passed" in out
    assert "FAIL" not in out
    assert out.count("ok ") >= 5


def test_gradcheck_detects_corrupted_backward(capsys, monkeypatch):
    # sabotage one op's recorded gradient; the checker must notice
    orig = ops.gelu

    def corrupted(x):
        y = orig(x)
        if y.node is not None:
            inner = y.node.backward
            y.node.backward = lambda g: tuple(1.05 * c for c in inner(g))
        return y

    monkeypatch.setattr(ops, "gelu", corrupted)
    assert main(["gradcheck", "--module", "numerics"]) == 1
    assert "FAIL" in capsys.readouterr().out


def test_gradcheck_unknown_module_is_usage_error(capsys):
    assert main(["gradcheck", "--module", "nosuch"]) == 2
    assert "error" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# train / sample
# ---------------------------------------------------------------------------

def test_train_writes_artifacts(tiny_config, tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["train", "--config", str(tiny_config), "--out", str(out)]) == 0
    stdout = capsys.readouterr().out
    assert "trained 3 steps" in stdout

    resolved = json.loads((out / "resolved_config.json").read_text())
    assert resolved["seed"] == 0
    assert resolved["model"]["d_model"] == 8
    assert resolved["training"]["steps"] == 3

    with open(out / "metrics.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["step", "loss", "lr", "elapsed_ms"]
    assert len(rows) == 4
    assert (out / "ckpt-final" / "manifest.json").exists()


def test_seed_and_precision_overrides_are_echoed(tiny_config, tmp_path):
    out = tmp_path / "run"
    code = main([
        "train", "--config", str(tiny_config), "--out", str(out),
        "--seed", "7", "--precision", "f32",
    ])
    assert code == 0
    resolved = json.loads((out / "resolved_config.json").read_text())
    assert resolved["seed"] == 7
    assert resolved["precision"] == "f32"


def test_sample_fresh_and_from_checkpoint(tiny_config, tmp_path):
    train_out = tmp_path / "train"
    assert main(["train", "--config", str(tiny_config), "--out", str(train_out)]) == 0

    fresh = tmp_path / "fresh"
    assert main(["sample", "--config", str(tiny_config), "--out", str(fresh), "--count", "2"]) == 0
    samples = load_tensor(fresh / "samples.pswt").data
    assert samples.shape == (2, 1, 8, 8)
    assert np.isfinite(samples).all()

    from_ckpt = tmp_path / "from_ckpt"
    code = main([
        "sample", "--config", str(tiny_config), "--out", str(from_ckpt),
        "--ckpt", str(train_out / "ckpt-final"), "--count", "2",
    ])
    assert code == 0
    trained = load_tensor(from_ckpt / "samples.pswt").data
    assert trained.shape == (2, 1, 8, 8)
    # training moved the parameters, so the draws must differ
    assert (trained != samples).any()


# ---------------------------------------------------------------------------
# diagnostics commands
# ---------------------------------------------------------------------------

def test_diag_distance_writes_histogram(tiny_config, tmp_path, capsys):
    out = tmp_path / "dist"
    assert main(["diag-distance", "--config", str(tiny_config), "--out", str(out)]) == 0
    assert "mean row distance" in capsys.readouterr().out
    with open(out / "distance_hist.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["bucket_lo", "bucket_hi", "count"]
    assert len(rows) == 17  # 16 buckets by default
    assert sum(int(r[2]) for r in rows[1:]) == 2 * 6  # row+col per record


def test_diag_spectrum_from_tensor_file(tmp_path, capsys):
    blob = tmp_path / "flat.pswt"
    dump_tensor(np.full((8, 8), 2.5), blob)
    out = tmp_path / "spec"
    assert main(["diag-spectrum", "--input", str(blob), "--out", str(out)]) == 0
    assert "band fraction (outer half of bins): 0.0000" in capsys.readouterr().out
    with open(out / "spectrum.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["radius", "log_magnitude"]
    assert len(rows) == 17
    profile = np.array([float(r[1]) for r in rows[1:]])
    assert profile[0] > 0 and (profile[1:] == 0).all()


def test_diag_spectrum_from_model(tiny_config, tmp_path):
    out = tmp_path / "spec"
    assert main(["diag-spectrum", "--config", str(tiny_config), "--out", str(out)]) == 0
    assert (out / "spectrum.csv").exists()


def test_flops_report_and_measured_cross_check(tiny_config, tmp_path, capsys):
    out = tmp_path / "flops"
    code = main(["flops", "--config", str(tiny_config), "--out", str(out), "--measured"])
    assert code == 0
    stdout = capsys.readouterr().out
    assert "instrumented forward" in stdout
    assert "MISMATCH" not in stdout
    text = (out / "flops.csv").read_text().splitlines()
    assert text[0].startswith("# ")
    assert text[1] == "component,flops,params"
    assert text[-1].startswith("total,")


# ---------------------------------------------------------------------------
# error handling
# ---------------------------------------------------------------------------

def test_unknown_config_key_is_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"model": {"f_strat": 0.5}}))
    assert main(["train", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert "f_strat" in capsys.readouterr().err


def test_malformed_json_is_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["train", "--config", str(bad)]) == 2
    assert "not valid JSON" in capsys.readouterr().err


def test_missing_config_file_is_exit_2(tmp_path):
    assert main(["train", "--config", str(tmp_path / "absent.json")]) == 2


def test_bad_flag_and_missing_command_exit_2(capsys):
    assert main(["train", "--nonsense"]) == 2
    assert main([]) == 2
    capsys.readouterr()


def test_help_exits_zero(capsys):
    assert main(["--help"]) == 0
    assert "gradcheck" in capsys.readouterr().out