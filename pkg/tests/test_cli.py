import json

import numpy as np
import pytest

from wimesh.cli import main
from wimesh.scenes import demo_scene_dict


@pytest.fixture(scope="module")
def small_config(tmp_path_factory):
    """Demo walking scene cut to 16 frames, with a one-iteration fit."""
    d = demo_scene_dict(16)
    d["fit"] = {"max_iters": 1, "sigma_schedule": [2.0]}
    d["render"] = {"samples": 100}
    path = tmp_path_factory.mktemp("cfg") / "small.json"
    path.write_text(json.dumps(d))
    return path


def test_missing_config_exit_code(tmp_path, capsys):
    code = main(["simulate", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path)])
    assert code == 3
    err = capsys.readouterr().err
    assert len(err.strip().splitlines()) == 1 and "not found" in err


def test_malformed_config_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{ broken")
    assert main(["simulate", "--config", str(bad), "--out", str(tmp_path)]) == 2
    bad.write_text(json.dumps({**demo_scene_dict(2), "pipeline": {"bogus": 1}}))
    assert main(["simulate", "--config", str(bad), "--out", str(tmp_path)]) == 2
    assert len(capsys.readouterr().err.strip().splitlines()) == 2


def test_missing_input_exit_code(tmp_path):
    assert main(["sanitize", str(tmp_path / "rx0.wcsi"), "--out", str(tmp_path)]) == 3


def test_corrupt_trace_exit_code(tmp_path, capsys):
    p = tmp_path / "rx0.wcsi"
    p.write_bytes(b"JUNKJUNK")
    assert main(["sanitize", str(p), "--out", str(tmp_path)]) == 4
    assert "offset 0" in capsys.readouterr().err


def test_eval_identical_is_zero(tmp_path, small_config):
    assert main(["simulate", "--config", str(small_config), "--out", str(tmp_path)]) == 0
    truth = tmp_path / "truth.json"
    assert main(["eval", str(truth), str(truth), "--out", str(tmp_path)]) == 0
    report = json.loads((tmp_path / "metrics.json").read_text())
    assert report["mean_pve_cm"] == 0.0 and report["mean_mpjpe_cm"] == 0.0
    assert report["loss"] == {"pose": 0.0, "shape": 0.0, "total": 0.0}
    assert len(report["per_frame"]["pve_cm"]) == 16


def test_pipeline_outputs_and_determinism(tmp_path, small_config):
    runs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["pipeline", "--config", str(small_config), "--seed", "7", "--out", str(out)]) == 0
        runs.append(out)
    a, b = runs
    assert (a / "metrics.json").read_bytes() == (b / "metrics.json").read_bytes()
    report = json.loads((a / "metrics.json").read_text())
    assert report["seed"] == 7 and report["config"]["seed"] == 7
    assert report["mean_pve_cm"] == pytest.approx(np.mean(report["per_frame"]["pve_cm"]), abs=1e-9)
    assert report["mean_mpjpe_cm"] == pytest.approx(np.mean(report["per_frame"]["mpjpe_cm"]), abs=1e-9)
    assert len(list((a / "meshes").glob("*.obj"))) == 15
    assert (a / "timings.json").exists()


def test_single_receiver(tmp_path, small_config):
    assert main(["simulate", "--config", str(small_config), "--receivers", "1", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "rx0.wcsi").exists() and not (tmp_path / "rx1.wcsi").exists()
