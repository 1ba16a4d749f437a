import csv
import json

import numpy as np
import pytest

from dipli.cli import DEFAULTS, main, resolve_config
from dipli.core import read_image
from dipli.errors import InvalidConfig
from dipli.flow import read_flo


@pytest.fixture(scope="module")
def scene_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("scene")
    assert main(["synth", "--size", "64", "--frames", "3", "--seed", "4", "--out", str(out)]) == 0
    return out


def test_synth_layout(scene_dir):
    meta = json.loads((scene_dir / "scene.json").read_text())
    assert meta["K"] == 3 and meta["scale"] == 2
    assert read_image(scene_dir / "gt.pfm").shape == (1, 64, 64)
    assert read_image(scene_dir / "frame_02.pfm").shape == (1, 32, 32)
    pivot_flow = read_flo(scene_dir / f"flow_{meta['pivot_true']:02d}.flo")
    assert pivot_flow.magnitude().max() == 0.0


def test_config_precedence(tmp_path):
    cfg = resolve_config("desk")
    assert cfg["sgld"]["n_total"] == DEFAULTS["sgld"]["n_total"]
    cfg = resolve_config("paper", {"seed": 3, "net": {"width": 32}}, {"seed": 5})
    assert cfg["seed"] == 5                  # flag beats file
    assert cfg["net"]["width"] == 32         # file beats preset
    assert cfg["degradation"]["scale"] == 4  # preset beats default
    with pytest.raises(InvalidConfig):
        resolve_config("desk", {"sgld": {"bogus": 1}})


def test_restore_rerun_from_manifest_is_bit_identical(scene_dir, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    args = ["restore", "--scene", str(scene_dir), "--method", "dipli", "--iterations", "8", "--width", "4",
            "--out", str(a)]
    assert main(args) == 0
    manifest = json.loads((a / "manifest.json").read_text())
    assert manifest["config"]["sgld"]["n_total"] == 8
    assert all(len(h) == 40 for h in manifest["inputs"].values())
    assert main(["restore", "--config", str(a / "manifest.json"), "--out", str(b)]) == 0
    assert (a / "y_star.pfm").read_bytes() == (b / "y_star.pfm").read_bytes()
    assert json.loads((b / "manifest.json").read_text())["outputs"] == manifest["outputs"]
    rows = list(csv.reader(open(a / "trace.csv")))
    assert rows[0][:2] == ["n", "loss"] and len(rows) == 9
    assert (a / "preview.png").exists()


def test_restore_li_and_eval(scene_dir, tmp_path):
    assert main(["restore", "--scene", str(scene_dir), "--method", "li", "--out", str(tmp_path / "li")]) == 0
    assert (tmp_path / "li" / "quality.csv").exists()
    gt = scene_dir / "gt.pfm"
    assert main(["eval", str(gt), "--gt", str(gt), "--out", str(tmp_path / "ev")]) == 0
    metrics = json.loads((tmp_path / "ev" / "metrics.json").read_text())
    assert metrics["psnr"] == "inf" and metrics["ssim"] == pytest.approx(1.0)


def test_flow_command(scene_dir, tmp_path):
    assert main(["flow", str(scene_dir / "frame_00.pfm"), str(scene_dir / "frame_01.pfm"),
                 "--out", str(tmp_path)]) == 0
    assert read_flo(tmp_path / "flow.flo").shape == (32, 32)


def test_exit_codes(scene_dir, tmp_path, capsys):
    assert main(["synth", "--size", "64", "--scale", "3", "--out", str(tmp_path / "x")]) == 2
    assert capsys.readouterr().err.startswith("DimNotDivisible: ")
    assert main(["restore", "--scene", str(tmp_path / "missing"), "--out", str(tmp_path / "y")]) == 3
    assert capsys.readouterr().err.startswith("IoFailure: ")
    (tmp_path / "bad.json").write_text("{not json")
    assert main(["synth", "--config", str(tmp_path / "bad.json")]) == 2
    small = scene_dir / "frame_00.pfm"
    assert main(["eval", str(small), "--gt", str(scene_dir / "gt.pfm"), "--out", str(tmp_path / "e")]) == 2


def test_non_finite_exit_code(tmp_path, monkeypatch):
    from dipli import cli
    from dipli.errors import NonFiniteLoss

    def boom(*args, **kwargs):
        raise NonFiniteLoss(3, float("nan"))

    monkeypatch.setattr(cli, "run_dipli", boom)
    assert main(["restore", "--size", "64", "--frames", "2", "--out", str(tmp_path)]) == 4


def test_sweep_summary_and_failure(tmp_path):
    base = ["sweep", "--size", "32", "--width", "4", "--iterations", "3", "--out"]
    assert main(base + [str(tmp_path / "ok"), "--axis", "frames", "--values", "1", "2"]) == 0
    rows = list(csv.DictReader(open(tmp_path / "ok" / "summary.csv")))
    assert [r["value"] for r in rows] == ["1", "2"] and all(r["status"] == "ok" for r in rows)
    assert np.isfinite(float(rows[0]["psnr"]))
    # a 7-level pyramid does not fit a 16x16 LQ frame: that point fails, the sweep continues
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"tvl1": {"n_scales": 7}}))
    code = main(base + [str(tmp_path / "bad"), "--config", str(cfg), "--axis", "frames", "--values", "1", "2"])
    assert code == 5
    rows = list(csv.DictReader(open(tmp_path / "bad" / "summary.csv")))
    assert rows[0]["status"] == "ok" and rows[1]["status"].startswith("TooSmallForPyramid")
