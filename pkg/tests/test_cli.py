import json
import subprocess
import sys

import numpy as np
import pytest

from flairhi.cli import build_parser, main
from flairhi.nifti import read_mask, read_volume, write_volume


@pytest.fixture(scope="module")
def ph_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("ph")
    assert main(["phantom", "--out", str(out), "-q"]) == 0
    return out


def test_parser_has_every_subcommand():
    sub = build_parser()._subparsers._group_actions[0].choices
    assert set(sub) == {"denoise", "normalize", "intermediate", "himap", "wm-estimate",
                        "metrics", "phantom", "pipeline"}


def test_phantom_outputs(ph_dir):
    spec = json.loads((ph_dir / "phantom.json").read_text())
    assert spec["dims"] == [64, 64, 48]
    assert read_mask(ph_dir / "lesion_truth.nii").sum() > 0


def test_stage_by_stage(ph_dir, tmp_path, capsys):
    p, o = str(ph_dir), str(tmp_path)
    bm = ["--brain-mask", f"{p}/brain_mask.nii", "--out", o, "--threads", "1", "-q"]
    assert main(["denoise", "--flair", f"{p}/flair.nii", *bm]) == 0
    assert main(["normalize", "--input", f"{o}/denoised.nii", *bm]) == 0
    assert main(["intermediate", "--input", f"{o}/normalized.nii", *bm]) == 0
    assert main(["himap", "--input", f"{o}/intermediate.nii", *bm]) == 0
    assert main(["wm-estimate", "--hi-map", f"{o}/hi_map.nii", "--wm-atlas", f"{p}/wm_atlas.nii",
                 "--gm-atlas", f"{p}/gm_atlas.nii", "--flair", f"{o}/normalized.nii",
                 "--t1", f"{p}/t1.nii", *bm]) == 0
    assert main(["metrics", "--flair", f"{p}/flair.nii", "--hi-map", f"{o}/hi_map.nii",
                 "--wm-initial", f"{o}/wm_initial.nii", "--gm-initial", f"{o}/gm_initial.nii",
                 "--wm-estimated", f"{o}/wm_estimated.nii",
                 "--lesion-gt", f"{p}/lesion_truth.nii", *bm]) == 0
    printed = capsys.readouterr().out
    assert "IPD" in printed and "DSC" in printed
    for name in ["denoised", "normalized", "sobel", "intermediate", "hi_map", "wm_initial",
                 "wm_estimated"]:
        assert (tmp_path / f"{name}.nii").exists()
    for name in ["metrics.json", "metrics.csv", "brightness.png", "wm_comparison.png"]:
        assert (tmp_path / name).exists()
    est, wm0 = read_mask(tmp_path / "wm_estimated.nii"), read_mask(tmp_path / "wm_initial.nii")
    assert (est >= wm0).all()


def test_pipeline_with_config_file_and_flag_override(ph_dir, tmp_path):
    p = str(ph_dir)
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"flair": f"{p}/flair.nii", "brain_mask": f"{p}/brain_mask.nii",
                               "wm_atlas": f"{p}/wm_atlas.nii", "bins": 512,
                               "wm": {"k_sigma": 3.0}}))
    out = tmp_path / "run"
    code = main(["pipeline", "--config", str(cfg), "--k-sigma", "1", "--out", str(out),
                 "--threads", "1", "--no-overlays", "-q"])
    assert code == 0
    saved = json.loads((out / "config.json").read_text())["config"]
    assert saved["wm"]["k_sigma"] == 1.0 and saved["bins"] == 512
    assert (out / "wm_estimated.nii").exists()
    assert not list(out.glob("overlay_*"))


def test_missing_input_exit_2(tmp_path, capsys):
    code = main(["pipeline", "--flair", str(tmp_path / "absent.nii"), "--out", str(tmp_path)])
    assert code == 2
    err = capsys.readouterr().err
    assert "FLAIR" in err and "absent.nii" in err


def test_missing_required_flag_exit_2(tmp_path, capsys):
    assert main(["wm-estimate", "--out", str(tmp_path)]) == 2
    assert "HI map" in capsys.readouterr().err


def test_stage_failure_exit_1(tmp_path, capsys):
    bad = tmp_path / "neg.nii"
    write_volume(np.full((4, 4, 4), -5.0), bad)
    mask = tmp_path / "m.nii"
    write_volume(np.ones((4, 4, 4)), mask, "uint8")
    code = main(["normalize", "--input", str(bad), "--brain-mask", str(mask),
                 "--out", str(tmp_path)])
    assert code == 1
    assert "stage 'normalize' failed" in capsys.readouterr().err


def test_invalid_config_exit_2(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"theta_step": 7}))
    assert main(["pipeline", "--config", str(cfg), "--out", str(tmp_path)]) == 2


def test_console_script_module_entry(tmp_path):
    r = subprocess.run([sys.executable, "-m", "flairhi.cli", "phantom", "--out",
                        str(tmp_path), "--seed", "3", "-q"], capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    assert json.loads((tmp_path / "phantom.json").read_text())["seed"] == 3
    assert np.asarray(read_volume(tmp_path / "flair.nii")).shape == (64, 64, 48)
