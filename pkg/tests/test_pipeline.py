import json

import numpy as np
import pytest

from flairhi import pipeline as pl
from flairhi.config import PipelineConfig
from flairhi.nifti import read_mask, read_volume
from flairhi.phantom import save_phantom

ARTIFACTS = ["denoised.nii", "normalized.nii", "sobel.nii", "intermediate.nii", "hi_map.nii",
             "labels.nii", "wm_initial.nii", "gm_initial.nii", "wm_estimated.nii",
             "metrics.json", "metrics.csv", "brightness.png", "wm_comparison.png",
             "stages.json", "config.json"]


@pytest.fixture(scope="module")
def inputs(tmp_path_factory, phantom):
    return save_phantom(phantom, tmp_path_factory.mktemp("phantom"))


def config_for(inputs, out, **kw):
    return PipelineConfig(
        flair=str(inputs["flair"]), t1=str(inputs["t1"]), brain_mask=str(inputs["brain_mask"]),
        wm_atlas=str(inputs["wm_atlas"]), gm_atlas=str(inputs["gm_atlas"]),
        lesion_gt=(str(inputs["lesion_truth"]),), out=str(out), threads=1, **kw)


@pytest.fixture(scope="module")
def first_run(inputs, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    cfg = config_for(inputs, out)
    return cfg, pl.run_pipeline(cfg)


def snapshot(out):
    return {p.name: p.read_bytes() for p in sorted(out.iterdir()) if p.is_file()}


def test_all_artifacts(first_run):
    cfg, res = first_run
    names = {p.name for p in res.out.iterdir()}
    assert set(ARTIFACTS) <= names
    assert any(n.startswith("overlay_") and n.endswith(".png") for n in names)
    assert not any(n.endswith(".partial") for n in names)
    d = json.loads((res.out / "metrics.json").read_text())
    ipds = {(e["image"], e["tissue"]): e["ipd_percent"] for e in d["metrics"]["brightness"]}
    assert ipds[("hi_map", "wm")] > ipds[("flair", "wm")]
    assert d["config_hash"] == cfg.config_hash
    assert d["config"]["wm"]["k_sigma"] == 3.0


def test_outputs_consistent(first_run):
    _, res = first_run
    wm0 = read_mask(res.out / "wm_initial.nii")
    est = read_mask(res.out / "wm_estimated.nii")
    assert (est >= wm0).all()
    hi = np.asarray(read_volume(res.out / "hi_map.nii"))
    assert hi.min() >= 0 and hi.max() <= 1


def test_rerun_skips_everything(first_run):
    cfg, res = first_run
    before = snapshot(res.out)
    again = pl.run_pipeline(cfg)
    assert again.ran == []
    assert set(again.skipped) == set(res.ran)
    assert snapshot(res.out) == before


def test_changed_parameter_reruns_dependents_only(inputs, first_run, tmp_path):
    cfg, res = first_run
    out = tmp_path / "copy"
    out.mkdir()
    for name, blob in snapshot(res.out).items():
        (out / name).write_bytes(blob)
    changed = pl.run_pipeline(config_for(inputs, out).override(k_sigma=1.0))
    assert changed.ran == ["wm_estimate", "metrics", "overlays"]
    assert (read_mask(out / "wm_estimated.nii") >= read_mask(res.out / "wm_estimated.nii")).all()


def test_resumed_equals_fresh(inputs, first_run, tmp_path):
    cfg, res = first_run
    out = tmp_path / "partial_copy"
    out.mkdir()
    for name in ["denoised.nii", "normalized.nii", "stages.json"]:
        (out / name).write_bytes((res.out / name).read_bytes())
    resumed = pl.run_pipeline(config_for(inputs, out))
    assert resumed.skipped == ["denoise", "normalize"]
    fresh, now = snapshot(res.out), snapshot(out)
    for name in ARTIFACTS:
        if name != "config.json":
            assert now[name] == fresh[name], name


def test_failing_stage_leaves_partial(inputs, tmp_path, monkeypatch):
    def boom(report, path):
        raise RuntimeError("figure backend exploded")

    monkeypatch.setattr(pl, "brightness_figure", boom)
    with pytest.raises(pl.StageError, match="stage 'metrics' failed"):
        pl.run_pipeline(config_for(inputs, tmp_path, overlays=False))
    assert (tmp_path / "metrics.json.partial").exists()
    assert not (tmp_path / "metrics.json").exists()
    assert "metrics" not in json.loads((tmp_path / "stages.json").read_text())


def test_missing_flair(tmp_path):
    with pytest.raises(pl.InputError, match="FLAIR"):
        pl.run_pipeline(PipelineConfig(flair=str(tmp_path / "none.nii"), out=str(tmp_path)))


def test_shape_mismatch_is_input_error(inputs, tmp_path):
    from flairhi.nifti import write_mask
    bad = tmp_path / "small.nii"
    write_mask(np.ones((4, 4, 4), bool), bad)
    cfg = PipelineConfig(flair=str(inputs["flair"]), brain_mask=str(bad), out=str(tmp_path))
    with pytest.raises(pl.InputError, match="shape"):
        pl.run_pipeline(cfg)


def test_flair_only_run(inputs, tmp_path):
    res = pl.run_pipeline(PipelineConfig(flair=str(inputs["flair"]), out=str(tmp_path),
                                         threads=1))
    assert "hi_map.nii" in res.outputs and "wm_estimated.nii" not in res.outputs
    assert res.report is None


def test_precomputed_labels(inputs, first_run, tmp_path):
    _, res = first_run
    cfg = config_for(inputs, tmp_path).override(labels=str(res.out / "labels.nii"), t1=None)
    out = pl.run_pipeline(cfg)
    assert (read_mask(out.out / "wm_initial.nii") == read_mask(res.out / "wm_initial.nii")).all()
