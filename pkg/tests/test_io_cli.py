import hashlib
import json
import os

import numpy as np
import pytest
import yaml

from bagofviews import io as bio
from bagofviews.cli import main
from bagofviews.config import RunConfig, load_config
from bagofviews.geometry import ConfigError, SphericalPose

# tiny but complete pipeline settings
SMALL = {
    "width": 96, "height": 96, "end_overlap": 0.2, "side_overlap": 0.2, "voxels": 32,
    "sweep_regions": [3], "sweep_words": [5, 10],
}


def tree_digest(root):
    h = {}
    for dirpath, _, files in os.walk(root):
        for f in files:
            p = os.path.join(dirpath, f)
            h[os.path.relpath(p, root)] = hashlib.sha256(open(p, "rb").read()).hexdigest()
    return h


@pytest.fixture
def small_cfg(tmp_path):
    p = tmp_path / "small.yaml"
    p.write_text(yaml.safe_dump(SMALL))
    return str(p)


@pytest.fixture
def scanned(tmp_path, small_cfg):
    out = tmp_path / "ds"
    assert main(["scan", "--config", small_cfg, "--out", str(out)]) == 0
    return str(out)


# ---- formats

def test_png_round_trips(tmp_path, rng):
    rgb = rng.integers(0, 256, (20, 30, 3)).astype(np.uint8)
    bio.write_rgb(tmp_path / "a.png", rgb)
    assert np.array_equal(bio.read_rgb(tmp_path / "a.png"), rgb)
    depth = rng.uniform(0.05, 10.0, (20, 30))
    depth[3, 4] = 0.0
    bio.write_depth(tmp_path / "d.png", depth)
    back = bio.read_depth(tmp_path / "d.png")
    assert back[3, 4] == 0.0
    assert np.max(np.abs(back - depth)) <= 0.0005 + 1e-12
    assert bio.depth_to_mm(np.array([70.0]))[0] == 0  # beyond 16-bit range -> invalid


def test_ply_round_trip_exact(tmp_path, rng):
    pts = rng.normal(size=(50, 3))
    cols = rng.integers(0, 256, (50, 3)).astype(np.uint8)
    faces = rng.integers(0, 50, (20, 3))
    bio.write_ply(tmp_path / "m.ply", pts, cols, faces)
    back = bio.read_ply(tmp_path / "m.ply")
    assert np.array_equal(back.points, pts)
    assert np.array_equal(back.colors, cols)
    assert np.array_equal(back.faces, faces)
    bio.write_ply(tmp_path / "c.ply", pts)
    c = bio.read_ply(tmp_path / "c.ply")
    assert c.colors is None and c.faces is None


def test_ply_parse_error_names_file(tmp_path):
    p = tmp_path / "broken.ply"
    p.write_text("ply\nformat ascii 1.0\nelement vertex 3\nproperty double x\nproperty double y\nproperty double z\nend_header\n0 0 0\n")
    with pytest.raises(bio.DatasetError, match="broken.ply"):
        bio.read_ply(p)


def test_dataset_missing_file(scanned):
    os.remove(os.path.join(scanned, "depth", "0002.png"))
    with pytest.raises(bio.DatasetError, match="view 2"):
        bio.load_dataset(scanned)


# ---- config

def test_config_defaults_and_validation(tmp_path):
    cfg = load_config()
    assert cfg == RunConfig()
    with pytest.raises(ConfigError):
        load_config(overrides={"words": 0})
    with pytest.raises(ConfigError):
        load_config(overrides={"end_overlap": 0.99})
    p = tmp_path / "c.yaml"
    p.write_text("bogus_key: 1\n")
    with pytest.raises(ConfigError):
        load_config(p)
    p.write_text("words: 12\nn_regions: 4\n")
    cfg = load_config(p, {"words": 20})
    assert (cfg.words, cfg.n_regions) == (20, 4)


# ---- commands

def test_scan_layout_and_determinism(tmp_path, small_cfg, scanned):
    ds = bio.load_dataset(scanned)
    n = ds.manifest["view_count"]
    assert len(os.listdir(os.path.join(scanned, "rgb"))) == n == len(ds.ids)
    assert sorted(os.listdir(os.path.join(scanned, "rgb")))[0] == "0000.png"
    rec = json.loads(open(os.path.join(scanned, "poses.jsonl")).readline())
    assert set(rec) == {"id", "radius_m", "azimuth_rad", "elevation_rad"}
    again = tmp_path / "ds2"
    assert main(["scan", "--config", small_cfg, "--out", str(again)]) == 0
    assert tree_digest(scanned) == tree_digest(again)


def test_scan_zero_overlap_wide_fov(tmp_path):
    out = tmp_path / "wide"
    rc = main(["scan", "--out", str(out), "--width", "64", "--height", "64", "--focal-length", "16",
               "--end-overlap", "0", "--side-overlap", "0"])
    assert rc == 0
    assert len(os.listdir(out / "rgb")) == len(os.listdir(out / "depth")) == 5


def test_refine_outputs_and_input_untouched(tmp_path, small_cfg, scanned, capsys):
    before = tree_digest(scanned)
    out = tmp_path / "ref"
    assert main(["refine", "--config", small_cfg, "--dataset", scanned, "--out", str(out)]) == 0
    assert tree_digest(scanned) == before
    for f in ("selected.txt", "report.json", "refined_mesh.ply", "baseline_mesh.ply", "bov.json", "utilities.jsonl"):
        assert (out / f).exists()
    rep = json.loads((out / "report.json").read_text())
    assert {"view_count", "baseline_view_count", "hausdorff_cm", "chamfer_cm", "coverage"} <= set(rep)
    assert "cm" in capsys.readouterr().out
    # the descriptor cache is reused on a second run
    out2 = tmp_path / "ref2"
    assert main(["refine", "--config", small_cfg, "--dataset", scanned, "--out", str(out2),
                 "--cache", str(out / "cache")]) == 0
    assert (out / "selected.txt").read_text() == (out2 / "selected.txt").read_text()
    assert main(["refine", "--config", small_cfg, "--dataset", scanned, "--out", os.path.join(scanned, "x")]) == 2


def test_refining_refined_dataset_shrinks(tmp_path, small_cfg, scanned):
    from bagofviews.pipeline import write_subset
    out = tmp_path / "ref"
    assert main(["refine", "--config", small_cfg, "--dataset", scanned, "--out", str(out)]) == 0
    sel = [int(t) for t in (out / "selected.txt").read_text().split()]
    sub = tmp_path / "sub"
    write_subset(bio.load_dataset(scanned), sel, str(sub))
    out2 = tmp_path / "ref_sub"
    assert main(["refine", "--config", small_cfg, "--dataset", str(sub), "--out", str(out2)]) == 0
    sel2 = [int(t) for t in (out2 / "selected.txt").read_text().split()]
    assert set(sel2) <= set(sel) and len(sel2) <= len(sel)


def test_plan_nbv_budget_one(tmp_path, small_cfg):
    out = tmp_path / "nbv"
    assert main(["plan-nbv", "--config", small_cfg, "--budget", "1", "--out", str(out)]) == 0
    assert len((out / "episode.jsonl").read_text().splitlines()) == 1
    rep = json.loads((out / "report.json").read_text())
    assert rep["view_count"] == 1
    assert len(os.listdir(out / "views" / "rgb")) == 1


def test_plan_nbv_rerun_identical(tmp_path, small_cfg):
    args = ["plan-nbv", "--config", small_cfg, "--budget", "4", "--candidates-per-step", "3"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a" / "episode.jsonl").read_bytes() == (tmp_path / "b" / "episode.jsonl").read_bytes()
    assert tree_digest(tmp_path / "a" / "views") == tree_digest(tmp_path / "b" / "views")


def test_reconstruct_from_dataset_and_episode(tmp_path, small_cfg, scanned):
    ids = tmp_path / "ids.txt"
    ids.write_text("0\n3\n5\n")
    out = tmp_path / "rec"
    assert main(["reconstruct", "--config", small_cfg, "--dataset", scanned, "--ids", str(ids), "--out", str(out)]) == 0
    assert bio.read_ply(out / "recon_mesh.ply").faces is not None
    nbv = tmp_path / "nbv"
    assert main(["plan-nbv", "--config", small_cfg, "--budget", "3", "--out", str(nbv)]) == 0
    out2 = tmp_path / "rec2"
    assert main(["reconstruct", "--config", small_cfg, "--episode", str(nbv / "episode.jsonl"), "--out", str(out2)]) == 0
    # replay re-renders the same views, so the fused cloud matches the episode's own
    assert np.array_equal(bio.read_ply(out2 / "recon_cloud.ply").points, bio.read_ply(nbv / "nbv_cloud.ply").points)


def test_eval_cases(tmp_path, rng, capsys):
    pts = rng.random((300, 3))
    a, b, bad = tmp_path / "a.ply", tmp_path / "b.ply", tmp_path / "bad.ply"
    bio.write_ply(a, pts)
    bio.write_ply(b, pts + [0.01, 0, 0])
    bad.write_text("not a ply\n")
    rep = tmp_path / "r.json"
    assert main(["eval", str(a), str(a), "--eps", "0.001", "--report", str(rep)]) == 0
    d = json.loads(rep.read_text())
    assert d["hausdorff"] == 0 and d["chamfer"] == 0 and d["coverage"] == 1.0
    assert main(["eval", str(a), str(b), "--eps", "0.001", "--report", str(rep)]) == 0
    d = json.loads(rep.read_text())
    assert d["hausdorff_cm"] == 1.0 and d["chamfer_cm"] == 1.0
    assert "hausdorff 1.0000 cm  chamfer 1.0000 cm" in capsys.readouterr().out
    assert main(["eval", str(bad), str(a), "--eps", "0.001"]) == 2
    assert "bad.ply" in capsys.readouterr().err


def test_sweep_table(tmp_path, small_cfg, scanned, capsys):
    out = tmp_path / "sw"
    assert main(["sweep", "--config", small_cfg, "--dataset", scanned, "--out", str(out)]) == 0
    lines = (out / "sweep.csv").read_text().splitlines()
    assert lines[0].startswith("n_regions,words,selected")
    assert len(lines) == 3
    assert "n_regions" in capsys.readouterr().out


def test_unwritable_output(tmp_path, small_cfg):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["scan", "--config", small_cfg, "--out", str(blocker / "sub")]) == 2
