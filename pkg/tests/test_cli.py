import json
import os

import numpy as np
import pytest
from scipy.ndimage import gaussian_filter1d
from scipy.signal import find_peaks

from texsplat import cli
from texsplat.imageio import read_float_array, read_image
from texsplat.trainer import DivergenceError

SMALL = ["--n-gaussians", "80", "--n-cameras", "3", "--width", "32", "--height", "32"]
FAST = ["--steps", "3", "--K", "2", "--angle-step", "90", "--max-per-cell", "8"]


@pytest.fixture(scope="module")
def fixture_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("fx") / "planes"
    assert cli.main(["make-synthetic", "--kind", "planes", *SMALL, "--texture", "stripes",
                     "--texture-size", "64", "--out", str(out)]) == 0
    return out


def _transfer(fx, out, *extra):
    return cli.main(["transfer", "--scene", str(fx / "scene.json"), "--cameras", str(fx / "cameras.json"),
                     "--texture", str(fx / "texture.png"), "--out", str(out), *FAST, *extra])


def test_make_synthetic_outputs(fixture_dir, tmp_path):
    names = sorted(os.listdir(fixture_dir / "renders"))
    assert names == [f"{k}_{v:03d}.{e}" for k, e in (("depth", "tsf"), ("view", "png")) for v in range(3)]
    man = json.loads((fixture_dir / "manifest.json").read_text())
    assert man["command"] == "make-synthetic" and man["seed"] == 0
    again = tmp_path / "again"
    cli.main(["make-synthetic", "--kind", "planes", *SMALL, "--texture", "stripes", "--texture-size", "64",
              "--out", str(again)])
    for root, _, files in os.walk(fixture_dir):
        for f in files:
            p = os.path.join(root, f)
            with open(p, "rb") as a, open(again / os.path.relpath(p, fixture_dir), "rb") as b:
                assert a.read() == b.read(), p


def test_default_fixture_has_eight_views(tmp_path):
    assert cli.main(["make-synthetic", "--out", str(tmp_path)]) == 0
    assert len([f for f in os.listdir(tmp_path / "renders") if f.endswith(".png")]) == 8


def test_sphere_depth_is_not_degenerate(tmp_path):
    cli.main(["make-synthetic", "--kind", "sphere-cloud", "--n-gaussians", "300", "--n-cameras", "1",
              "--out", str(tmp_path)])
    d = read_float_array(tmp_path / "renders" / "depth_000.tsf")
    img = read_image(tmp_path / "renders" / "view_000.png")
    fg = d[img.sum(axis=2) > 0]
    assert fg.min() < fg.max()


def test_planes_depth_has_two_bands(tmp_path):
    cli.main(["make-synthetic", "--kind", "planes", "--out", str(tmp_path)])
    from texsplat.rasterizer import render
    from texsplat.scene import load_cameras, load_scene
    scene, cams = load_scene(tmp_path / "scene.json"), load_cameras(tmp_path / "cameras.json")
    for cam in cams:
        out = render(scene, cam)
        h, _ = np.histogram(out.depth[~out.background_mask], 16)
        h = gaussian_filter1d(h.astype(float), 0.7)
        peaks, _ = find_peaks(np.r_[0, h, 0], prominence=0.15 * h.max())
        assert len(peaks) == 2


def test_transfer_smoke_and_ablation_flags(fixture_dir, tmp_path):
    out = tmp_path / "run"
    assert _transfer(fixture_dir, out, "--lambda-p", "0", "--no-afcm", "--no-gpb",
                     "--pseudo-prior-angle", "45") == 0
    man = json.loads((out / "manifest.json").read_text())
    assert man["ablation"] == {"lambda_p": 0.0, "no_afcm": True, "no_gpb": True, "no_prior": False,
                               "pseudo_prior_angle": 45.0}
    assert man["status"] == "ok" and man["steps_completed"] == 3
    assert len((out / "losses.csv").read_text().splitlines()) == 4
    assert sorted(os.listdir(out / "renders")) == ["view_000.png", "view_001.png", "view_002.png"]
    assert set(json.loads((out / "timings.json").read_text())) >= {"setup_s", "train_s"}


def test_transfer_is_reproducible(fixture_dir, tmp_path):
    _transfer(fixture_dir, tmp_path / "a")
    _transfer(fixture_dir, tmp_path / "b")
    for name in ("scene.json", "losses.csv", "config.txt", "manifest.json", "renders/view_002.png"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name


def _input_hashes(run):
    doc = json.loads((run / "manifest.json").read_text())
    return {k: v["sha1"] for k, v in doc["inputs"].items()}


def test_manifest_hash_tracks_input_bytes(fixture_dir, tmp_path):
    args = ["render", "--scene", str(fixture_dir / "scene.json"), "--cameras", str(fixture_dir / "cameras.json")]
    cli.main([*args, "--out", str(tmp_path / "r1")])
    cli.main([*args, "--out", str(tmp_path / "r2")])
    h1 = _input_hashes(tmp_path / "r1")
    h2 = _input_hashes(tmp_path / "r2")
    assert h1 == h2
    edited = tmp_path / "scene.json"
    text = (fixture_dir / "scene.json").read_text()
    edited.write_text(text.replace("planes", "planez", 1))
    cli.main(["render", "--scene", str(edited), "--cameras", str(fixture_dir / "cameras.json"),
              "--out", str(tmp_path / "r3")])
    h3 = _input_hashes(tmp_path / "r3")
    assert h3["scene"] != h1["scene"] and h3["cameras"] == h1["cameras"]


def test_git_blob_hash():
    # `git hash-object` of an empty file and of "hello\n"
    assert cli.git_blob_sha1(b"") == "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391"
    assert cli.git_blob_sha1(b"hello\n") == "ce013625030ba8dba906f756967f9e9ca394464a"


def test_render_views(fixture_dir, tmp_path):
    assert cli.main(["render", "--scene", str(fixture_dir / "scene.json"), "--cameras",
                     str(fixture_dir / "cameras.json"), "--view", "1", "--channel", "geometry",
                     "--out", str(tmp_path)]) == 0
    assert sorted(f for f in os.listdir(tmp_path) if f.endswith(".png")) == ["depth_001.png", "view_001.png"]


def test_dump_maps_single_view(fixture_dir, tmp_path):
    assert cli.main(["dump-maps", "--scene", str(fixture_dir / "scene.json"), "--cameras",
                     str(fixture_dir / "cameras.json"), "--texture", str(fixture_dir / "texture.png"),
                     "--view", "0", "--K", "2", "--angle-step", "90", "--out", str(tmp_path)]) == 0
    files = sorted(f for f in os.listdir(tmp_path) if f != "manifest.json")
    assert len(files) == 10 and all(f.split(".")[0].endswith("_000") for f in files)
    W = read_float_array(tmp_path / "W_000.tsf")
    assert W.shape == (8, 8) and np.all((W >= 0) & (W <= 1.85 + 1e-12))


def test_metrics_command(fixture_dir, tmp_path):
    s = str(fixture_dir / "scene.json")
    out = tmp_path / "m" / "report.csv"
    assert cli.main(["metrics", "--before", s, "--after", s, "--cameras", str(fixture_dir / "cameras.json"),
                     "--out", str(out)]) == 0
    rows = out.read_text().splitlines()[1:]
    assert sum(r.startswith("ssim,") for r in rows) == 3 and sum(r.startswith("st_rmse,") for r in rows) == 2


@pytest.mark.parametrize("argv", [
    [],
    ["make-synthetic", "--out", "x", "--n-gaussians", "0"],
    ["make-synthetic", "--out", "x", "--kind", "cube"],
    ["transfer", "--scene", "s"],
    ["render", "--scene", "s", "--cameras", "c", "--out", "o", "--steps", "3"],
])
def test_usage_errors(argv, capsys):
    assert cli.main(argv) == 2


def test_bad_view_index_is_usage_error(fixture_dir, tmp_path):
    assert cli.main(["render", "--scene", str(fixture_dir / "scene.json"), "--cameras",
                     str(fixture_dir / "cameras.json"), "--view", "9", "--out", str(tmp_path)]) == 2


def test_validation_errors(fixture_dir, tmp_path, capsys):
    cams = str(fixture_dir / "cameras.json")
    assert cli.main(["render", "--scene", str(tmp_path / "missing.json"), "--cameras", cams,
                     "--out", str(tmp_path / "o")]) == 3
    assert "missing.json" in capsys.readouterr().err
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert cli.main(["render", "--scene", str(bad), "--cameras", cams, "--out", str(tmp_path / "o")]) == 3
    assert _transfer(fixture_dir, tmp_path / "t", "--lambda-c", "-1") == 3
    cfg = tmp_path / "cfg.txt"
    cfg.write_text("no_such_key = 1\n")
    assert _transfer(fixture_dir, tmp_path / "t", "--config", str(cfg)) == 3


def test_divergence_exit_code(fixture_dir, tmp_path, monkeypatch):
    def boom(state):
        raise DivergenceError("loss exploded")
    monkeypatch.setattr(cli, "train_step", boom)
    out = tmp_path / "d"
    assert _transfer(fixture_dir, out) == 4
    assert json.loads((out / "manifest.json").read_text())["status"] == "diverged"
