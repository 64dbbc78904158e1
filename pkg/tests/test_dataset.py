import json

import numpy as np
import pytest

from lodgs.core import project_batch, sampling_rate
from lodgs.dataset import (DatasetManifest, build_toy_scene, make_multilevel, make_multiscale,
                           orbit_cameras, perturb_scene, read_pfm, write_pfm, write_ppm)
from lodgs.errors import FormatError
from lodgs.metrics import metric_psnr
from lodgs.raster import RenderConfig, box_downsample, render, supersample_render


def test_checker_plane_example():
    s = build_toy_scene("checker_plane", 2)
    assert len(s) == 4
    assert np.allclose(np.sort(s.positions[:, 0]), [-0.5, -0.5, 0.5, 0.5])
    assert np.all(s.positions[:, 2] == 0)
    # diagonal neighbours share a color, edge neighbours differ
    c = {tuple(p[:2]): tuple(col) for p, col in zip(s.positions, s.colors)}
    assert c[(-0.5, -0.5)] == c[(0.5, 0.5)] != c[(-0.5, 0.5)]


def test_toy_scenes_are_deterministic():
    a, b = build_toy_scene("random", 20, seed=3), build_toy_scene("random", 20, seed=3)
    assert a.equal(b) and not a.equal(build_toy_scene("random", 20, seed=4))
    ring = build_toy_scene("ring", 6)
    assert np.allclose(np.linalg.norm(ring.positions[:, :2], axis=1), 0.8)
    with pytest.raises(ValueError):
        build_toy_scene("torus", 4)


def test_perturb_scene_keeps_colors_valid():
    s = build_toy_scene("random", 30)
    p = perturb_scene(s, 0.05, 0.5, seed=1)
    assert p.colors.min() >= 0 and p.colors.max() <= 1
    assert not np.array_equal(p.positions, s.positions)
    assert np.array_equal(p.quats, s.quats)


def test_orbit_cameras():
    cams = orbit_cameras(8, 3.0, 50.0, 32)
    assert len(orbit_cameras(1, 3.0, 50.0, 32)) == 1
    centers = np.array([c.center for c in cams])
    assert np.allclose(np.linalg.norm(centers, axis=1), 3.0)
    az = np.arctan2(centers[:, 1], centers[:, 0])
    assert np.allclose(np.diff(np.unwrap(az)), np.pi / 4)
    for c in cams:
        m, _, _, front = project_batch(np.zeros((1, 3)), np.eye(3)[None], c)
        assert front[0] and np.allclose(m[0], [16, 16])


def test_multiscale_cameras_and_box_consistency():
    scene = build_toy_scene("checker_plane", 4)
    cams = orbit_cameras(2, 3.0, 32.0, 32)
    ds = make_multiscale(cams, scene, factors=(1, 8), ss_factor=8, test_every=0)
    by = {(v.view_index, v.scale): v for v in ds.views}
    small = by[(0, 8)].camera
    assert (small.width, small.fx) == (4, 4.0)
    assert all(v.split == "train" for v in ds.views)
    # 8x supersampling at factor 8 samples exactly the factor-1 pixel centers
    point = make_multiscale(cams, scene, factors=(1,), ss_factor=1, test_every=0)
    fine = point.image(point.views[0])
    assert np.max(np.abs(box_downsample(fine, 8) - ds.image(by[(0, 8)]))) < 1e-6


def test_supersample_one_equals_plain_render():
    scene = build_toy_scene("ring", 5)
    cam = orbit_cameras(1, 3.0, 32.0, 32)[0]
    ds = make_multiscale([cam], scene, factors=(1,), ss_factor=1)
    plain = render(scene, cam, RenderConfig(mode_2d="none", mode_3d="none")).image
    assert np.array_equal(ds.image(ds.views[0]), plain.astype(np.float32).astype(np.float64))


def test_multilevel_rates_and_content():
    scene = build_toy_scene("checker_plane", 16)
    ds = make_multilevel(scene, [2.0, 4.0, 8.0], 64.0, 2, 64, test_every=0)
    rates = {v.level: sampling_rate(v.camera, [0, 0, 0]) for v in ds.views if v.view_index == 0}
    assert np.allclose([rates[1] / rates[2], rates[2] / rates[3]], [2.0, 2.0])
    # level 3 shows the whole scene, not a crop of level 1 brought down in resolution
    l1 = next(v for v in ds.views if v.level == 1 and v.view_index == 0)
    l3 = next(v for v in ds.views if v.level == 3 and v.view_index == 0)
    crop = box_downsample(ds.image(l1), 4)
    crop = np.kron(crop, np.ones((4, 4, 1)))[24:40, 24:40]
    assert metric_psnr(ds.image(l3)[24:40, 24:40], crop) < 40
    with pytest.raises(ValueError):
        make_multilevel(scene, [4.0, 2.0], 64.0, 1, 16)


def test_ground_truth_is_bit_reproducible():
    scene = build_toy_scene("random", 10)
    cams = orbit_cameras(2, 2.0, 32.0, 16)
    a = make_multiscale(cams, scene, factors=(1, 2), ss_factor=4)
    b = make_multiscale(cams, scene, factors=(1, 2), ss_factor=4)
    assert all(np.array_equal(a.image(x), b.image(y)) for x, y in zip(a.views, b.views))


def test_pfm_round_trip(tmp_path):
    img = np.random.default_rng(0).uniform(size=(5, 7, 3)).astype(np.float32)
    write_pfm(tmp_path / "a.pfm", img)
    assert np.array_equal(read_pfm(tmp_path / "a.pfm"), img)
    gray = img[..., 0]
    write_pfm(tmp_path / "b.pfm", gray)
    assert np.array_equal(read_pfm(tmp_path / "b.pfm"), gray)
    (tmp_path / "c.pfm").write_bytes(b"P6\n1 1\n255\n\0\0\0")
    with pytest.raises(FormatError):
        read_pfm(tmp_path / "c.pfm")
    (tmp_path / "d.pfm").write_bytes((tmp_path / "a.pfm").read_bytes()[:-4])
    with pytest.raises(FormatError):
        read_pfm(tmp_path / "d.pfm")


def test_ppm_preview(tmp_path):
    write_ppm(tmp_path / "p.ppm", np.full((2, 3, 3), 0.5))
    data = (tmp_path / "p.ppm").read_bytes()
    assert data.startswith(b"P6\n3 2\n255\n") and data[-1] == 128


def test_manifest_round_trip(tmp_path):
    scene = build_toy_scene("ring", 4)
    ds = make_multiscale(orbit_cameras(3, 3.0, 16.0, 16), scene, factors=(1, 2), ss_factor=2,
                         test_every=2)
    path = ds.save(tmp_path)
    back = DatasetManifest.load(path)
    assert back.nu_ref == ds.nu_ref and back.kind == "multiscale" and len(back.views) == 6
    for a, b in zip(ds.views, back.views):
        assert (a.scale, a.split, a.view_index) == (b.scale, b.split, b.view_index)
        assert np.allclose(a.camera.world_to_camera(), b.camera.world_to_camera())
        assert np.array_equal(ds.image(a), back.image(b))
    assert [v.split for v in back.views if v.scale == 1] == ["test", "train", "test"]


def test_manifest_errors(tmp_path):
    scene = build_toy_scene("ring", 3)
    ds = make_multiscale(orbit_cameras(1, 3.0, 16.0, 16), scene, factors=(1,), ss_factor=1)
    path = ds.save(tmp_path)
    doc = json.loads(path.read_text())
    del doc["views"][0]["fx"]
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(doc))
    with pytest.raises(FormatError):
        DatasetManifest.load(bad)
    (tmp_path / ds.views[0].image_path).unlink()
    with pytest.raises(FormatError):
        DatasetManifest.load(path)
