import csv

import numpy as np
import pytest

from lodgs.cli import main
from lodgs.dataset import DatasetManifest, read_pfm
from lodgs.scenefile import load_scene


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "data"
    code = main(["generate", "--kind", "random", "--n", "12", "--views", "4", "--scales", "1,2",
                 "--resolution", "16", "--ss", "2", "--test-every", "2", "--l", "4",
                 "--init-noise", "0.02", "0.1", "--out", str(out)])
    assert code == 0
    return out


def test_generate_writes_dataset(data):
    manifest = DatasetManifest.load(data / "manifest.json")
    assert len(manifest.views) == 8
    assert {v.scale for v in manifest.views} == {1, 2}
    assert (data / "gt.lodgs").exists() and (data / "init.lodgs").exists()
    assert load_scene(data / "gt.lodgs").nu_ref == pytest.approx(manifest.nu_ref, rel=1e-6)


def test_ground_truth_scene_evaluates_identical(data, tmp_path):
    out = tmp_path / "eval.csv"
    code = main(["eval", "--scene", str(data / "gt.lodgs"), "--data", str(data / "manifest.json"),
                 "--supersample", "2", "--out", str(out)])
    assert code == 0
    rows = list(csv.DictReader(open(out)))
    assert [r["group"] for r in rows] == ["scale_1", "scale_2", "avg"]
    assert all(r["psnr"] == "identical" for r in rows)


def test_train_zero_iterations_is_byte_identical(data, tmp_path):
    out = tmp_path / "same.lodgs"
    code = main(["train", "--data", str(data / "manifest.json"), "--init", str(data / "init.lodgs"),
                 "--iters", "0", "--out", str(out)])
    assert code == 0
    assert out.read_bytes() == (data / "init.lodgs").read_bytes()


def test_train_and_eval_are_deterministic(data, tmp_path):
    outputs = []
    for run in range(2):
        scene, loss, ev = (tmp_path / f"{name}{run}" for name in ("s", "loss", "eval"))
        assert main(["train", "--data", str(data / "manifest.json"), "--init", str(data / "init.lodgs"),
                     "--iters", "5", "--out", str(scene), "--loss-csv", str(loss),
                     "--eval-every", "5"]) == 0
        assert main(["eval", "--scene", str(scene), "--data", str(data / "manifest.json"),
                     "--ablation", "full", "--out", str(ev)]) == 0
        outputs.append((scene.read_bytes(), loss.read_text(), ev.read_text()))
    assert outputs[0] == outputs[1]
    rows = list(csv.reader(outputs[0][1].splitlines()))
    assert rows[0] == ["iteration", "loss", "eval_psnr"] and len(rows) == 6 and rows[5][2] != ""


def test_render_formats(data, tmp_path):
    args = ["render", "--scene", str(data / "gt.lodgs"), "--data", str(data / "manifest.json"),
            "--camera-index", "1"]
    assert main(args + ["--out", str(tmp_path / "r.pfm")]) == 0
    assert read_pfm(tmp_path / "r.pfm").shape == (8, 8, 3)
    assert main(args + ["--out", str(tmp_path / "r.ppm")]) == 0
    assert (tmp_path / "r.ppm").read_bytes().startswith(b"P6\n8 8\n")
    assert main(args + ["--out", str(tmp_path / "r.png")]) == 1


def test_gradcheck_prints_table(data, capsys):
    code = main(["gradcheck", "--scene", str(data / "init.lodgs"), "--data", str(data / "manifest.json"),
                 "--samples", "30"])
    assert code == 0
    text = capsys.readouterr().out
    assert "pass fraction" in text and "positions" in text


def test_exit_codes(data, tmp_path):
    assert main([]) == 1
    assert main(["train", "--data", "x"]) == 1
    assert main(["generate", "--n", "0", "--out", str(tmp_path / "g")]) == 1
    assert main(["render", "--scene", str(data / "gt.lodgs"), "--data", str(data / "manifest.json"),
                 "--camera-index", "99", "--out", str(tmp_path / "a.pfm")]) == 1
    assert main(["eval", "--scene", str(tmp_path / "missing.lodgs"), "--data",
                 str(data / "manifest.json"), "--out", str(tmp_path / "e.csv")]) == 2
    corrupt = tmp_path / "bad.lodgs"
    raw = bytearray((data / "gt.lodgs").read_bytes())
    raw[30] ^= 0xFF
    corrupt.write_bytes(bytes(raw))
    assert main(["eval", "--scene", str(corrupt), "--data", str(data / "manifest.json"),
                 "--out", str(tmp_path / "e.csv")]) == 2


def test_multilevel_generate(tmp_path):
    out = tmp_path / "ml"
    assert main(["generate", "--kind", "ring", "--n", "5", "--views", "2", "--levels", "2,4,8",
                 "--resolution", "16", "--ss", "1", "--out", str(out)]) == 0
    manifest = DatasetManifest.load(out / "manifest.json")
    assert manifest.kind == "multilevel" and {v.level for v in manifest.views} == {1, 2, 3}
    assert np.isfinite(manifest.nu_ref)
