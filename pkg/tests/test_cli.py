import json
import subprocess
import sys

import pytest

from invtransport.cli import main
from invtransport.pfm import read_pfm
from invtransport.scene import Camera, DirectionalLight, Medium, Scene, Sphere, serialize_scene

SCENE = Scene(Medium(4.0, 0.8, 0.4), Sphere(), DirectionalLight((0.6, 0.0, -0.8)),
              Camera(width=8, height=8))


@pytest.fixture
def scene_file(tmp_path):
    path = tmp_path / "scene.json"
    path.write_text(serialize_scene(SCENE))
    return str(path)


def test_render_writes_image_and_manifest(tmp_path, scene_file):
    out = str(tmp_path / "img.pfm")
    assert main(["render", "--scene", scene_file, "--spp", "4", "--seed", "3", "--out", out]) == 0
    assert read_pfm(out).shape == (8, 8, 3)
    man = json.loads((tmp_path / "img.pfm.run.json").read_text())
    assert man["command"] == "render" and man["seed"] == 3 and man["spp"] == 4
    assert man["outputs"] == [out]
    first = (tmp_path / "img.pfm").read_bytes()
    main(["render", "--scene", scene_file, "--spp", "4", "--seed", "3", "--out", out])
    assert (tmp_path / "img.pfm").read_bytes() == first


def test_validation_errors_exit_1(tmp_path, scene_file):
    bad = tmp_path / "bad.json"
    doc = json.loads(serialize_scene(SCENE))
    doc["medium"]["albedo"] = 1.5
    bad.write_text(json.dumps(doc))
    out = str(tmp_path / "x.pfm")
    assert main(["render", "--scene", str(bad), "--out", out]) == 1
    assert main(["render", "--scene", scene_file, "--spp", "0", "--out", out]) == 1
    assert main(["render", "--scene", scene_file]) == 1
    assert main(["render", "--scene", scene_file, "--bogus", "--out", out]) == 1
    assert main(["invert", "--scene", scene_file, "--target", out, "--init", "1,2", "--out", out]) == 1


def test_io_errors_exit_2(tmp_path, scene_file):
    out = str(tmp_path / "x.pfm")
    assert main(["render", "--scene", str(tmp_path / "missing.json"), "--out", out]) == 2
    garbage = tmp_path / "t.pfm"
    garbage.write_bytes(b"PF\n8 8\n1.0\n")
    code = main(["invert", "--scene", scene_file, "--target", str(garbage), "--init", "5,0.5,0.1",
                 "--out", str(tmp_path / "trace.jsonl")])
    assert code == 2
    assert main(["render", "--scene", scene_file, "--out", str(tmp_path / "no" / "dir.pfm")]) == 2


def test_grad_outputs(tmp_path, scene_file):
    out = tmp_path / "g"
    assert main(["grad", "--scene", scene_file, "--spp", "2", "--out", str(out)]) == 0
    names = sorted(p.name for p in out.iterdir())
    assert names == sorted(["forward.pfm"] + [f"d_{p}{s}.pfm" for p in ("sigma_t", "albedo", "g")
                                              for s in ("", "_sign")])
    assert (tmp_path / "g.run.json").exists()


def test_invert_trace(tmp_path, scene_file):
    target = str(tmp_path / "t.pfm")
    main(["render", "--scene", scene_file, "--spp", "16", "--out", target])
    trace = tmp_path / "trace.jsonl"
    code = main(["invert", "--scene", scene_file, "--target", target, "--init", "8,0.5,0",
                 "--iters", "3", "--spp", "2", "--final-spp", "2", "--out", str(trace)])
    assert code == 0
    rows = [json.loads(line) for line in trace.read_text().splitlines()]
    assert [r["iter"] for r in rows] == [1, 2, 3]
    assert rows[0]["sigma_t"] == pytest.approx(8.0)


def test_dataset_train_eval_pipeline(tmp_path):
    data = str(tmp_path / "ds")
    assert main(["gen-dataset", "--size", "32", "--per-combo", "1", "--spp", "1", "--out", data]) == 0
    assert len((tmp_path / "ds" / "manifest.jsonl").read_text().splitlines()) == 12
    net = str(tmp_path / "net.json")
    assert main(["train", "--data", data, "--mode", "ITN", "--epochs", "2", "--warm-start", "1",
                 "--spp", "1", "--out", net]) == 0
    assert len((tmp_path / "net.json.log.jsonl").read_text().splitlines()) == 2
    metrics = str(tmp_path / "m.jsonl")
    assert main(["eval", "--data", data, "--net", net, "--spp", "1", "--out", metrics]) == 0
    rows = [json.loads(line) for line in open(metrics)]
    assert [r["split"] for r in rows] == ["test-unseen-shape", "test-unseen-light",
                                          "test-unseen-both", "test"]


def test_module_entry_point(tmp_path, scene_file):
    out = str(tmp_path / "m.pfm")
    res = subprocess.run([sys.executable, "-m", "invtransport", "render", "--scene", scene_file,
                          "--spp", "1", "--out", out], capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    res = subprocess.run([sys.executable, "-m", "invtransport", "render", "--scene", scene_file],
                         capture_output=True, text=True)
    assert res.returncode == 1
