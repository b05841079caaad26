import json
import subprocess
import sys

import numpy as np
import pytest

from aro.anchors import read_anchors
from aro.cli import main
from aro.field import read_grid, read_pgm
from aro.io import write_obj, write_xyz
from aro.meshes import icosphere

from conftest import sphere_cloud

TINY_NET = ["--d-model", "8", "--heads", "2", "--d-ff", "16", "--epochs", "1", "--n-samples", "200",
            "--batch-size", "64"]


@pytest.fixture
def work(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    write_obj("ball.obj", icosphere(0.4, 2))
    write_xyz("cloud.xyz", sphere_cloud(3000, 0.4, seed=1))
    assert main(["anchors", "--m", "48", "-o", "anchors.txt"]) == 0
    return tmp_path


def manifest(path):
    return json.loads((path.parent / (path.name + ".manifest.json")).read_text())


def test_anchors_file_and_manifest(work):
    lines = (work / "anchors.txt").read_text().splitlines()
    assert len(lines) == 49
    assert len(read_anchors(work / "anchors.txt").positions) == 48
    doc = manifest(work / "anchors.txt")
    assert doc["command"] == "anchors" and doc["seed"] == 0
    assert doc["config"]["m"] == 48
    assert set(doc["outputs"]) == {"anchors.txt"}
    assert len(doc["outputs"]["anchors.txt"]) == 64


def test_usage_error_exits_2(work):
    with pytest.raises(SystemExit) as e:
        main(["anchors", "--bogus"])
    assert e.value.code == 2
    with pytest.raises(SystemExit) as e:
        main(["oracle", "--anchors", "anchors.txt"])
    assert e.value.code == 2


def test_runtime_error_exits_1(work, capsys):
    assert main(["oracle", "--mesh", "missing.obj", "--anchors", "anchors.txt"]) == 1
    assert "error" in capsys.readouterr().err


def test_console_script_exit_codes(work):
    run = lambda *a: subprocess.run([sys.executable, "-m", "aro.cli", *a], capture_output=True)
    assert run("anchors", "--m", "4", "-o", "x.txt").returncode == 0
    assert run("anchors", "--nope").returncode == 2
    assert run("infer2d", "--model", "none.bin", "--shape", "disk").returncode == 1


def test_oracle_then_eval(work):
    assert main(["oracle", "--mesh", "ball.obj", "--anchors", "anchors.txt", "--res", "24",
                 "--mesh-out", "recon.obj"]) == 0
    grid = read_grid(work / "oracle.grid")
    assert grid.resolution == (24, 24, 24)
    doc = manifest(work / "oracle.grid")
    assert set(doc["outputs"]) == {"oracle.grid", "recon.obj"}
    assert main(["eval", "--recon", "oracle.grid", "--gt", "ball.obj", "--samples", "1000",
                 "--iou-samples", "20000", "--seed", "7"]) == 0
    rep = json.loads((work / "report.json").read_text())
    assert rep["seed"] == 7 and 0.8 < rep["iou"] <= 1.0
    assert main(["eval", "--recon", "recon.obj", "--gt", "ball.obj", "--samples", "1000",
                 "--iou-samples", "20000", "-o", "report2.json"]) == 0
    assert json.loads((work / "report2.json").read_text())["iou"] > 0.8


def rerun_identical(work, argv, outputs):
    assert main(argv) == 0
    first = {o: (work / o).read_bytes() for o in outputs}
    mf = outputs[0] + ".manifest.json"
    for o in outputs:
        (work / o).unlink()
    assert main([argv[0], "--config", mf]) == 0
    for o in outputs:
        assert (work / o).read_bytes() == first[o], o


def test_rerun_from_manifest_is_byte_identical(work):
    rerun_identical(work, ["oracle", "--mesh", "ball.obj", "--anchors", "anchors.txt", "--res", "20",
                           "--mesh-out", "m.obj"], ["oracle.grid", "m.obj"])
    rerun_identical(work, ["heuristic", "--cloud", "cloud.xyz", "--anchors", "anchors.txt", "--res", "12"],
                    ["heuristic.grid"])
    rerun_identical(work, ["anchors", "--strategy", "uniform", "--m", "20", "--seed", "3", "-o", "u.txt"],
                    ["u.txt"])
    rerun_identical(work, ["train2d", "--shape", "disk", "--seed", "2", *TINY_NET], ["model.bin"])
    rerun_identical(work, ["infer2d", "--model", "model.bin", "--shape", "disk", "--res", "16"], ["recon.pgm"])
    rerun_identical(work, ["activation", "--model", "model.bin", "--shape", "disk", "--anchor", "3",
                           "--res", "16"], ["activation.pgm"])


def test_config_file_and_flag_precedence(work):
    (work / "run.cfg").write_text("# anchors run\nm = 12\nstrategy = uniform\nseed = 5\n")
    assert main(["anchors", "--config", "run.cfg", "-o", "a.txt"]) == 0
    assert main(["anchors", "--config", "run.cfg", "--m", "7", "-o", "b.txt"]) == 0
    a, b = read_anchors(work / "a.txt"), read_anchors(work / "b.txt")
    assert len(a.positions) == 12 and len(b.positions) == 7
    assert manifest(work / "a.txt")["seed"] == 5


def test_config_unknown_key_exits_2(work):
    (work / "bad.cfg").write_text("colour = blue\n")
    with pytest.raises(SystemExit) as e:
        main(["anchors", "--config", "bad.cfg"])
    assert e.value.code == 2


def test_repeated_shape_flag_replaces_config_list(work):
    assert main(["train2d", "--shape", "disk", "--shape", "letter", *TINY_NET]) == 0
    assert manifest(work / "model.bin")["config"]["shape"] == ["disk", "letter"]
    assert main(["train2d", "--config", "model.bin.manifest.json", "--shape", "letter", "-o", "m2.bin"]) == 0
    assert manifest(work / "m2.bin")["config"]["shape"] == ["letter"]


def test_infer_and_activation_images(work):
    assert main(["train2d", "--shape", "disk", *TINY_NET]) == 0
    assert main(["infer2d", "--model", "model.bin", "--shape", "disk", "--res", "20"]) == 0
    img = read_pgm(work / "recon.pgm")
    assert img.shape == (20, 20) and np.all((img >= 0) & (img <= 1))
    assert "iou" in manifest(work / "recon.pgm")["results"]
    assert main(["activation", "--model", "model.bin", "--shape", "disk", "--anchor", "9"]) == 1


def test_encode(work):
    write_xyz("q.xyz", np.array([[0.0, 0.0, 0.0], [0.1, 0.2, 0.3]]))
    assert main(["encode", "--cloud", "cloud.xyz", "--anchors", "anchors.txt", "--queries", "q.xyz",
                 "--k", "4"]) == 0
    assert manifest(work / "aro.bin")["results"]["queries"] == 2


def test_bench_prints_json(work, capsys):
    assert main(["bench", "--points", "500", "--queries", "200", "--m", "6"]) == 0
    doc = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert doc["queries"] == 200 and doc["queries_per_second"] > 0
