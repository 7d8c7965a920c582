import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from omniloc.cli import error_code, main, parse_camera, parse_rotation
from omniloc.cameras import CameraError
from omniloc.geometry import RigidTransform

from pipelines import make_clouds, report_bytes, run_all


def test_unknown_flag_exits_2(tmp_path, capsys):
    with pytest.raises(SystemExit) as e:
        main(["eval-pose", "--bogus", "--out", str(tmp_path)])
    assert e.value.code == 2


def test_console_script_unknown_flag(tmp_path):
    r = subprocess.run([sys.executable, "-m", "omniloc.cli", "icp", "--nope"], capture_output=True, text=True)
    assert r.returncode == 2


def test_module_error_is_one_machine_line(tmp_path, capsys):
    rc = main(["eval-pose", "--est", str(tmp_path / "missing.txt"), "--gt", "x", "--out", str(tmp_path / "o")])
    assert rc == 1
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1
    assert err[0].startswith("error: E_NOFILE: ")


def test_camera_error_code(tmp_path, capsys):
    (tmp_path / "p.png").write_bytes(b"")
    rc = main(["rectify", "--pano", str(tmp_path / "p.png"), "--camera", "nosuch", "--out", str(tmp_path / "o")])
    assert rc == 1
    assert capsys.readouterr().err.startswith("error: E_CAMERA: ")


def test_error_code_mapping():
    assert error_code(CameraError("x")) == "E_CAMERA"
    assert error_code(RuntimeError("x")) == "E_INTERNAL"


def test_parse_helpers():
    assert parse_camera("pinhole@0.5").width == 960
    assert np.allclose(parse_rotation("90,0,0") @ [0, 0, 1], [1, 0, 0])
    assert np.array_equal(parse_rotation(None), np.eye(3))


def test_threads_env_default(monkeypatch):
    from omniloc.cli import build_parser

    monkeypatch.setenv("OMNILOC_THREADS", "6")
    args = build_parser().parse_args(["ba-sim", "--out", "x"])
    assert args.threads == 6


def test_eval_pose_table_shape(fixture_scene, tmp_path):
    fx, manifest = fixture_scene
    est = {f.id: f.pose for frames in manifest.queries.values() for f in frames}
    est.pop("q_pinhole_000")
    k = "q_pinhole_001"
    est[k] = RigidTransform(est[k].rotation, est[k].translation + [0.4, 0, 0])
    from omniloc import io

    io.write_poses(tmp_path / "est.txt", est)
    assert main(["eval-pose", "--est", str(tmp_path / "est.txt"), "--manifest", str(fx / "scene.manifest"),
                 "--query-type", "pinhole", "--mode", "vc2", "--out", str(tmp_path / "o")]) == 0
    rows = list(csv.DictReader(open(tmp_path / "o" / "pose.csv")))
    assert len(rows) == 1
    r = rows[0]
    assert (r["query_type"], r["mode"], r["n"], r["failed"]) == ("pinhole", "vc2", "3", "1")
    assert (float(r["high"]), float(r["medium"]), float(r["low"])) == pytest.approx((100 / 3, 200 / 3, 200 / 3))
    data = json.loads((tmp_path / "o" / "pose.json").read_text())
    assert data["rows"][0]["high"] == pytest.approx(100 / 3)


def test_localize_fixture_is_accurate(fixture_scene, tmp_path):
    fx, _ = fixture_scene
    out = tmp_path / "run"
    run_all(fx, out, threads=2)
    rows = list(csv.DictReader(open(out / "pose" / "pose.csv")))
    assert rows[0]["high"] == "100.000000"
    icp = json.loads((out / "icp" / "icp.json").read_text())
    G = make_clouds(fx)
    assert icp["success"] and np.allclose(icp["translation"], G.translation, atol=1e-5)
    inv = json.loads((out / "aug" / "inventory.json").read_text())
    assert inv["crops"] == 8 * 6


def test_outputs_identical_across_threads(fixture_scene, tmp_path):
    fx, _ = fixture_scene
    run_all(fx, tmp_path / "t1", threads=1)
    run_all(fx, tmp_path / "t8", threads=8)
    a, b = report_bytes(tmp_path / "t1"), report_bytes(tmp_path / "t8")
    assert a.keys() == b.keys()
    assert [k for k in a if a[k] != b[k]] == []
