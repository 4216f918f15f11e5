import json
import math
import re

import numpy as np
import pytest

from bimloc import scenes
from bimloc.cli import EXIT_CODES, main
from bimloc.config import ConfigError, RunConfig
from bimloc.geometry import Pose
from bimloc.io import read_jsonl, read_ply, read_tum, write_box_manifest, write_obj, write_ply, write_tum
from bimloc.mapping import CategoryTable, LabeledBox, TriangleMesh, box_mesh

ERROR_LINE = re.compile(r"^error\[E_[A-Z]+\]: \S.*$")


# ----------------------------------------------------------------- config


def test_defaults():
    c = RunConfig()
    w, t = c.weight_config(), c.tracker_config()
    assert (w.mu, w.delta, w.k) == (0.8, 0.05, 3)
    assert c.map.density == 30
    assert t.coarse_max_it + t.fine_max_it == 40 and t.coarse_max_it == 20
    assert t.selection_whitelist == ("Floors", "Walls", "Columns")
    assert RunConfig().tracker_config("ICP_ORG").coarse_max_it == 40


def test_unknown_keys_rejected(tmp_path):
    with pytest.raises(ConfigError, match="unknown keys"):
        RunConfig.from_dict({"weight": {"muu": 0.7}})
    with pytest.raises(ConfigError, match="sections"):
        RunConfig.from_dict({"extra": {}})
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"weight": {"mu": 0.3}})
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"weight": {"mu": "high"}})
    p = tmp_path / "c.toml"
    p.write_text("[weight]\nmu = 0.6\n[tracker]\nvariant = 'SEM_ORG'\n")
    c = RunConfig.load(p)
    assert c.weight.mu == 0.6 and c.tracker_config().variant.value == "SEM_ORG"


def test_hash_stable_and_sensitive():
    a, b = RunConfig(), RunConfig.from_dict({})
    assert a.hash == b.hash and len(a.hash) == 16
    assert a.override("weight", mu=0.9).hash != a.hash
    assert a.override("weight", mu=None).hash == a.hash


# -------------------------------------------------------------------- CLI


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def assert_error(code, err, name):
    assert code == EXIT_CODES[name]
    lines = err.strip().splitlines()
    assert len(lines) == 1 and ERROR_LINE.match(lines[0]) and f"[{name}]" in lines[0]


@pytest.fixture
def two_walls(tmp_path):
    mesh = TriangleMesh.concatenate([box_mesh([0, 0, 0], [0.2, 4, 3]), box_mesh([0.2, 0, 0], [5, 0.2, 3])])
    t = CategoryTable(["Walls", "Curtain Panels"])
    boxes = [LabeledBox("w", 1, [0, 0, 0], [0.2, 4, 3]), LabeledBox("c", 2, [0.2, 0, 0], [5, 0.2, 3])]
    write_obj(tmp_path / "m.obj", mesh)
    write_box_manifest(tmp_path / "b.json", boxes, t)
    return tmp_path


def test_mapgen_two_walls(capsys, two_walls):
    d = two_walls
    code, out, _ = run(capsys, "mapgen", "--mesh", d / "m.obj", "--boxes", d / "b.json", "--out", d / "map.ply", "--seed", 3)
    assert code == 0 and "wrote" in out
    cloud, table, comments = read_ply(d / "map.ply")
    assert table.names == ["Walls", "Curtain Panels"] and cloud.normals is not None
    report = json.loads((d / "map.histogram.json").read_text())
    assert sum(report["histogram"].values()) == report["points"] == len(cloud)
    assert report["provenance"]["seed"] == 3 and report["provenance"]["config_hash"] == RunConfig().override("map", seed=3).hash
    assert any(report["provenance"]["config_hash"] in c for c in comments)
    first = (d / "map.ply").read_bytes()
    run(capsys, "mapgen", "--mesh", d / "m.obj", "--boxes", d / "b.json", "--out", d / "map.ply", "--seed", 3)
    assert (d / "map.ply").read_bytes() == first


def test_mapgen_density_on_100_m2(capsys, tmp_path):
    write_obj(tmp_path / "f.obj", box_mesh([0, 0, 0], [10, 10, 0.1], faces=["+z"]))
    write_box_manifest(tmp_path / "b.json", [LabeledBox("f", 1, [0, 0, 0], [10, 10, 0.1])], CategoryTable(["Floors"]))
    code, _, _ = run(capsys, "mapgen", "--mesh", tmp_path / "f.obj", "--boxes", tmp_path / "b.json", "--out", tmp_path / "m.ply")
    assert code == 0
    n = json.loads((tmp_path / "m.histogram.json").read_text())["points"]
    assert abs(n - 3000) <= 300


def test_mapgen_parse_error_has_location(capsys, tmp_path):
    (tmp_path / "bad.obj").write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 7\n")
    (tmp_path / "b.json").write_text("[]")
    code, _, err = run(capsys, "mapgen", "--mesh", tmp_path / "bad.obj", "--boxes", tmp_path / "b.json", "--out", tmp_path / "m.ply")
    assert_error(code, err, "E_PARSE")
    assert "line 4" in err


def test_usage_and_config_errors(capsys, tmp_path):
    code, _, err = run(capsys, "mapgen", "--mesh", "x")
    assert_error(code, err, "E_USAGE")
    code, _, err = run(capsys, "frobnicate")
    assert_error(code, err, "E_USAGE")
    (tmp_path / "c.toml").write_text("[weight]\nmu = 2.0\n")
    code, _, err = run(capsys, "evaluate", "--gt", "a", "--est", "b", "--out", tmp_path / "r.json", "--config", tmp_path / "c.toml")
    assert_error(code, err, "E_CONFIG")
    code, _, err = run(capsys, "evaluate", "--gt", tmp_path / "missing.tum", "--est", "b", "--out", tmp_path / "r.json")
    assert_error(code, err, "E_IO")


@pytest.fixture(scope="module")
def hall_files(tmp_path_factory):
    d = tmp_path_factory.mktemp("hall")
    m = scenes.hall()
    write_obj(d / "hall.obj", m.mesh)
    write_box_manifest(d / "hall.json", m.boxes(), m.table)
    traj = [(0.1 * i, Pose.from_xyz_yaw(7 + 0.1 * i, 5 + 0.05 * i, 1.0, 0.3)) for i in range(6)]
    write_tum(d / "traj.tum", traj)
    assert main(["mapgen", "--mesh", str(d / "hall.obj"), "--boxes", str(d / "hall.json"), "--out", str(d / "map.ply")]) == 0
    return d


def test_simulate_localize_evaluate(capsys, hall_files):
    d = hall_files
    (d / "dev.json").write_text(json.dumps({"add": [{"min": [9, 7, 0], "max": [9.4, 7.4, 3]}], "remove": ["column_0"], "dynamic_fraction": 0.02, "boxes": "hall.json"}))
    code, _, err = run(capsys, "simulate", "--map-mesh", d / "hall.obj", "--traj", d / "traj.tum", "--deviations", d / "dev.json", "--seed", 1, "--out", d / "sim")
    assert code == 0, err
    assert len(list((d / "sim" / "scans").glob("*.ply"))) == 6
    assert json.loads((d / "sim" / "provenance.json").read_text())["provenance"]["seed"] == 1

    args = ["localize", "--map", d / "map.ply", "--scans", d / "sim" / "scans", "--init", "7 5 1 0.3", "--out", d / "est.tum"]
    code, out, err = run(capsys, *args, "--variant", "SEM_WC_WRHO")
    assert code == 0, err
    est = read_tum(d / "est.tum")
    assert len(est) == 7
    diag = read_jsonl(d / "est.diag.jsonl")
    assert len(diag) == 6 and all(r["n_raw"] > r["n_filtered"] > r["n_selected"] > 0 for r in diag)
    assert all("config_hash" in r["provenance"] for r in diag)
    assert (d / "est.tum").read_text().startswith("# bimloc ")
    first = (d / "est.tum").read_bytes()
    run(capsys, *args, "--variant", "SEM_WC_WRHO")
    assert (d / "est.tum").read_bytes() == first

    code, _, err = run(capsys, "evaluate", "--gt", d / "sim" / "groundtruth.tum", "--est", d / "est.tum", "--mode", "none", "--out", d / "rep.json")
    assert code == 0, err
    rep = json.loads((d / "rep.json").read_text())
    assert rep["rmse_translation"] < 0.05 and rep["n_pairs"] == 6
    assert (d / "rep.csv").read_text().startswith("# bimloc ")


def test_localize_unlabeled_map(capsys, hall_files):
    d = hall_files
    cloud, _, _ = read_ply(d / "map.ply")
    write_ply(d / "plain.ply", cloud.with_labels(None))
    if not (d / "sim" / "scans").exists():
        assert main(["simulate", "--map-mesh", str(d / "hall.obj"), "--traj", str(d / "traj.tum"), "--out", str(d / "sim")]) == 0
    base = ["localize", "--map", d / "plain.ply", "--scans", d / "sim" / "scans", "--init", "7 5 1 0.3"]
    code, _, err = run(capsys, *base, "--variant", "ICP_ORG", "--out", d / "icp.tum")
    assert code == 0, err
    code, _, err = run(capsys, *base, "--variant", "SEM_ORG", "--out", d / "sem.tum")
    assert_error(code, err, "E_INPUT")
    assert "labeled map" in err and not (d / "sem.tum").exists()


def test_localize_bad_init(capsys, hall_files):
    d = hall_files
    code, _, err = run(capsys, "localize", "--map", d / "map.ply", "--scans", d, "--init", "1 2 3", "--out", d / "x.tum")
    assert_error(code, err, "E_USAGE")


def test_evaluate_identical_files_gives_zero(capsys, tmp_path):
    traj = [(0.1 * i, Pose.from_xyz_yaw(i, math.sin(i), 1.0, 0.1 * i)) for i in range(20)]
    write_tum(tmp_path / "a.tum", traj)
    code, _, _ = run(capsys, "evaluate", "--gt", tmp_path / "a.tum", "--est", tmp_path / "a.tum", "--out", tmp_path / "r.json")
    assert code == 0
    rep = json.loads((tmp_path / "r.json").read_text())
    assert rep["rmse_translation"] < 1e-9 and rep["rmse_rotation"] < 1e-9


def test_evaluate_constant_offset(capsys, tmp_path):
    gt = [(0.1 * i, Pose.from_xyz_yaw(i, 0, 0, 0)) for i in range(20)]
    est = [(t, Pose.from_xyz_yaw(p.translation[0] + 0.25, 0, 0, 0)) for t, p in gt]
    write_tum(tmp_path / "g.tum", gt)
    write_tum(tmp_path / "e.tum", est)
    run(capsys, "evaluate", "--gt", tmp_path / "g.tum", "--est", tmp_path / "e.tum", "--mode", "none", "--out", tmp_path / "r.json")
    assert json.loads((tmp_path / "r.json").read_text())["rmse_translation"] == pytest.approx(0.25, abs=1e-9)
