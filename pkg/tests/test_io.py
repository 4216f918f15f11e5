import json
import math

import numpy as np
import pytest

from bimloc.geometry import Pose, SemanticPointCloud
from bimloc.io import (
    FormatError,
    read_box_manifest,
    read_jsonl,
    read_obj,
    read_ply,
    read_scan_log,
    read_scans,
    read_tum,
    write_box_manifest,
    write_jsonl,
    write_obj,
    write_ply,
    write_scan_dir,
    write_scan_log,
    write_tum,
)
from bimloc.mapping import CategoryTable, LabeledBox, box_mesh


def test_obj_round_trip(tmp_path):
    m = box_mesh([0, 0, 0], [1.5, 2, 3.25])
    write_obj(tmp_path / "m.obj", m)
    back = read_obj(tmp_path / "m.obj")
    assert np.array_equal(back.vertices, m.vertices)
    assert np.array_equal(back.triangles, m.triangles)


def test_obj_negative_indices_and_comments(tmp_path):
    p = tmp_path / "t.obj"
    p.write_text("# tri\no thing\nv 0 0 0\nv 1 0 0\nv 0 1 0  # c\nvn 0 0 1\nf -3 -2//1 -1\n")
    m = read_obj(p)
    assert m.triangles.tolist() == [[0, 1, 2]]


@pytest.mark.parametrize(
    "body, line",
    [
        ("v 0 0 0\nv 1 0 0\nv 0 1 0\nv 1 1 0\nf 1 2 3 4\n", 5),
        ("v 0 0 0\nv 1 0\n", 2),
        ("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 9\n", 4),
        ("v 0 0 0\ncurv 1 2\n", 2),
    ],
)
def test_obj_errors_report_line(tmp_path, body, line):
    p = tmp_path / "bad.obj"
    p.write_text(body)
    with pytest.raises(FormatError) as err:
        read_obj(p)
    assert err.value.location == f"line {line}"


def test_obj_without_faces(tmp_path):
    p = tmp_path / "empty.obj"
    p.write_text("v 0 0 0\n")
    with pytest.raises(FormatError, match="no triangles"):
        read_obj(p)


def test_manifest_round_trip(tmp_path):
    t = CategoryTable(["Walls", "Floors"])
    boxes = [LabeledBox("w1", 1, [0, 0, 0], [0.2, 5, 3]), LabeledBox("f", 2, [-1, -1, -0.2], [6, 6, 0])]
    write_box_manifest(tmp_path / "b.json", boxes, t)
    back, t2 = read_box_manifest(tmp_path / "b.json")
    assert t2.items() == t.items()
    assert [b.id for b in back] == ["w1", "f"]
    assert all(np.array_equal(a.max_corner, b.max_corner) for a, b in zip(back, boxes))


@pytest.mark.parametrize(
    "entries, match",
    [
        ([], "empty box list"),
        ([{"id": "a", "category": "Walls", "min": [0, 0, 0]}], "expected keys"),
        ([{"id": "a", "category": "Walls", "min": [1, 0, 0], "max": [0, 1, 1]}], "entry 0"),
        ([{"id": "a", "category": "W", "min": [0, 0, 0], "max": [1, 1, 1]}] * 2, "duplicate"),
        ({"id": "a"}, "JSON array"),
    ],
)
def test_manifest_errors(tmp_path, entries, match):
    p = tmp_path / "b.json"
    p.write_text(json.dumps(entries))
    with pytest.raises(FormatError, match=match):
        read_box_manifest(p)


def test_manifest_bad_json(tmp_path):
    p = tmp_path / "b.json"
    p.write_text('[{"id": 1,\n  oops}]')
    with pytest.raises(FormatError) as err:
        read_box_manifest(p)
    assert err.value.location.startswith("line 2")


def test_ply_round_trip_full(tmp_path):
    rng = np.random.default_rng(0)
    n = rng.normal(size=(40, 3))
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    n[3] = 0.0
    c = SemanticPointCloud(rng.uniform(-5, 5, (40, 3)), n, rng.integers(0, 3, 40))
    t = CategoryTable(["Walls", "Floors", "Curtain Panels"])
    write_ply(tmp_path / "c.ply", c, t, comments=["tool bimloc"])
    back, t2, comments = read_ply(tmp_path / "c.ply")
    assert np.allclose(back.points, c.points, atol=1e-5)
    assert np.allclose(back.normals, c.normals, atol=1e-6)
    assert np.array_equal(back.labels, c.labels)
    assert t2.items() == t.items() and comments == ["tool bimloc"]
    assert not back.normal_valid[3]


def test_ply_points_only_and_ascii(tmp_path):
    write_ply(tmp_path / "p.ply", SemanticPointCloud([[1, 2, 3]]))
    back, t, _ = read_ply(tmp_path / "p.ply")
    assert back.normals is None and back.labels is None and len(t) == 0
    p = tmp_path / "a.ply"
    p.write_text("ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nend_header\n0 0 0\n1 2 3\n")
    back, _, _ = read_ply(p)
    assert back.points.tolist() == [[0, 0, 0], [1, 2, 3]]


def test_ply_truncated(tmp_path):
    write_ply(tmp_path / "p.ply", SemanticPointCloud(np.zeros((10, 3))))
    raw = (tmp_path / "p.ply").read_bytes()
    (tmp_path / "p.ply").write_bytes(raw[:-5])
    with pytest.raises(FormatError, match="truncated"):
        read_ply(tmp_path / "p.ply")


def test_ply_faces_rejected(tmp_path):
    p = tmp_path / "f.ply"
    p.write_text("ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\n"
                 "element face 1\nproperty list uchar int vertex_indices\nend_header\n0 0 0\n3 0 0 0\n")
    with pytest.raises(FormatError) as err:
        read_ply(p)
    assert err.value.location == "header line 7"


def _scans():
    rng = np.random.default_rng(1)
    return [SemanticPointCloud(rng.normal(size=(n, 3)), timestamp=0.1 * i) for i, n in enumerate((5, 0, 7))]


def test_scan_log_round_trip(tmp_path):
    scans = _scans()
    write_scan_log(tmp_path / "s.bin", scans)
    back = read_scans(tmp_path / "s.bin")
    assert [len(s) for s in back] == [5, 0, 7]
    for a, b in zip(back, scans):
        assert a.timestamp == pytest.approx(b.timestamp, abs=1e-9)
        assert np.allclose(a.points, b.points, atol=1e-6)


def test_scan_log_errors(tmp_path):
    p = tmp_path / "s.bin"
    p.write_bytes(b"NOPE")
    with pytest.raises(FormatError, match="magic"):
        read_scan_log(p)
    write_scan_log(p, _scans())
    p.write_bytes(p.read_bytes()[:-4])
    with pytest.raises(FormatError) as err:
        read_scan_log(p)
    assert err.value.location.startswith("byte ")


def test_scan_dir_sorted_by_timestamp(tmp_path):
    scans = _scans()
    write_scan_dir(tmp_path / "scans", scans[::-1])
    back = read_scans(tmp_path / "scans")
    assert [round(s.timestamp, 6) for s in back] == [0.0, 0.1, 0.2]
    (tmp_path / "scans" / "notatime.ply").write_bytes(b"")
    with pytest.raises(FormatError):
        read_scans(tmp_path / "scans")


def test_tum_round_trip(tmp_path):
    traj = [(0.1 * i, Pose.from_xyz_yaw(i, -i, 1.2, 0.3 * i - 1)) for i in range(6)]
    write_tum(tmp_path / "t.tum", traj, header=["tool bimloc"])
    assert (tmp_path / "t.tum").read_text().startswith("# tool bimloc\n")
    back = read_tum(tmp_path / "t.tum")
    for (ta, pa), (tb, pb) in zip(back, traj):
        assert ta == pytest.approx(tb, abs=1e-9)
        assert np.allclose(pa.translation, pb.translation, atol=1e-8)
        assert np.allclose(pa.rotation, pb.rotation, atol=1e-8)


def test_tum_identity_quaternion_order(tmp_path):
    write_tum(tmp_path / "t.tum", [(1.0, Pose())])
    line = (tmp_path / "t.tum").read_text().split()
    assert [float(v) for v in line[4:]] == [0.0, 0.0, 0.0, 1.0]


@pytest.mark.parametrize("row", ["0 1 2 3 0 0 0", "0 1 2 3 0 0 0 x", "0 1 2 3 0 0 0 0"])
def test_tum_errors(tmp_path, row):
    p = tmp_path / "t.tum"
    p.write_text(f"# h\n{row}\n")
    with pytest.raises(FormatError) as err:
        read_tum(p)
    assert err.value.location == "line 2"


def test_jsonl_round_trip(tmp_path):
    recs = [{"step": 0, "cost": 1.5}, {"step": 1, "cost": math.pi}]
    write_jsonl(tmp_path / "d.jsonl", recs)
    assert read_jsonl(tmp_path / "d.jsonl") == recs
