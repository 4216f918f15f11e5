import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bimloc.geometry import UNLABELED, SemanticPointCloud
from bimloc.mapping import (
    CategoryTable,
    LabeledBox,
    TriangleMesh,
    box_mesh,
    build_semantic_map,
    category_histogram,
    label_map,
    point_in_box,
    sample_mesh,
)


def brute_force_labels(points, boxes):
    """First containing box in (centre distance, box order); no candidate pruning."""
    centers = np.array([b.center for b in boxes])
    out = np.zeros(len(points), dtype=np.uint16)
    for i, p in enumerate(points):
        d = np.linalg.norm(centers - p, axis=1)
        for j in np.lexsort((np.arange(len(boxes)), d)):
            b = boxes[j]
            if np.all(b.min_corner <= p) and np.all(p <= b.max_corner):
                out[i] = b.category
                break
    return out


def random_boxes(rng, n, n_cat=5):
    lo = rng.uniform(0, 10, (n, 3))
    return [LabeledBox(f"b{i}", int(rng.integers(1, n_cat + 1)), lo[i], lo[i] + rng.uniform(0.5, 3, 3)) for i in range(n)]


def unit_square(z=0.0):
    return TriangleMesh([[0, 0, z], [1, 0, z], [1, 1, z], [0, 1, z]], [[0, 1, 2], [0, 2, 3]])


# ---------------------------------------------------------- CategoryTable


def test_category_table():
    t = CategoryTable(["Walls", "Floors"])
    assert t.id("Walls") == 1 and t.name(2) == "Floors" and t.name(UNLABELED) == "UNLABELED"
    assert t.add("Walls") == 1 and len(t) == 2
    assert t.add("Curtain Panels") == 3
    for bad in ["", "UNLABELED", " Walls", "a\nb"]:
        with pytest.raises(ValueError):
            t.add(bad)
    with pytest.raises(KeyError):
        t.id("Doors")


def test_box_invariants():
    with pytest.raises(ValueError):
        LabeledBox("x", 1, [1, 0, 0], [0, 1, 1])
    with pytest.raises(ValueError):
        LabeledBox("x", 0, [0, 0, 0], [1, 1, 1])


# ---------------------------------------------------------------- mesh


def test_degenerate_triangles_dropped(caplog):
    with caplog.at_level(logging.WARNING):
        m = TriangleMesh([[0, 0, 0], [1, 0, 0], [2, 0, 0], [0, 1, 0]], [[0, 1, 2], [0, 1, 3]])
    assert len(m) == 1 and m.dropped_degenerate == 1
    assert "degenerate" in caplog.text


def test_mesh_index_range():
    with pytest.raises(ValueError):
        TriangleMesh(np.zeros((3, 3)), [[0, 1, 3]])


def test_box_mesh_faces():
    m = box_mesh([0, 0, 0], [0.4, 0.4, 3])
    assert len(m) == 12
    assert m.areas.sum() == pytest.approx(2 * (0.16 + 1.2 + 1.2))
    top = box_mesh([0, 0, 0], [1, 2, 3], faces=["+z"])
    assert len(top) == 2 and np.all(top.corners[:, :, 2] == 3)
    with pytest.raises(ValueError):
        box_mesh([0, 0, 0], [1, 1, 1], faces=["up"])


# ------------------------------------------------------------- sampling


def test_sample_unit_square():
    c = sample_mesh(unit_square(), 30, seed=0)
    assert 24 <= len(c) <= 36
    assert np.all((c.points[:, :2] >= 0) & (c.points[:, :2] <= 1)) and np.all(c.points[:, 2] == 0)
    assert np.all(c.labels == UNLABELED) and c.normals is None


def test_sample_deterministic():
    tri = TriangleMesh([[0, 0, 0], [4, 0, 0], [0, 3, 1]], [[0, 1, 2]])
    a, b = sample_mesh(tri, 0.5, seed=11), sample_mesh(tri, 0.5, seed=11)
    assert np.array_equal(a.points, b.points)


def test_sample_empty_mesh():
    with pytest.raises(ValueError, match="no triangles"):
        sample_mesh(TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3))), 30)


@pytest.mark.parametrize("d", [0.7, 3.0, 30.0])
def test_sample_mean_count(d):
    # 10 m^2 made of uneven triangles
    m = TriangleMesh.concatenate([box_mesh([0, 0, 0], [2, 1, 0.5], faces=["+z", "-z", "+x", "-x", "+y", "-y"]), unit_square(5)])
    m = TriangleMesh.concatenate([m, TriangleMesh([[0, 0, 9], [2, 0, 9], [0, 2, 9]], [[0, 1, 2]])])
    assert m.areas.sum() == pytest.approx(10.0)
    counts = [len(sample_mesh(m, d, seed=s)) for s in range(100)]
    assert abs(np.mean(counts) - 10 * d) <= 0.05 * 10 * d


@given(st.integers(0, 2**31), st.floats(0.5, 200))
@settings(max_examples=40, deadline=None)
def test_sampled_points_inside_source_triangle(seed, density):
    rng = np.random.default_rng(seed)
    v = rng.normal(size=(12, 3)) * 3
    m = TriangleMesh(v, rng.integers(0, 12, (6, 3)))
    if len(m) == 0:
        return
    cloud, tri = sample_mesh(m, density, seed, return_triangles=True)
    for p, t in zip(cloud.points, tri):
        a, b, c = m.corners[t]
        # barycentric coordinates by least squares on the triangle plane
        uv, *_ = np.linalg.lstsq(np.c_[b - a, c - a], p - a, rcond=None)
        bary = np.array([1 - uv.sum(), uv[0], uv[1]])
        assert np.all(bary >= -1e-9) and np.all(bary <= 1 + 1e-9)
        assert abs(bary.sum() - 1) < 1e-9


# ------------------------------------------------------------- labeling


def test_point_in_box_examples():
    b = LabeledBox("b", 1, [0, 0, 0], [2, 2, 2])
    assert point_in_box((1, 1, 1), b)
    assert point_in_box((0, 1, 1), b)
    assert not point_in_box((3, 1, 1), b)


def test_label_single_and_none():
    t = CategoryTable(["Walls", "Floors"])
    boxes = [LabeledBox("w", t.id("Walls"), [0, 0, 0], [1, 1, 1])]
    c = label_map(SemanticPointCloud([[0.5, 0.5, 0.5], [5, 5, 5]]), boxes)
    assert c.labels.tolist() == [t.id("Walls"), UNLABELED]


def test_label_mixed_point_nearer_center_wins():
    t = CategoryTable(["Walls", "Floors"])
    wall = LabeledBox("w", t.id("Walls"), [0, 0, 0], [0.2, 4, 3])
    floor = LabeledBox("f", t.id("Floors"), [-1, -1, -0.2], [6, 6, 0.1])
    pt = [0.1, 2.0, 0.05]  # wall centre is 1.45 away, floor centre 2.75
    c, rep = label_map(SemanticPointCloud([pt]), [floor, wall], return_report=True)
    assert c.labels[0] == t.id("Walls")
    assert rep.mixed == 1 and rep.multi_box == 1 and rep.unlabeled == 0


def test_label_empty_boxes():
    with pytest.raises(ValueError):
        label_map(SemanticPointCloud(np.zeros((1, 3))), [])


def test_label_equals_brute_force():
    rng = np.random.default_rng(0)
    boxes = random_boxes(rng, 50)
    pts = rng.uniform(0, 12, (1000, 3))
    c = label_map(SemanticPointCloud(pts), boxes, n_candidates=50)
    assert np.array_equal(c.labels, brute_force_labels(pts, boxes))


@given(st.integers(0, 2**31), st.integers(1, 30))
@settings(max_examples=25, deadline=None)
def test_label_property_full_candidates(seed, n_boxes):
    rng = np.random.default_rng(seed)
    boxes = random_boxes(rng, n_boxes)
    # include box corners so boundary points are exercised
    pts = np.vstack([rng.uniform(0, 12, (60, 3)), boxes[0].min_corner, boxes[0].max_corner])
    c = label_map(SemanticPointCloud(pts), boxes, n_candidates=n_boxes)
    assert np.array_equal(c.labels, brute_force_labels(pts, boxes))


def test_label_idempotent_and_histogram():
    rng = np.random.default_rng(1)
    boxes = random_boxes(rng, 20)
    t = CategoryTable([f"C{i}" for i in range(1, 6)])
    pts = SemanticPointCloud(rng.uniform(0, 12, (500, 3)))
    once = label_map(pts, boxes)
    twice = label_map(once, boxes)
    assert np.array_equal(once.labels, twice.labels)
    hist = category_histogram(once, t)
    assert sum(hist.values()) == len(pts)


# --------------------------------------------------------- semantic map


def test_two_walls_density_100():
    t = CategoryTable(["WallA", "WallB"])
    mesh = TriangleMesh.concatenate([box_mesh([0, 0, 0], [0, 1, 1], faces=["+x"]), box_mesh([0, 0, 0], [1, 0, 1], faces=["+y"])])
    boxes = [LabeledBox("a", 1, [-0.1, 0, 0], [0.0, 1, 1]), LabeledBox("b", 2, [0, -0.1, 0], [1, 0.0, 1])]
    sm = build_semantic_map(mesh, boxes, t, density=100, seed=0)
    on_a = sm.cloud.points[:, 0] == 0.0
    assert np.mean(sm.cloud.labels[on_a] == 1) >= 0.95
    assert np.mean(sm.cloud.labels[~on_a] == 2) >= 0.95
    assert sum(sm.histogram.values()) == len(sm.cloud)
    assert sm.cloud.normals is not None


def test_universal_floor_box():
    t = CategoryTable(["Floors"])
    mesh = box_mesh([0, 0, 0], [3, 2, 1])
    sm = build_semantic_map(mesh, [LabeledBox("all", 1, [-1, -1, -1], [4, 4, 4])], t, density=20, seed=2)
    assert np.all(sm.cloud.labels == 1)
    assert sm.histogram == {"Floors": len(sm.cloud), "UNLABELED": 0}


def test_semantic_map_rejects_no_boxes():
    with pytest.raises(ValueError):
        build_semantic_map(unit_square(), [], CategoryTable(), 30, 0)
