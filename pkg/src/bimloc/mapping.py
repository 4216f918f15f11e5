"""Offline conversion of a building mesh plus element boxes into a labeled point map."""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .geometry import UNLABELED, SemanticPointCloud, SpatialIndex, estimate_normals

log = logging.getLogger(__name__)

DEGENERATE_AREA = 1e-12


class CategoryTable:
    """Bidirectional category name <-> id mapping. Id 0 is reserved for UNLABELED."""

    def __init__(self, names: Iterable[str] = ()):
        self._names: list[str] = []
        self._ids: dict[str, int] = {}
        for name in names:
            self.add(name)

    def add(self, name: str) -> int:
        if name in self._ids:
            return self._ids[name]
        # inner spaces are fine ("Curtain Panels"); edges and line breaks are not
        if not name or name == "UNLABELED" or name != name.strip() or any(c in name for c in "\r\n\t"):
            raise ValueError(f"invalid category name {name!r}")
        self._names.append(name)
        self._ids[name] = len(self._names)
        return self._ids[name]

    def id(self, name: str) -> int:
        try:
            return self._ids[name]
        except KeyError:
            raise KeyError(f"unknown category {name!r}") from None

    def name(self, cid: int) -> str:
        if cid == UNLABELED:
            return "UNLABELED"
        if not 1 <= cid <= len(self._names):
            raise KeyError(f"unknown category id {cid}")
        return self._names[cid - 1]

    @property
    def names(self) -> list[str]:
        return list(self._names)

    def items(self):
        return [(i + 1, n) for i, n in enumerate(self._names)]

    def __contains__(self, name):
        return name in self._ids

    def __len__(self):
        return len(self._names)

    def __eq__(self, other):
        return isinstance(other, CategoryTable) and self._names == other._names

    def __repr__(self):
        return f"CategoryTable({self._names!r})"


@dataclass(frozen=True, eq=False)
class LabeledBox:
    id: str
    category: int
    min_corner: np.ndarray
    max_corner: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.min_corner, dtype=float).reshape(3)
        hi = np.asarray(self.max_corner, dtype=float).reshape(3)
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ValueError(f"box {self.id!r}: non-finite corner")
        if np.any(lo > hi):
            raise ValueError(f"box {self.id!r}: min corner exceeds max corner")
        if int(self.category) < 1:
            raise ValueError(f"box {self.id!r}: category id must be >= 1")
        object.__setattr__(self, "min_corner", lo)
        object.__setattr__(self, "max_corner", hi)

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.min_corner + self.max_corner)


@dataclass
class TriangleMesh:
    """Triangle soup. Degenerate triangles are dropped on construction and counted."""

    vertices: np.ndarray
    triangles: np.ndarray
    dropped_degenerate: int = field(default=0)

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float).reshape(-1, 3)
        tri = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if tri.size and (tri.min() < 0 or tri.max() >= len(self.vertices)):
            raise ValueError("triangle vertex index out of range")
        keep = self.areas_of(self.vertices, tri) > DEGENERATE_AREA
        dropped = int((~keep).sum())
        if dropped:
            log.warning("dropped %d degenerate triangle(s)", dropped)
        self.triangles = tri[keep]
        self.dropped_degenerate += dropped

    @staticmethod
    def areas_of(vertices, triangles) -> np.ndarray:
        if len(triangles) == 0:
            return np.zeros(0)
        a, b, c = (vertices[triangles[:, i]] for i in range(3))
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    @property
    def areas(self) -> np.ndarray:
        return self.areas_of(self.vertices, self.triangles)

    @property
    def corners(self) -> np.ndarray:
        """``(T, 3, 3)`` array of triangle vertex coordinates."""
        return self.vertices[self.triangles]

    def __len__(self):
        return len(self.triangles)

    @classmethod
    def concatenate(cls, meshes: Sequence["TriangleMesh"]) -> "TriangleMesh":
        verts, tris, offset = [], [], 0
        for m in meshes:
            verts.append(m.vertices)
            tris.append(m.triangles + offset)
            offset += len(m.vertices)
        if not verts:
            return cls(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
        return cls(np.vstack(verts), np.vstack(tris))


BOX_FACES = ("-z", "+z", "-y", "+y", "-x", "+x")


def box_mesh(min_corner, max_corner, faces=None) -> TriangleMesh:
    """Axis-aligned box as outward-wound triangles, two per face.

    ``faces`` picks a subset of ``BOX_FACES``; the default is the closed box.
    """
    lo = np.asarray(min_corner, dtype=float)
    hi = np.asarray(max_corner, dtype=float)
    v = np.array([[hi[i] if (k >> i) & 1 else lo[i] for i in range(3)] for k in range(8)])
    tris = {
        "-z": [(0, 2, 3), (0, 3, 1)],
        "+z": [(4, 5, 7), (4, 7, 6)],
        "-y": [(0, 1, 5), (0, 5, 4)],
        "+y": [(2, 6, 7), (2, 7, 3)],
        "-x": [(0, 4, 6), (0, 6, 2)],
        "+x": [(1, 3, 7), (1, 7, 5)],
    }
    faces = BOX_FACES if faces is None else tuple(faces)
    unknown = set(faces) - set(BOX_FACES)
    if unknown:
        raise ValueError(f"unknown box faces {sorted(unknown)}")
    return TriangleMesh(v, np.array([t for f in BOX_FACES if f in faces for t in tris[f]]).reshape(-1, 3))


def sample_mesh(mesh: TriangleMesh, density: float = 30.0, seed: int = 0, return_triangles: bool = False):
    """Uniform surface sampling at ``density`` points per square metre.

    Each triangle receives ``floor(area * density)`` points plus one more with
    probability equal to the fractional remainder, so the expected count is
    exactly ``area * density``. With ``return_triangles`` the source triangle
    of every point is returned as well.
    """
    if density <= 0:
        raise ValueError("density must be positive")
    if len(mesh) == 0:
        raise ValueError("no triangles")
    rng = np.random.default_rng(seed)
    expected = mesh.areas * density
    counts = np.floor(expected).astype(np.int64)
    counts += rng.random(len(counts)) < (expected - counts)
    tri = np.repeat(np.arange(len(mesh)), counts)
    corners = mesh.corners[tri]
    r1 = np.sqrt(rng.random(len(tri)))
    r2 = rng.random(len(tri))
    bary = np.stack([1.0 - r1, r1 * (1.0 - r2), r1 * r2], axis=1)
    pts = np.einsum("ni,nij->nj", bary, corners)
    cloud = SemanticPointCloud(pts, labels=np.full(len(pts), UNLABELED, dtype=np.uint16))
    return (cloud, tri) if return_triangles else cloud


def point_in_box(p, box: LabeledBox) -> bool:
    p = np.asarray(p, dtype=float)
    return bool(np.all(box.min_corner <= p) and np.all(p <= box.max_corner))


def points_in_box(points, lo, hi) -> np.ndarray:
    points = np.asarray(points, dtype=float)
    return np.all((points >= lo) & (points <= hi), axis=-1)


@dataclass
class LabelingReport:
    total: int
    unlabeled: int
    multi_box: int
    mixed: int

    def as_dict(self):
        return {"total": self.total, "unlabeled": self.unlabeled, "multi_box": self.multi_box, "mixed": self.mixed}


def label_map(
    cloud: SemanticPointCloud,
    boxes: Sequence[LabeledBox],
    n_candidates: int = 8,
    return_report: bool = False,
):
    """Label each point with the category of the first containing box.

    Candidate boxes are the ``n_candidates`` with nearest centres, scanned in
    ascending centre distance. Points in no candidate box stay UNLABELED.
    ``multi_box`` counts points inside several candidates and ``mixed`` those
    whose containing candidates disagree on category.
    """
    if not boxes:
        raise ValueError("no boxes")
    if n_candidates < 1:
        raise ValueError("n_candidates must be >= 1")
    lo = np.array([b.min_corner for b in boxes])
    hi = np.array([b.max_corner for b in boxes])
    cats = np.array([b.category for b in boxes], dtype=np.uint16)
    centers = 0.5 * (lo + hi)
    index = SpatialIndex(centers)
    k = min(n_candidates, len(boxes))

    labels = np.full(len(cloud), UNLABELED, dtype=np.uint16)
    multi = mixed = 0
    chunk = 65536
    for start in range(0, len(cloud), chunk):
        pts = cloud.points[start : start + chunk]
        cand, _ = index.query(pts, k)
        inside = np.all((pts[:, None, :] >= lo[cand]) & (pts[:, None, :] <= hi[cand]), axis=-1)
        hit = inside.any(axis=1)
        first = np.argmax(inside, axis=1)
        rows = np.nonzero(hit)[0]
        labels[start + rows] = cats[cand[rows, first[rows]]]
        n_in = inside.sum(axis=1)
        multi += int((n_in > 1).sum())
        cand_cats = np.where(inside, cats[cand].astype(np.int64), -1)
        hi_cat = cand_cats.max(axis=1)
        lo_cat = np.where(inside, cand_cats, np.iinfo(np.int64).max).min(axis=1)
        mixed += int(((n_in > 1) & (hi_cat != lo_cat)).sum())

    out = cloud.with_labels(labels)
    if return_report:
        report = LabelingReport(len(cloud), int((labels == UNLABELED).sum()), multi, mixed)
        return out, report
    return out


def category_histogram(cloud: SemanticPointCloud, table: CategoryTable) -> dict[str, int]:
    counts = Counter(cloud.labels.tolist()) if cloud.labels is not None else Counter({UNLABELED: len(cloud)})
    hist = {name: int(counts.get(cid, 0)) for cid, name in table.items()}
    hist["UNLABELED"] = int(counts.get(UNLABELED, 0))
    return hist


@dataclass
class SemanticMap:
    cloud: SemanticPointCloud
    table: CategoryTable
    histogram: dict[str, int]
    report: LabelingReport


def build_semantic_map(
    mesh: TriangleMesh,
    boxes: Sequence[LabeledBox],
    table: CategoryTable,
    density: float = 30.0,
    seed: int = 0,
    normal_k: int = 10,
    n_candidates: int = 8,
) -> SemanticMap:
    """Sample, label and attach normals in one pass."""
    if not boxes:
        raise ValueError("no boxes")
    sampled = sample_mesh(mesh, density, seed)
    labeled, report = label_map(sampled, boxes, n_candidates, return_report=True)
    cloud = estimate_normals(labeled, normal_k)
    hist = category_histogram(cloud, table)
    log.info("semantic map: %d points, %s", len(cloud), hist)
    return SemanticMap(cloud, table, hist, report)
