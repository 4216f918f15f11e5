"""Points, rigid poses, k-nearest-neighbour search and normal estimation."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.spatial.transform import Rotation

from . import _grid

UNLABELED = 0

_ORTHO_TOL = 1e-9


def _as_points(points) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1 and pts.size == 3:
        pts = pts.reshape(1, 3)
    if pts.ndim != 2 or (pts.size and pts.shape[1] != 3):
        raise ValueError(f"expected an (N, 3) array of points, got shape {pts.shape}")
    return pts.reshape(-1, 3)


def skew(v) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def so3_exp(omega) -> np.ndarray:
    """Rodrigues formula; exact for any rotation vector."""
    omega = np.asarray(omega, dtype=float)
    theta = float(np.linalg.norm(omega))
    K = skew(omega)
    if theta < 1e-12:
        return np.eye(3) + K
    a = np.sin(theta) / theta
    b = (1.0 - np.cos(theta)) / theta**2
    return np.eye(3) + a * K + b * (K @ K)


def rot_z(yaw: float) -> np.ndarray:
    c, s = np.cos(yaw), np.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform ``p -> R p + t``."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.array(self.rotation, dtype=float).reshape(3, 3)
        t = np.array(self.translation, dtype=float).reshape(3)
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(t))):
            raise ValueError("pose contains non-finite values")
        if np.abs(R.T @ R - np.eye(3)).max() >= _ORTHO_TOL or np.linalg.det(R) <= 0:
            raise ValueError("rotation is not a proper orthonormal matrix")
        R.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Pose":
        return cls()

    @classmethod
    def from_matrix(cls, T) -> "Pose":
        T = np.asarray(T, dtype=float)
        return cls(T[:3, :3], T[:3, 3])

    @classmethod
    def from_xyz_yaw(cls, x: float, y: float, z: float = 0.0, yaw: float = 0.0) -> "Pose":
        return cls(rot_z(yaw), [x, y, z])

    @classmethod
    def from_twist(cls, twist) -> "Pose":
        """Pose from ``(wx, wy, wz, vx, vy, vz)``; rotation by exp map, translation taken as-is."""
        twist = np.asarray(twist, dtype=float)
        return cls(so3_exp(twist[:3]), twist[3:])

    def as_matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    def compose(self, other: "Pose") -> "Pose":
        """``self * other``: apply ``other`` first."""
        R = self.rotation @ other.rotation
        if np.abs(R.T @ R - np.eye(3)).max() > 1e-12:
            # re-orthonormalise so long chains stay inside the tolerance
            u, _, vt = np.linalg.svd(R)
            R = u @ vt
        return Pose(R, self.rotation @ other.translation + self.translation)

    __matmul__ = compose

    def inverse(self) -> "Pose":
        Rt = self.rotation.T
        return Pose(Rt, -Rt @ self.translation)

    def apply(self, points) -> np.ndarray:
        pts = _as_points(points)
        return pts @ self.rotation.T + self.translation

    def __repr__(self):
        t = np.round(self.translation, 4).tolist()
        rv = np.round(np.degrees(_rotvec(self.rotation)), 3).tolist()
        return f"Pose(t={t}, rotvec_deg={rv})"


def _rotvec(R: np.ndarray) -> np.ndarray:
    return Rotation.from_matrix(R).as_rotvec()


def project_se2(pose: Pose) -> tuple[float, float, float]:
    """Planar projection ``(x, y, yaw)`` of a pose."""
    R = pose.rotation
    if abs(R[2, 0]) > 1.0 - 1e-6:
        raise ValueError("yaw undefined: pitch is within 1e-6 of +-90 degrees")
    yaw = float(np.arctan2(R[1, 0], R[0, 0]))
    return float(pose.translation[0]), float(pose.translation[1]), yaw


@dataclass(frozen=True, eq=False)
class SemanticPointCloud:
    """Points with optional unit normals, integer category labels and a timestamp.

    A zero normal marks a point whose normal could not be estimated.
    """

    points: np.ndarray
    normals: Optional[np.ndarray] = None
    labels: Optional[np.ndarray] = None
    timestamp: Optional[float] = None

    def __post_init__(self):
        pts = _as_points(self.points).copy()
        if not np.all(np.isfinite(pts)):
            raise ValueError("point cloud contains non-finite coordinates")
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)
        n = len(pts)
        if self.normals is not None:
            nrm = np.array(self.normals, dtype=float).reshape(-1, 3)
            if len(nrm) != n:
                raise ValueError("normals and points differ in length")
            lengths = np.linalg.norm(nrm, axis=1)
            bad = (np.abs(lengths - 1.0) > 1e-6) & (lengths != 0.0)
            if bad.any():
                raise ValueError("normals must be unit length (or zero for invalid)")
            nrm.flags.writeable = False
            object.__setattr__(self, "normals", nrm)
        if self.labels is not None:
            lab = np.array(self.labels, dtype=np.uint16).reshape(-1)
            if len(lab) != n:
                raise ValueError("labels and points differ in length")
            lab.flags.writeable = False
            object.__setattr__(self, "labels", lab)

    def __len__(self):
        return len(self.points)

    @property
    def has_normals(self) -> bool:
        return self.normals is not None

    @property
    def has_labels(self) -> bool:
        return self.labels is not None

    @property
    def normal_valid(self) -> np.ndarray:
        if self.normals is None:
            return np.zeros(len(self), dtype=bool)
        return np.any(self.normals != 0.0, axis=1)

    def select(self, mask_or_index) -> "SemanticPointCloud":
        """Subset of the cloud, keeping per-point attributes aligned."""
        idx = np.asarray(mask_or_index)
        return SemanticPointCloud(
            self.points[idx],
            None if self.normals is None else self.normals[idx],
            None if self.labels is None else self.labels[idx],
            self.timestamp,
        )

    def with_labels(self, labels) -> "SemanticPointCloud":
        return replace(self, labels=labels)

    def with_normals(self, normals) -> "SemanticPointCloud":
        return replace(self, normals=normals)


class SpatialIndex:
    """Exact k-nearest-neighbour index over a fixed point set.

    Distances are Euclidean and ties are broken by ascending point index, so
    results match a sorted linear scan exactly. Backed by a uniform voxel
    grid, which suits surface-sampled clouds.
    """

    def __init__(self, points, cell: float | None = None):
        pts = _as_points(points)
        if len(pts) == 0:
            raise ValueError("empty point set")
        if not np.all(np.isfinite(pts)):
            raise ValueError("point set contains non-finite coordinates")
        self._points = np.ascontiguousarray(pts, dtype=float).copy()
        self._points.flags.writeable = False
        self._grid = _grid.build_grid(self._points, cell)

    @property
    def points(self) -> np.ndarray:
        return self._points

    @property
    def cell(self) -> float:
        return self._grid[1]

    def __len__(self):
        return len(self._points)

    def query(self, queries, k: int) -> tuple[np.ndarray, np.ndarray]:
        """Batched k-NN. Returns ``(indices, distances)``, each ``(Q, k)``."""
        n = len(self._points)
        if not isinstance(k, (int, np.integer)) or k < 1 or k > n:
            raise ValueError("invalid k")
        q = np.ascontiguousarray(_as_points(queries), dtype=float)
        if len(q) == 0:
            return np.empty((0, k), dtype=np.intp), np.empty((0, k))
        if not np.all(np.isfinite(q)):
            raise ValueError("query contains non-finite coordinates")
        origin, h, dims, start, order = self._grid
        idx, dist = _grid.knn_kernel(self._points, origin, h, dims, start, order, q, int(k))
        return idx.astype(np.intp, copy=False), dist


def build_index(points) -> SpatialIndex:
    return SpatialIndex(points)


def knn(index: SpatialIndex, query, k: int) -> list[tuple[int, float]]:
    """k nearest neighbours of a single query point as ``(index, distance)`` pairs."""
    idx, dist = index.query(np.asarray(query, dtype=float).reshape(1, 3), k)
    return [(int(i), float(d)) for i, d in zip(idx[0], dist[0])]


def estimate_normals(cloud: SemanticPointCloud, k: int = 10, index: SpatialIndex | None = None) -> SemanticPointCloud:
    """PCA normals from the ``k`` nearest neighbours of every point.

    Each normal is flipped so it does not point toward the cloud centroid;
    when that test is inconclusive (point coplanar with the centroid) the
    largest-magnitude component is made positive. Neighbourhoods of rank < 2
    get a zero normal.
    """
    if k < 3:
        raise ValueError("k must be at least 3")
    if len(cloud) < k:
        raise ValueError(f"cloud has {len(cloud)} points, fewer than k={k}")
    pts = cloud.points
    index = index or SpatialIndex(pts)
    idx, _ = index.query(pts, k)
    nbr = pts[idx]
    centered = nbr - nbr.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered) / k
    evals, evecs = np.linalg.eigh(cov)
    normals = evecs[:, :, 0].copy()

    scale = np.maximum(evals[:, 2], 1e-300)
    degenerate = (evals[:, 1] <= 1e-10 * scale) | (evals[:, 2] <= 1e-24)

    to_centroid = pts.mean(axis=0) - pts
    s = np.einsum("ij,ij->i", normals, to_centroid)
    tol = 1e-9 * np.maximum(np.linalg.norm(to_centroid, axis=1), 1.0)
    flip = s > tol
    undecided = np.abs(s) <= tol
    if undecided.any():
        rows = np.nonzero(undecided)[0]
        major = np.argmax(np.abs(normals[rows]), axis=1)
        flip[rows] = normals[rows, major] < 0
    normals[flip] *= -1.0
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    normals[degenerate] = 0.0
    return cloud.with_normals(normals)


def transform(cloud: SemanticPointCloud, pose: Pose) -> SemanticPointCloud:
    """Rigidly move a cloud; normals are rotated, labels and timestamp kept."""
    normals = None if cloud.normals is None else cloud.normals @ pose.rotation.T
    return SemanticPointCloud(pose.apply(cloud.points), normals, cloud.labels, cloud.timestamp)
