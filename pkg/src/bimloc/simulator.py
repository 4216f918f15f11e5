"""Ray-casting range sensor simulator with as-built deviations and dynamic returns."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import _raycast
from .geometry import Pose, SemanticPointCloud
from .io import write_scan_dir, write_tum
from .mapping import LabeledBox, TriangleMesh, box_mesh


@dataclass(frozen=True)
class SensorModel:
    """Spinning multi-beam range sensor. Angles in radians."""

    channels: int = 16
    vertical_fov: tuple = (math.radians(-15.0), math.radians(15.0))
    horizontal_step: float = math.radians(0.2)
    max_range: float = 100.0
    range_noise_sigma: float = 0.02
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "vertical_fov", tuple(float(a) for a in self.vertical_fov))
        if self.channels < 1:
            raise ValueError("channels must be >= 1")
        if not self.max_range > 0:
            raise ValueError("max_range must be positive")
        if self.range_noise_sigma < 0:
            raise ValueError("range_noise_sigma must be >= 0")
        if not 0 < self.horizontal_step <= 2 * math.pi:
            raise ValueError("horizontal_step must lie in (0, 2 pi]")

    @classmethod
    def from_dict(cls, d: dict) -> "SensorModel":
        d = dict(d)
        if "vertical_fov_deg" in d:
            d["vertical_fov"] = tuple(math.radians(a) for a in d.pop("vertical_fov_deg"))
        if "horizontal_step_deg" in d:
            d["horizontal_step"] = math.radians(d.pop("horizontal_step_deg"))
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown sensor keys: {sorted(unknown)}")
        return cls(**d)

    def ray_directions(self) -> np.ndarray:
        """Unit ray directions in the sensor frame, channel-major."""
        lo, hi = self.vertical_fov
        elev = np.linspace(lo, hi, self.channels) if self.channels > 1 else np.array([0.5 * (lo + hi)])
        n_az = int(round(2 * math.pi / self.horizontal_step))
        az = np.arange(n_az) * self.horizontal_step
        el, a = np.meshgrid(elev, az, indexing="ij")
        return np.stack([np.cos(el) * np.cos(a), np.cos(el) * np.sin(a), np.sin(el)], axis=-1).reshape(-1, 3)


@dataclass
class DeviationSpec:
    """Differences between the modeled and the simulated building."""

    add: list = field(default_factory=list)
    remove: list = field(default_factory=list)
    dynamic_fraction: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.dynamic_fraction < 1.0:
            raise ValueError("dynamic_fraction must lie in [0, 1)")
        self.add = [(np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)) for lo, hi in self.add]
        self.remove = [str(r) for r in self.remove]


class Scene:
    """Immutable triangle soup with a BVH for nearest-hit ray queries."""

    def __init__(self, mesh: TriangleMesh, dynamic_fraction: float = 0.0):
        self.mesh = mesh
        self.dynamic_fraction = float(dynamic_fraction)
        corners = mesh.corners
        if len(corners):
            *bvh, order = _raycast.build_bvh(corners)
            c = corners[order]
        else:
            bvh = [np.zeros((1, 3)), np.zeros((1, 3)), np.full(1, -1), np.full(1, -1), np.zeros(1, dtype=np.int64), np.zeros(1, dtype=np.int64)]
            order = np.zeros(0, dtype=np.int64)
            c = np.zeros((0, 3, 3))
        self._bvh = tuple(np.ascontiguousarray(a) for a in bvh)
        self._order = order
        self._v0 = np.ascontiguousarray(c[:, 0])
        self._e1 = np.ascontiguousarray(c[:, 1] - c[:, 0])
        self._e2 = np.ascontiguousarray(c[:, 2] - c[:, 0])

    def __len__(self):
        return len(self.mesh)

    def cast(self, origin, directions, max_range: float = np.inf):
        """Nearest hit distance per ray (``inf`` on miss) and the hit triangle index (-1 on miss)."""
        if len(self.mesh) == 0:
            n = len(directions)
            return np.full(n, np.inf), np.full(n, -1, dtype=np.int64)
        ranges, tri = _raycast.cast_rays_kernel(
            np.ascontiguousarray(origin, dtype=float),
            np.ascontiguousarray(directions, dtype=float),
            float(max_range),
            self._v0, self._e1, self._e2, *self._bvh,
        )
        tri = np.where(tri >= 0, self._order[np.maximum(tri, 0)], -1)
        return ranges, tri


def build_scene(mesh: TriangleMesh, deviations: Optional[DeviationSpec] = None, boxes: Sequence[LabeledBox] = ()) -> Scene:
    """Scene = mesh minus triangles of removed elements plus faces of added boxes.

    A removed element's triangles are those whose centroid lies in its box.
    """
    deviations = deviations or DeviationSpec()
    by_id = {b.id: b for b in boxes}
    missing = [r for r in deviations.remove if r not in by_id]
    if missing:
        raise KeyError(f"removal ids not found: {missing}")
    keep = np.ones(len(mesh), dtype=bool)
    if deviations.remove:
        cent = mesh.corners.mean(axis=1)
        for rid in deviations.remove:
            b = by_id[rid]
            keep &= ~np.all((cent >= b.min_corner) & (cent <= b.max_corner), axis=1)
    parts = [TriangleMesh(mesh.vertices, mesh.triangles[keep])]
    parts += [box_mesh(lo, hi) for lo, hi in deviations.add]
    return Scene(TriangleMesh.concatenate(parts), deviations.dynamic_fraction)


def cast_scan(scene: Scene, pose: Pose, sensor: SensorModel = SensorModel(), scan_index: int = 0, timestamp: Optional[float] = None) -> SemanticPointCloud:
    """One sweep from ``pose``; points are returned in the sensor frame.

    Randomness (range noise, dynamic returns) is drawn from a generator
    seeded with ``(sensor.seed, scan_index)``.
    """
    dirs = sensor.ray_directions()
    ranges, _ = scene.cast(pose.translation, dirs @ pose.rotation.T, sensor.max_range)
    rng = np.random.default_rng([sensor.seed, scan_index])
    if scene.dynamic_fraction > 0:
        dyn = rng.random(len(dirs)) < scene.dynamic_fraction
        ranges = np.where(dyn, rng.uniform(0.5, 3.0, len(dirs)), ranges)
    hit = np.isfinite(ranges)
    r = ranges[hit]
    if sensor.range_noise_sigma > 0:
        r = r + rng.normal(0.0, sensor.range_noise_sigma, len(r))
    return SemanticPointCloud(dirs[hit] * r[:, None], timestamp=timestamp)


def simulate_sequence(scene: Scene, trajectory: Sequence[tuple[float, Pose]], sensor: SensorModel = SensorModel(), out_dir=None):
    """Cast one scan per trajectory pose.

    With ``out_dir`` the scans go to ``out_dir/scans/<timestamp_ns>.ply`` and the
    poses to ``out_dir/groundtruth.tum``. Returns ``(scans, trajectory)``.
    """
    stamps = [t for t, _ in trajectory]
    if any(b <= a for a, b in zip(stamps, stamps[1:])):
        raise ValueError("trajectory timestamps are not strictly increasing")
    scans = [cast_scan(scene, pose, sensor, i, t) for i, (t, pose) in enumerate(trajectory)]
    if out_dir is not None:
        out = Path(out_dir)
        write_scan_dir(out / "scans", scans)
        write_tum(out / "groundtruth.tum", trajectory)
    return scans, list(trajectory)


def straight_trajectory(start, end, spacing: float, yaw: Optional[float] = None, z: float = 0.0, dt: float = 0.1, t0: float = 0.0):
    """Poses every ``spacing`` metres from ``start`` to ``end`` (both inclusive), heading along the path."""
    start = np.asarray(start, dtype=float)
    end = np.asarray(end, dtype=float)
    length = float(np.linalg.norm(end - start))
    n = int(round(length / spacing)) + 1
    heading = math.atan2(end[1] - start[1], end[0] - start[0]) if yaw is None else yaw
    out = []
    for i in range(n):
        xy = start + (end - start) * (i / (n - 1) if n > 1 else 0.0)
        out.append((t0 + i * dt, Pose.from_xyz_yaw(xy[0], xy[1], z, heading)))
    return out
