"""Weighted point-to-plane ICP.

The objective minimised at every iteration is ``sum_s w_s * r_s**2`` where
``r_s = (R p_s + t - m_s) . n_s`` uses the first nearest map neighbour
``m_s`` and its normal ``n_s``. Weights come from one of four schemes:
the two baseline geometric filters (trimmed distance and surface normal
agreement), a Huber-style weight on the residual, a semantic agreement
weight, or the product of the last two.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import Pose, SemanticPointCloud, SpatialIndex, so3_exp

log = logging.getLogger(__name__)


class WeightMode(str, enum.Enum):
    ORG = "ORG"
    HUBER = "HUBER"
    SEMANTIC = "SEMANTIC"
    SEMANTIC_HUBER = "SEMANTIC_HUBER"


class DegenerateRegistrationError(RuntimeError):
    pass


@dataclass(frozen=True)
class WeightConfig:
    mu: float = 0.8
    delta: float = 0.05
    mode: WeightMode = WeightMode.ORG
    trim_ratio: float = 0.85
    normal_angle_max: float = math.radians(50.0)
    k: int = 3
    min_weight: float = 1e-3
    converge_translation: float = 1e-4
    converge_rotation: float = 1e-4

    def __post_init__(self):
        object.__setattr__(self, "mode", WeightMode(self.mode))
        if not 0.5 <= self.mu <= 1.0:
            raise ValueError("mu must lie in [0.5, 1]")
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if not 0.0 < self.trim_ratio <= 1.0:
            raise ValueError("trim_ratio must lie in (0, 1]")
        if not 0.0 <= self.normal_angle_max <= math.pi:
            raise ValueError("normal_angle_max must lie in [0, pi]")
        if self.k < 1:
            raise ValueError("k must be >= 1")


@dataclass(frozen=True, eq=False)
class AssociationMatrix:
    """K nearest map matches of every scan point, in ascending distance.

    ``residuals`` are absolute point-to-plane errors against each match's
    normal (NaN where the map normal is invalid); ``points`` are the scan
    points after applying ``pose``.
    """

    indices: np.ndarray
    distances: np.ndarray
    residuals: np.ndarray
    points: np.ndarray
    pose: Pose

    @property
    def S(self) -> int:
        return self.indices.shape[0]

    @property
    def K(self) -> int:
        return self.indices.shape[1]


def associate(scan: SemanticPointCloud, map_cloud: SemanticPointCloud, map_index: SpatialIndex, pose: Pose, k: int) -> AssociationMatrix:
    if len(scan) == 0:
        raise ValueError("empty scan")
    if k > len(map_index):
        raise ValueError(f"k={k} exceeds map size {len(map_index)}")
    pts = pose.apply(scan.points)
    idx, dist = map_index.query(pts, k)
    if map_cloud.normals is not None:
        n = map_cloud.normals[idx]
        res = np.abs(np.einsum("skj,skj->sk", pts[:, None, :] - map_cloud.points[idx], n))
        res[~np.any(n != 0.0, axis=-1)] = np.nan
    else:
        res = np.full(idx.shape, np.nan)
    return AssociationMatrix(idx, dist, res, pts, pose)


def point_to_plane_residual(p, m, n, pose: Pose = Pose()) -> float:
    return float(abs(np.dot(pose.apply(p)[0] - np.asarray(m, dtype=float), np.asarray(n, dtype=float))))


def weight_semantic(scan_label, map_label, mu: float):
    """``mu`` where labels agree, ``1 - mu`` otherwise."""
    w = np.where(np.asarray(scan_label) == np.asarray(map_label), mu, 1.0 - mu)
    return float(w) if w.ndim == 0 else w


def weight_huber(residual, delta: float):
    """1 below ``delta``, ``delta / residual`` at or above it."""
    r = np.asarray(residual, dtype=float)
    with np.errstate(divide="ignore"):
        w = np.where(r < delta, 1.0, delta / np.maximum(r, delta))
    return float(w) if w.ndim == 0 else w


def weight_combined(w_c, w_rho):
    w = np.asarray(w_c, dtype=float) * np.asarray(w_rho, dtype=float)
    return float(w) if w.ndim == 0 else w


def trimmed_distance_filter(assoc, trim_ratio: float) -> np.ndarray:
    """Keep the ``ceil(trim_ratio * S)`` closest first-neighbour matches."""
    if not 0.0 < trim_ratio <= 1.0:
        raise ValueError("trim_ratio must lie in (0, 1]")
    d = assoc.distances[:, 0] if isinstance(assoc, AssociationMatrix) else np.asarray(assoc, dtype=float)
    keep = math.ceil(trim_ratio * len(d) - 1e-9)
    w = np.zeros(len(d))
    w[np.argsort(d, kind="stable")[:keep]] = 1.0
    return w


_warned_no_scan_normals = False


def surface_normal_filter(assoc: AssociationMatrix, scan_normals, map_normals, normal_angle_max: float) -> np.ndarray:
    """Zero-weight matches whose normals differ by more than ``normal_angle_max``.

    Orientation is ignored (normals of independently estimated clouds have
    arbitrary sign). Matches with an invalid normal on either side pass.
    """
    global _warned_no_scan_normals
    if scan_normals is None or map_normals is None:
        if not _warned_no_scan_normals:
            log.warning("surface normal filter disabled: normals missing")
            _warned_no_scan_normals = True
        return np.ones(assoc.S)
    ns = np.asarray(scan_normals) @ assoc.pose.rotation.T
    nm = np.asarray(map_normals)[assoc.indices[:, 0]]
    cos = np.abs(np.einsum("ij,ij->i", ns, nm))
    valid = np.any(ns != 0.0, axis=1) & np.any(nm != 0.0, axis=1)
    keep = cos >= math.cos(normal_angle_max) - 1e-12
    return np.where(valid & ~keep, 0.0, 1.0)


def compute_weights(config: WeightConfig, assoc: AssociationMatrix, scan: SemanticPointCloud, map_cloud: SemanticPointCloud, residual: np.ndarray) -> np.ndarray:
    mode = config.mode
    if mode is WeightMode.ORG:
        w = trimmed_distance_filter(assoc, config.trim_ratio)
        w *= surface_normal_filter(assoc, scan.normals, map_cloud.normals, config.normal_angle_max)
        return w
    w = np.ones(assoc.S)
    if mode in (WeightMode.SEMANTIC, WeightMode.SEMANTIC_HUBER):
        if scan.labels is None or map_cloud.labels is None:
            raise ValueError(f"{mode.value} weighting needs labeled scan and map")
        w = weight_combined(w, weight_semantic(scan.labels, map_cloud.labels[assoc.indices[:, 0]], config.mu))
    if mode in (WeightMode.HUBER, WeightMode.SEMANTIC_HUBER):
        w = weight_combined(w, weight_huber(np.abs(residual), config.delta))
    return np.asarray(w, dtype=float)


def _linear_system(points_w, targets, normals, weights):
    r = np.einsum("ij,ij->i", points_w - targets, normals)
    J = np.hstack([np.cross(points_w, normals), normals])
    Jw = J * weights[:, None]
    return Jw.T @ J, Jw.T @ r, r


def weighted_objective(pose: Pose, scan_points, targets, normals, weights) -> float:
    """``sum w * ((R p + t - m) . n)**2`` on fixed matches."""
    r = np.einsum("ij,ij->i", pose.apply(scan_points) - targets, normals)
    return float(np.sum(weights * r * r))


def objective_gradient(pose: Pose, scan_points, targets, normals, weights) -> np.ndarray:
    """Gradient of :func:`weighted_objective` w.r.t. a left-multiplied twist ``(w, v)``."""
    _, g, _ = _linear_system(pose.apply(scan_points), targets, normals, weights)
    return 2.0 * g


def gauss_newton_step(pose: Pose, scan_points, targets, normals, weights) -> tuple[Pose, np.ndarray]:
    """One weighted point-to-plane Gauss-Newton update on fixed matches.

    Returns the updated pose and the twist applied on the left.
    """
    H, g, _ = _linear_system(pose.apply(scan_points), targets, normals, weights)
    # lstsq gives the minimum-norm step along unobservable directions
    delta = np.linalg.lstsq(H, -g, rcond=1e-12)[0]
    step = Pose(so3_exp(delta[:3]), delta[3:])
    return step.compose(pose), delta


@dataclass
class IcpResult:
    pose: Pose
    final_association: AssociationMatrix
    iterations_used: int
    converged: bool
    mean_residual: float
    weights: np.ndarray = field(repr=False)
    objective_history: list = field(default_factory=list, repr=False)


def solve_icp(
    scan: SemanticPointCloud,
    map_cloud: SemanticPointCloud,
    map_index: SpatialIndex,
    init: Pose,
    config: WeightConfig = WeightConfig(),
    max_iterations: int = 40,
) -> IcpResult:
    """Align ``scan`` to ``map_cloud`` starting from ``init``.

    Each iteration re-associates, recomputes weights for ``config.mode`` and
    takes one Gauss-Newton step. Stops after ``max_iterations`` or when the
    step is below the convergence thresholds. The returned association is
    the one built in the last iteration.

    Raises:
        DegenerateRegistrationError: fewer than 6 matches carry weight.
    """
    if map_cloud.normals is None:
        raise ValueError("map has no normals")
    if max_iterations < 1:
        raise ValueError("max_iterations must be >= 1")
    map_valid = map_cloud.normal_valid
    pose = init
    converged = False
    history = []
    it = 0
    for it in range(1, max_iterations + 1):
        # only the first neighbour drives the update; the full K are built once at the end
        assoc = associate(scan, map_cloud, map_index, pose, 1)
        nn = assoc.indices[:, 0]
        targets = map_cloud.points[nn]
        normals = map_cloud.normals[nn]
        signed = np.einsum("ij,ij->i", assoc.points - targets, normals)
        w = compute_weights(config, assoc, scan, map_cloud, signed)
        w = np.where(map_valid[nn] & (w >= config.min_weight), w, 0.0)
        used = w > 0
        if used.sum() < 6:
            raise DegenerateRegistrationError(f"degenerate registration: {int(used.sum())} weighted matches")
        history.append(float(np.sum(w * signed * signed)))
        last_pose = pose
        pose, delta = gauss_newton_step(pose, scan.points[used], targets[used], normals[used], w[used])
        if np.linalg.norm(delta[3:]) < config.converge_translation and np.linalg.norm(delta[:3]) < config.converge_rotation:
            converged = True
            break
    mean_res = float(np.mean(np.abs(signed[used])))
    if config.k > 1:
        assoc = associate(scan, map_cloud, map_index, last_pose, config.k)
    return IcpResult(pose, assoc, it, converged, mean_res, w, history)
