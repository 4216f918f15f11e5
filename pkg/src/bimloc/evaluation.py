"""Trajectory alignment and error metrics evaluated in the plane (x, y, yaw)."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .geometry import Pose, project_se2, rot_z


@dataclass
class PosePair:
    t_est: float
    t_gt: float
    est: Pose
    gt: Pose


@dataclass
class Association:
    pairs: list
    unmatched: int


def _check_increasing(traj, name):
    ts = [t for t, _ in traj]
    if any(b <= a for a, b in zip(ts, ts[1:])):
        raise ValueError(f"{name} timestamps are not strictly increasing")


def associate_by_timestamp(est, gt, max_dt: float = 0.05) -> Association:
    """Pair each estimated pose with the ground-truth pose nearest in time, within ``max_dt``."""
    if not est or not gt:
        raise ValueError("empty trajectory")
    _check_increasing(est, "estimate")
    _check_increasing(gt, "ground truth")
    gt_t = np.array([t for t, _ in gt])
    pairs = []
    for t, pose in est:
        j = int(np.searchsorted(gt_t, t))
        cands = [c for c in (j - 1, j) if 0 <= c < len(gt_t)]
        best = min(cands, key=lambda c: (abs(gt_t[c] - t), c))
        if abs(gt_t[best] - t) <= max_dt + 1e-12:
            pairs.append(PosePair(t, float(gt_t[best]), pose, gt[best][1]))
    if not pairs:
        raise ValueError("no temporal overlap")
    return Association(pairs, len(est) - len(pairs))


def _planar(pairs):
    e = np.array([p.est.translation[:2] for p in pairs])
    g = np.array([p.gt.translation[:2] for p in pairs])
    return e, g


def align_se2(pairs: Sequence[PosePair]) -> Pose:
    """Least-squares rotation about z plus xy translation taking estimate positions onto ground truth."""
    if len(pairs) < 2:
        raise ValueError("alignment needs at least 2 pairs")
    e, g = _planar(pairs)
    ec, gc = e - e.mean(axis=0), g - g.mean(axis=0)
    if np.max(np.abs(ec)) < 1e-12 or np.max(np.abs(gc)) < 1e-12:
        raise ValueError("degenerate alignment: positions coincide")
    s = np.sum(ec[:, 0] * gc[:, 1] - ec[:, 1] * gc[:, 0])
    c = np.sum(ec[:, 0] * gc[:, 0] + ec[:, 1] * gc[:, 1])
    theta = math.atan2(s, c)
    R = rot_z(theta)
    t = g.mean(axis=0) - R[:2, :2] @ e.mean(axis=0)
    return Pose(R, [t[0], t[1], 0.0])


def apply_alignment(pairs: Sequence[PosePair], align: Pose) -> list[PosePair]:
    return [PosePair(p.t_est, p.t_gt, align.compose(p.est), p.gt) for p in pairs]


def _wrap_deg(a):
    a = np.mod(np.asarray(a, dtype=float) + 180.0, 360.0) - 180.0
    return np.where(a == -180.0, 180.0, a)


def pose_errors(pairs: Sequence[PosePair]) -> tuple[np.ndarray, np.ndarray]:
    """Planar translation error (m) and wrapped yaw error (deg) per pair."""
    dt = np.empty(len(pairs))
    dr = np.empty(len(pairs))
    for i, p in enumerate(pairs):
        xe, ye, yaw_e = project_se2(p.est)
        xg, yg, yaw_g = project_se2(p.gt)
        dt[i] = math.hypot(xe - xg, ye - yg)
        dr[i] = float(_wrap_deg(math.degrees(yaw_e - yaw_g)))
    return dt, dr


def compute_rmse(pairs: Sequence[PosePair]) -> tuple[float, float]:
    """``(translation RMSE in m, yaw RMSE in degrees)``."""
    if not pairs:
        raise ValueError("no pairs")
    dt, dr = pose_errors(pairs)
    return float(np.sqrt(np.mean(dt**2))), float(np.sqrt(np.mean(dr**2)))


def compute_z_drift(traj, window: int = 50) -> float:
    """Mean height of the last ``window`` poses minus that of the first ``window``."""
    if window < 1:
        raise ValueError("window must be >= 1")
    if len(traj) < 2 * window:
        raise ValueError(f"trajectory has {len(traj)} poses, needs at least {2 * window}")
    z = np.array([p.translation[2] for _, p in traj])
    return float(z[-window:].mean() - z[:window].mean())


def error_curves(pairs: Sequence[PosePair]) -> np.ndarray:
    """Rows ``(distance, dx, dy, dyaw_deg)``; distance is cumulative planar ground-truth path length."""
    if len(pairs) < 2:
        raise ValueError("error curves need at least 2 pairs")
    rows = np.empty((len(pairs), 4))
    g = np.array([p.gt.translation[:2] for p in pairs])
    seg = np.hypot(*np.diff(g, axis=0).T)
    rows[:, 0] = np.concatenate([[0.0], np.cumsum(seg)])
    for i, p in enumerate(pairs):
        xe, ye, yaw_e = project_se2(p.est)
        xg, yg, yaw_g = project_se2(p.gt)
        rows[i, 1:] = xe - xg, ye - yg, float(_wrap_deg(math.degrees(yaw_e - yaw_g)))
    return rows


def quartiles(values) -> tuple[float, float, float, float, float]:
    v = np.asarray(values, dtype=float)
    q = np.percentile(v, [0, 25, 50, 75, 100])
    return tuple(float(x) for x in q)


@dataclass
class ErrorReport:
    rmse_translation: float
    rmse_rotation: float
    per_pose_errors: list = field(repr=False)
    delta_z: Optional[float]
    quartiles: tuple
    n_pairs: int
    n_unmatched: int
    mode: str
    alignment: Optional[list] = None

    def to_json(self, path, extra: Optional[dict] = None) -> None:
        d = asdict(self)
        d.update(extra or {})
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(d, fh, indent=1)

    def to_csv(self, path, header: Optional[str] = None) -> None:
        """Per-pose rows; ``header`` is written first as a ``#`` comment line."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            if header:
                fh.write(f"# {header}\n")
            w = csv.writer(fh)
            w.writerow(["t", "distance_m", "dx_m", "dy_m", "dyaw_deg", "dt_m", "dr_deg"])
            w.writerows(self.per_pose_errors)


def evaluate(est, gt, mode: str = "se2", max_dt: float = 0.05, z_window: int = 50) -> ErrorReport:
    """Pair, optionally align, and compute the full error report.

    ``mode`` is ``"se2"`` (planar alignment) or ``"none"`` (frames already coincide).
    ``delta_z`` is measured on the estimate and is ``None`` when it is too short.
    """
    if mode not in ("se2", "none"):
        raise ValueError(f"unknown alignment mode {mode!r}")
    assoc = associate_by_timestamp(est, gt, max_dt)
    pairs = assoc.pairs
    align = None
    if mode == "se2":
        A = align_se2(pairs)
        pairs = apply_alignment(pairs, A)
        align = [float(v) for v in project_se2(A)]
    rmse_t, rmse_r = compute_rmse(pairs)
    dt, dr = pose_errors(pairs)
    curves = error_curves(pairs) if len(pairs) >= 2 else np.zeros((len(pairs), 4))
    rows = [[p.t_est, *map(float, c), float(a), float(b)] for p, c, a, b in zip(pairs, curves, dt, dr)]
    try:
        dz = compute_z_drift(est, z_window)
    except ValueError:
        dz = None
    return ErrorReport(rmse_t, rmse_r, rows, dz, quartiles(dt), len(pairs), assoc.unmatched, mode, align)
