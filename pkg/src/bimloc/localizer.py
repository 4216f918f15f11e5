"""Coarse-to-fine semantic pose tracking on a labeled map."""

from __future__ import annotations

import enum
import logging
import time
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

import numpy as np

from .geometry import UNLABELED, Pose, SemanticPointCloud, SpatialIndex, estimate_normals
from .mapping import CategoryTable
from .registration import DegenerateRegistrationError, WeightConfig, WeightMode, solve_icp

log = logging.getLogger(__name__)

DEFAULT_WHITELIST = ("Floors", "Walls", "Columns")


class EmptySelectionError(ValueError):
    pass


class Variant(str, enum.Enum):
    ICP_ORG = "ICP_ORG"
    ICP_HUBER = "ICP_HUBER"
    SEM_ORG = "SEM_ORG"
    SEM_WC = "SEM_WC"
    SEM_WRHO = "SEM_WRHO"
    SEM_WC_WRHO = "SEM_WC_WRHO"

    @property
    def semantic(self) -> bool:
        return self.value.startswith("SEM_")


_FINE_MODE = {
    Variant.SEM_ORG: WeightMode.ORG,
    Variant.SEM_WC: WeightMode.SEMANTIC,
    Variant.SEM_WRHO: WeightMode.HUBER,
    Variant.SEM_WC_WRHO: WeightMode.SEMANTIC_HUBER,
}


@dataclass(frozen=True)
class PrefilterConfig:
    target_count: int = 2100
    voxel: float = 0.1
    seed: int = 0


@dataclass(frozen=True)
class TrackerConfig:
    variant: Variant = Variant.SEM_WC_WRHO
    selection_whitelist: tuple = DEFAULT_WHITELIST
    coarse_max_it: int = 20
    fine_max_it: int = 20
    weight: WeightConfig = field(default_factory=WeightConfig)
    prefilter: PrefilterConfig = field(default_factory=PrefilterConfig)
    scan_normal_k: int = 10

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        object.__setattr__(self, "selection_whitelist", tuple(self.selection_whitelist))
        if self.coarse_max_it < 1:
            raise ValueError("coarse_max_it must be >= 1")
        if self.variant.semantic and self.fine_max_it < 1:
            raise ValueError("semantic variants need fine_max_it >= 1")

    @classmethod
    def for_variant(cls, variant, budget: int = 40, **kw) -> "TrackerConfig":
        """Config with the iteration budget split 20/20 (semantic) or 40/0 (ICP only)."""
        variant = Variant(variant)
        if variant.semantic:
            coarse, fine = budget // 2, budget - budget // 2
        else:
            coarse, fine = budget, 0
        return cls(variant=variant, coarse_max_it=coarse, fine_max_it=fine, **kw)

    @property
    def coarse_mode(self) -> WeightMode:
        return WeightMode.HUBER if self.variant is Variant.ICP_HUBER else WeightMode.ORG

    @property
    def fine_mode(self) -> Optional[WeightMode]:
        return _FINE_MODE.get(self.variant)


@dataclass
class TrackState:
    last_pose: Pose
    timestamp: float
    history: list = field(default_factory=list)


@dataclass
class StepDiagnostics:
    timestamp: float
    n_raw: int = 0
    n_filtered: int = 0
    n_labeled: int = 0
    n_selected: int = 0
    coarse_iterations: int = 0
    fine_iterations: int = 0
    coarse_converged: bool = False
    fine_converged: bool = False
    failed: bool = False
    failure: str = ""
    time_ms: float = 0.0
    stage_ms: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        d = dict(self.__dict__)
        d["stage_ms"] = {k: round(v, 3) for k, v in self.stage_ms.items()}
        d["time_ms"] = round(self.time_ms, 3)
        return d


@dataclass
class MapContext:
    """A map prepared for tracking: cloud, its index and the category table."""

    cloud: SemanticPointCloud
    table: CategoryTable
    index: SpatialIndex = None

    def __post_init__(self):
        if self.cloud.normals is None:
            raise ValueError("map has no normals")
        if self.index is None:
            self.index = SpatialIndex(self.cloud.points)

    def whitelist_ids(self, names: Iterable[str]) -> np.ndarray:
        ids = []
        for name in names:
            if name in self.table:
                ids.append(self.table.id(name))
            else:
                log.warning("whitelisted category %r absent from map", name)
        return np.array(ids, dtype=np.uint16)


def datafilter(scan: SemanticPointCloud, config: PrefilterConfig = PrefilterConfig()) -> SemanticPointCloud:
    """Voxel-grid thinning then seeded random downsampling to at most ``target_count``.

    The voxel step keeps, per occupied voxel, the point nearest the mean of
    that voxel's points. Survivors keep their original order.
    """
    if len(scan) == 0:
        raise ValueError("empty scan")
    pts = scan.points
    if config.voxel > 0:
        cells = np.floor(pts / config.voxel).astype(np.int64)
        cells -= cells.min(axis=0)
        span = cells.max(axis=0) + 1
        keys = (cells[:, 0] * span[1] + cells[:, 1]) * span[2] + cells[:, 2]
        _, inv, counts = np.unique(keys, return_inverse=True, return_counts=True)
        inv = inv.reshape(-1)
        means = np.stack([np.bincount(inv, weights=pts[:, a], minlength=len(counts)) for a in range(3)], axis=1)
        means /= counts[:, None]
        d = np.linalg.norm(pts - means[inv], axis=1)
        # lexsort is stable, so equal distances keep the lower index first
        order = np.lexsort((d, inv))
        first = np.ones(len(order), dtype=bool)
        first[1:] = inv[order[1:]] != inv[order[:-1]]
        keep = np.sort(order[first])
    else:
        keep = np.arange(len(pts))
    if len(keep) > config.target_count:
        rng = np.random.default_rng(config.seed)
        keep = np.sort(rng.choice(keep, size=config.target_count, replace=False))
    return scan.select(keep)


def label_scan(scan: SemanticPointCloud, assoc, map_cloud: SemanticPointCloud) -> SemanticPointCloud:
    """Label scan points whose K matched map points all share one category."""
    if map_cloud.labels is None:
        raise ValueError("map is unlabeled")
    nbr = map_cloud.labels[assoc.indices]
    first = nbr[:, 0]
    consistent = np.all(nbr == first[:, None], axis=1) & (first != UNLABELED)
    return scan.with_labels(np.where(consistent, first, UNLABELED).astype(np.uint16))


def select_categories(scan: SemanticPointCloud, whitelist) -> SemanticPointCloud:
    """Keep labeled points whose category id is in ``whitelist``."""
    if scan.labels is None:
        raise ValueError("scan is unlabeled")
    allowed = np.setdiff1d(np.asarray(list(whitelist), dtype=np.int64), [UNLABELED])
    mask = np.isin(scan.labels, allowed)
    if not mask.any():
        raise EmptySelectionError("selection produced empty scan")
    return scan.select(mask)


def init_tracker(initial_pose: Pose, t0: float) -> TrackState:
    return TrackState(initial_pose, float(t0), [(float(t0), initial_pose)])


def track_step(state: TrackState, scan: SemanticPointCloud, map_ctx: MapContext, config: TrackerConfig):
    """Estimate the pose of one scan, initialised from the previous pose.

    Coarse ICP with the baseline weights, then (semantic variants) label by
    neighbour consistency, keep whitelisted categories and refine with the
    variant's weights. On a degenerate fine stage or an empty selection the
    coarse pose is kept and the step is flagged as failed. Appends to
    ``state.history`` and returns ``(pose, diagnostics)``.
    """
    if scan.timestamp is None:
        raise ValueError("scan has no timestamp")
    ts = float(scan.timestamp)
    if state.history and ts <= state.history[-1][0]:
        raise ValueError(f"scan timestamp {ts} does not follow {state.history[-1][0]}")
    diag = StepDiagnostics(timestamp=ts, n_raw=len(scan))
    t_start = time.perf_counter()
    tick = t_start

    def lap(name):
        nonlocal tick
        now = time.perf_counter()
        diag.stage_ms[name] = (now - tick) * 1e3
        tick = now

    pose = state.last_pose
    try:
        if len(scan) == 0:
            raise EmptySelectionError("empty scan")
        filtered = datafilter(scan, config.prefilter)
        if config.coarse_mode is WeightMode.ORG and len(filtered) >= config.scan_normal_k:
            filtered = estimate_normals(filtered, config.scan_normal_k)
        diag.n_filtered = len(filtered)
        lap("filter")

        coarse_cfg = replace(config.weight, mode=config.coarse_mode)
        coarse = solve_icp(filtered, map_ctx.cloud, map_ctx.index, pose, coarse_cfg, config.coarse_max_it)
        pose = coarse.pose
        diag.coarse_iterations, diag.coarse_converged = coarse.iterations_used, coarse.converged
        lap("coarse")

        if config.fine_mode is not None:
            labeled = label_scan(filtered, coarse.final_association, map_ctx.cloud)
            diag.n_labeled = int(np.count_nonzero(labeled.labels))
            selected = select_categories(labeled, map_ctx.whitelist_ids(config.selection_whitelist))
            diag.n_selected = len(selected)
            lap("select")
            fine_cfg = replace(config.weight, mode=config.fine_mode)
            fine = solve_icp(selected, map_ctx.cloud, map_ctx.index, pose, fine_cfg, config.fine_max_it)
            pose = fine.pose
            diag.fine_iterations, diag.fine_converged = fine.iterations_used, fine.converged
            lap("fine")
    except (DegenerateRegistrationError, EmptySelectionError) as exc:
        diag.failed, diag.failure = True, str(exc)
        log.warning("tracking step at t=%.3f failed: %s", ts, exc)

    diag.time_ms = (time.perf_counter() - t_start) * 1e3
    state.last_pose, state.timestamp = pose, ts
    state.history.append((ts, pose))
    return pose, diag


@dataclass
class SequenceResult:
    trajectory: list
    diagnostics: list

    @property
    def failures(self) -> int:
        return sum(d.failed for d in self.diagnostics)


def run_sequence(
    scans: Sequence[SemanticPointCloud],
    map_ctx: MapContext,
    config: TrackerConfig,
    initial_pose: Pose,
    t0: Optional[float] = None,
) -> SequenceResult:
    """Track every scan in order. The trajectory starts with ``(t0, initial_pose)``.

    ``t0`` defaults to one median scan period before the first scan.
    """
    stamps = [s.timestamp for s in scans]
    if any(t is None for t in stamps):
        raise ValueError("every scan needs a timestamp")
    if any(b <= a for a, b in zip(stamps, stamps[1:])):
        raise ValueError("scan timestamps are not strictly increasing")
    if config.variant.semantic and map_ctx.cloud.labels is None:
        raise ValueError(f"variant {config.variant.value} needs a labeled map")
    if t0 is None:
        period = float(np.median(np.diff(stamps))) if len(stamps) > 1 else 0.1
        t0 = (stamps[0] - period) if stamps else 0.0
    state = init_tracker(initial_pose, t0)
    diags = []
    for scan in scans:
        _, d = track_step(state, scan, map_ctx, config)
        diags.append(d)
    return SequenceResult(list(state.history), diags)
