"""Semantic localization of a 3D range sensor on building-model point maps."""

from .geometry import (
    UNLABELED,
    Pose,
    SemanticPointCloud,
    SpatialIndex,
    build_index,
    estimate_normals,
    knn,
    project_se2,
    transform,
)
from .mapping import (
    CategoryTable,
    LabeledBox,
    TriangleMesh,
    build_semantic_map,
    label_map,
    point_in_box,
    sample_mesh,
)
from .registration import WeightConfig, WeightMode, associate, solve_icp
from .localizer import MapContext, TrackerConfig, Variant, datafilter, run_sequence, track_step
from .evaluation import compute_rmse, compute_z_drift, evaluate

__version__ = "0.1.0"
