"""Compare variants on one sequence with as-built deviations.

Slow: about three minutes on one core.
"""

import numpy as np

from bimloc import scenes
from bimloc.evaluation import evaluate
from bimloc.localizer import MapContext, TrackerConfig, run_sequence
from bimloc.mapping import build_semantic_map
from bimloc.simulator import DeviationSpec, SensorModel, build_scene, simulate_sequence, straight_trajectory

model = scenes.corridor(length=20.0)
sm = build_semantic_map(model.mesh, model.boxes(), model.table, density=30, seed=0)
ctx = MapContext(sm.cloud, model.table)
traj = straight_trajectory((0, 0), (20, 0), 0.1, z=1.2)

seed = 1
rng = np.random.default_rng(seed)
walls = [e.id for e in model.elements if e.id.startswith(("wall_L", "wall_R"))]
cases = {
    "clean": DeviationSpec(),
    "dynamic": DeviationSpec(dynamic_fraction=0.05),
    "added columns": DeviationSpec(add=scenes.deviation_columns(model, rng, 2)),
    "removed wall": DeviationSpec(remove=[walls[rng.integers(len(walls))]]),
}
for name, dev in cases.items():
    scans, _ = simulate_sequence(build_scene(model.mesh, dev, model.boxes()), traj, SensorModel(seed=seed))
    row = []
    for v in ("ICP_ORG", "SEM_WC_WRHO"):
        res = run_sequence(scans, ctx, TrackerConfig.for_variant(v), traj[0][1])
        row.append(evaluate(res.trajectory[1:], traj, mode="none").rmse_translation)
    print(f"{name:14s} ICP_ORG {row[0]:.3f} m   SEM_WC_WRHO {row[1]:.3f} m")
