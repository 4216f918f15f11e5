"""Track a simulated sequence against the map with the semantic localizer."""

import numpy as np

from bimloc import scenes
from bimloc.localizer import MapContext, TrackerConfig, run_sequence
from bimloc.mapping import build_semantic_map
from bimloc.simulator import SensorModel, build_scene, simulate_sequence, straight_trajectory

model = scenes.corridor(length=10.0)
sm = build_semantic_map(model.mesh, model.boxes(), model.table, density=30, seed=0)
ctx = MapContext(sm.cloud, model.table)

traj = straight_trajectory((0, 0), (10, 0), 0.1, z=1.2)
scans, _ = simulate_sequence(build_scene(model.mesh), traj, SensorModel(seed=0))

res = run_sequence(scans, ctx, TrackerConfig.for_variant("SEM_WC_WRHO"), traj[0][1])
d = res.diagnostics[len(scans) // 2]
print(f"points per stage: raw {d.n_raw}, filtered {d.n_filtered}, labelled {d.n_labeled}, selected {d.n_selected}")
print("iterations coarse/fine:", d.coarse_iterations, d.fine_iterations)
print(f"mean step time: {np.mean([x.time_ms for x in res.diagnostics]):.0f} ms, failures: {res.failures}")

err = np.array([np.linalg.norm(e.translation[:2] - g.translation[:2]) for (_, e), (_, g) in zip(res.trajectory[1:], traj)])
print(f"planar error: rms {np.sqrt(np.mean(err**2)):.3f} m, median {np.median(err):.3f} m, worst {err.max():.3f} m")
