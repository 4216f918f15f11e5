"""Drive a virtual 16-beam LiDAR down the corridor, with and without deviations."""

import numpy as np

from bimloc import scenes
from bimloc.simulator import DeviationSpec, SensorModel, build_scene, cast_scan, straight_trajectory

model = scenes.corridor(length=20.0)
traj = straight_trajectory((0, 0), (20, 0), 0.5, z=1.2)
print("poses:", len(traj))

sensor = SensorModel(range_noise_sigma=0.02, seed=0)
clean = build_scene(model.mesh)
scan = cast_scan(clean, traj[10][1], sensor, scan_index=10)
r = np.linalg.norm(scan.points, axis=1)
print(f"one scan: {len(scan)} returns, range {r.min():.2f} .. {r.max():.2f} m")

# what was built differs from the model: two extra columns, one wall gone, some people walking by
rng = np.random.default_rng(0)
dev = DeviationSpec(add=scenes.deviation_columns(model, rng, 2), remove=["wall_L0"], dynamic_fraction=0.05)
changed = build_scene(model.mesh, dev, model.boxes())
print("triangles before/after:", len(clean), len(changed))
scan2 = cast_scan(changed, traj[10][1], sensor, scan_index=10)
r2 = np.linalg.norm(scan2.points, axis=1)
print(f"returns: {len(scan)} -> {len(scan2)}, median range {np.median(r):.2f} -> {np.median(r2):.2f} m")
