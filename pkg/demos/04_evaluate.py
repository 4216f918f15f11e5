"""Score an estimate against ground truth: RMSE, error curve, z drift."""

import math

import numpy as np

from bimloc.evaluation import evaluate
from bimloc.geometry import Pose

rng = np.random.default_rng(0)
gt = [(0.1 * i, Pose.from_xyz_yaw(0.1 * i, math.sin(0.05 * i), 1.2, 0.0)) for i in range(200)]

# an estimate with noise, a slow climb in z, and a rigid planar offset
est = []
for t, p in gt:
    x, y, z = p.translation + [*rng.normal(scale=0.02, size=2), 0.0005 * t * 10]
    est.append((t, Pose.from_xyz_yaw(x, y, z, rng.normal(scale=0.005))))
shift = Pose.from_xyz_yaw(2.0, -1.0, 0.0, 0.2)
est = [(t, shift.compose(p)) for t, p in est]

raw = evaluate(est, gt, mode="none")
aligned = evaluate(est, gt, mode="se2")
print(f"no alignment : {raw.rmse_translation:.3f} m, {raw.rmse_rotation:.2f} deg")
print(f"se2 aligned  : {aligned.rmse_translation:.3f} m, {aligned.rmse_rotation:.2f} deg")
print(f"z drift      : {aligned.delta_z:.3f} m")
print("error quartiles:", np.round(aligned.quartiles, 4))
