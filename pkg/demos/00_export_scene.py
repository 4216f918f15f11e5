"""Write a corridor model and a straight trajectory to disk for the command-line tools.

Usage: python demos/00_export_scene.py OUT_DIR
"""

import sys
from pathlib import Path

from bimloc import scenes
from bimloc.io import write_box_manifest, write_obj, write_tum
from bimloc.simulator import straight_trajectory

out = Path(sys.argv[1] if len(sys.argv) > 1 else "corridor_demo")
out.mkdir(parents=True, exist_ok=True)
model = scenes.corridor(length=10.0)
write_obj(out / "corridor.obj", model.mesh)
write_box_manifest(out / "corridor.json", model.boxes(), model.table)
write_tum(out / "traj.tum", straight_trajectory((0, 0), (10, 0), 0.1, z=1.2))
print("wrote", *sorted(p.name for p in out.iterdir()))
