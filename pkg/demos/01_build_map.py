"""Turn a building model into a labelled point-cloud map."""

import numpy as np

from bimloc import scenes
from bimloc.mapping import build_semantic_map, category_histogram

# a corridor with a row of columns on each side
model = scenes.corridor(length=20.0)
print("elements:", len(model.elements), " triangles:", len(model.mesh.triangles))
print("categories:", model.table.names)

# sample 30 points per square metre, then label every point from the boxes
sm = build_semantic_map(model.mesh, model.boxes(), model.table, density=30, seed=0)
print("map points:", len(sm.cloud))
for name, n in category_histogram(sm.cloud, model.table).items():
    print(f"  {name:10s} {n:6d}")

# normals are PCA estimates over 10 neighbours, oriented away from the centroid
n = sm.cloud.normals
print("unit normals:", np.allclose(np.linalg.norm(n, axis=1), 1.0))
