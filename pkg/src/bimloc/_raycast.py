"""BVH construction and nearest-hit ray casting over a triangle soup."""

from __future__ import annotations

import numba
import numpy as np

LEAF_SIZE = 4
BARY_EPS = 1e-9
T_MIN = 1e-9


def build_bvh(corners: np.ndarray):
    """Median-split BVH over ``(T, 3, 3)`` triangle corners.

    Returns ``(node_lo, node_hi, left, right, start, count, order)``; a node is a
    leaf when ``count > 0`` and covers ``order[start:start + count]``.
    """
    n = len(corners)
    tri_lo = corners.min(axis=1)
    tri_hi = corners.max(axis=1)
    cent = corners.mean(axis=1)
    order = np.arange(n)
    cap = max(1, 2 * n)
    node_lo = np.zeros((cap, 3))
    node_hi = np.zeros((cap, 3))
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    start = np.zeros(cap, dtype=np.int64)
    count = np.zeros(cap, dtype=np.int64)
    n_nodes = 1
    stack = [(0, 0, n)]
    while stack:
        node, s, e = stack.pop()
        ids = order[s:e]
        if len(ids):
            node_lo[node] = tri_lo[ids].min(axis=0)
            node_hi[node] = tri_hi[ids].max(axis=0)
        if e - s <= LEAF_SIZE:
            start[node], count[node] = s, e - s
            continue
        c = cent[ids]
        axis = int(np.argmax(c.max(axis=0) - c.min(axis=0)))
        srt = ids[np.argsort(c[:, axis], kind="stable")]
        order[s:e] = srt
        mid = s + (e - s) // 2
        l, r = n_nodes, n_nodes + 1
        n_nodes += 2
        left[node], right[node] = l, r
        stack.append((r, mid, e))
        stack.append((l, s, mid))
    return node_lo[:n_nodes], node_hi[:n_nodes], left[:n_nodes], right[:n_nodes], start[:n_nodes], count[:n_nodes], order


@numba.njit(cache=True)
def _ray_box(o, inv, dzero, lo, hi, tmax):
    t0 = 0.0
    t1 = tmax
    for a in range(3):
        if dzero[a]:
            if o[a] < lo[a] or o[a] > hi[a]:
                return False
        else:
            ta = (lo[a] - o[a]) * inv[a]
            tb = (hi[a] - o[a]) * inv[a]
            if ta > tb:
                ta, tb = tb, ta
            if ta > t0:
                t0 = ta
            if tb < t1:
                t1 = tb
            if t0 > t1:
                return False
    return True


@numba.njit(cache=True)
def cast_rays_kernel(origin, dirs, max_range, v0, e1, e2, node_lo, node_hi, left, right, start, count):
    n_rays = dirs.shape[0]
    ranges = np.full(n_rays, np.inf)
    hit_tri = np.full(n_rays, -1, dtype=np.int64)
    if v0.shape[0] == 0:
        return ranges, hit_tri
    stack = np.empty(128, dtype=np.int64)
    inv = np.empty(3)
    dzero = np.empty(3, dtype=np.bool_)
    for r in range(n_rays):
        d = dirs[r]
        for a in range(3):
            dzero[a] = d[a] == 0.0
            inv[a] = 1.0 / d[a] if not dzero[a] else 0.0
        best = max_range
        best_tri = -1
        sp = 0
        stack[sp] = 0
        sp += 1
        while sp > 0:
            sp -= 1
            node = stack[sp]
            if not _ray_box(origin, inv, dzero, node_lo[node], node_hi[node], best):
                continue
            if count[node] > 0:
                for j in range(start[node], start[node] + count[node]):
                    # Moller-Trumbore
                    px = d[1] * e2[j, 2] - d[2] * e2[j, 1]
                    py = d[2] * e2[j, 0] - d[0] * e2[j, 2]
                    pz = d[0] * e2[j, 1] - d[1] * e2[j, 0]
                    det = e1[j, 0] * px + e1[j, 1] * py + e1[j, 2] * pz
                    if abs(det) < 1e-14:
                        continue
                    inv_det = 1.0 / det
                    tx = origin[0] - v0[j, 0]
                    ty = origin[1] - v0[j, 1]
                    tz = origin[2] - v0[j, 2]
                    u = (tx * px + ty * py + tz * pz) * inv_det
                    if u < -BARY_EPS or u > 1.0 + BARY_EPS:
                        continue
                    qx = ty * e1[j, 2] - tz * e1[j, 1]
                    qy = tz * e1[j, 0] - tx * e1[j, 2]
                    qz = tx * e1[j, 1] - ty * e1[j, 0]
                    v = (d[0] * qx + d[1] * qy + d[2] * qz) * inv_det
                    if v < -BARY_EPS or u + v > 1.0 + BARY_EPS:
                        continue
                    t = (e2[j, 0] * qx + e2[j, 1] * qy + e2[j, 2] * qz) * inv_det
                    if t > T_MIN and t < best:
                        best = t
                        best_tri = j
            else:
                stack[sp] = left[node]
                sp += 1
                stack[sp] = right[node]
                sp += 1
        if best_tri >= 0:
            ranges[r] = best
            hit_tri[r] = best_tri
    return ranges, hit_tri
