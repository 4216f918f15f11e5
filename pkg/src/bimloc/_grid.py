"""Exact k-nearest-neighbour search over a uniform voxel grid.

Points are bucketed into cubic cells stored in CSR form. A query visits
Chebyshev shells of cells around its own cell and stops once the k-th best
distance is strictly below the distance to the unvisited region, so results
equal a sorted linear scan, ties included (ordered by distance, then index).
"""

from __future__ import annotations

import numba
import numpy as np

MAX_CELLS = 1 << 22
TARGET_PER_CELL = 6.0


def choose_cell(points: np.ndarray) -> float:
    """Cell edge giving roughly ``TARGET_PER_CELL`` points per occupied cell."""
    lo, hi = points.min(axis=0), points.max(axis=0)
    ext = np.maximum(hi - lo, 1e-9)
    n = len(points)
    h = float(np.cbrt(np.prod(ext) * TARGET_PER_CELL / n))
    h = max(h, float(ext.max()) / 4096, 1e-9)
    for _ in range(3):
        occ = len(np.unique(_cell_keys(points, lo, h, _dims(ext, h))))
        per = n / occ
        # occupied cells scale like h**2 on surfaces, h**3 in volumes; use the surface rate
        h *= float(np.clip(np.sqrt(TARGET_PER_CELL / per), 0.5, 2.0))
    while np.prod(_dims(ext, h).astype(float)) > MAX_CELLS:
        h *= 1.25
    return h


def _dims(ext, h):
    return (np.floor(ext / h).astype(np.int64) + 1).clip(1)


def _cell_keys(points, lo, h, dims):
    c = np.floor((points - lo) / h).astype(np.int64)
    c = np.minimum(np.maximum(c, 0), dims - 1)
    return (c[:, 0] * dims[1] + c[:, 1]) * dims[2] + c[:, 2]


def build_grid(points: np.ndarray, h: float | None = None):
    """Return ``(origin, h, dims, cell_start, order)``."""
    h = choose_cell(points) if h is None else float(h)
    lo = points.min(axis=0)
    dims = _dims(np.maximum(points.max(axis=0) - lo, 1e-9), h)
    keys = _cell_keys(points, lo, h, dims)
    order = np.argsort(keys, kind="stable")
    n_cells = int(np.prod(dims))
    start = np.zeros(n_cells + 1, dtype=np.int64)
    np.cumsum(np.bincount(keys, minlength=n_cells), out=start[1:])
    return lo.astype(float), h, dims.astype(np.int64), start, order.astype(np.int64)


@numba.njit(cache=True, inline="always")
def _insert(bd, bi, d, i, k):
    # keep (bd, bi) sorted by (distance, index); caller checked (d, i) beats the last slot
    j = k - 1
    while j > 0 and (bd[j - 1] > d or (bd[j - 1] == d and bi[j - 1] > i)):
        bd[j] = bd[j - 1]
        bi[j] = bi[j - 1]
        j -= 1
    bd[j] = d
    bi[j] = i


@numba.njit(cache=True, inline="always")
def _scan_cell(pts, start, order, origin, h, ix, iy, iz, ny, nz, q, bd, bi, k):
    cell = (ix * ny + iy) * nz + iz
    if start[cell] == start[cell + 1]:
        return
    for s in range(start[cell], start[cell + 1]):
        i = order[s]
        dx = pts[i, 0] - q[0]
        dy = pts[i, 1] - q[1]
        dz = pts[i, 2] - q[2]
        d = np.sqrt(dx * dx + dy * dy + dz * dz)
        if d < bd[k - 1] or (d == bd[k - 1] and i < bi[k - 1]):
            _insert(bd, bi, d, i, k)


@numba.njit(cache=True)
def knn_kernel(pts, origin, h, dims, start, order, queries, k):
    nq = queries.shape[0]
    out_i = np.empty((nq, k), dtype=np.int64)
    out_d = np.empty((nq, k))
    bd = np.empty(k)
    bi = np.empty(k, dtype=np.int64)
    cq = np.empty(3, dtype=np.int64)
    nx, ny, nz = dims[0], dims[1], dims[2]
    for qi in range(nq):
        q = queries[qi]
        for j in range(k):
            bd[j] = np.inf
            bi[j] = np.iinfo(np.int64).max
        r0 = 0
        for a in range(3):
            c = np.int64(np.floor((q[a] - origin[a]) / h))
            cq[a] = c
            # skip shells that cannot touch the grid
            if c < 0 and -c > r0:
                r0 = -c
            elif c >= dims[a] and c - dims[a] + 1 > r0:
                r0 = c - dims[a] + 1
        r = r0
        while True:
            x0, x1 = max(cq[0] - r, 0), min(cq[0] + r, nx - 1)
            y0, y1 = max(cq[1] - r, 0), min(cq[1] + r, ny - 1)
            z0, z1 = max(cq[2] - r, 0), min(cq[2] + r, nz - 1)
            for ix in range(x0, x1 + 1):
                ex = ix == cq[0] - r or ix == cq[0] + r
                for iy in range(y0, y1 + 1):
                    ey = ex or iy == cq[1] - r or iy == cq[1] + r
                    if ey:
                        for iz in range(z0, z1 + 1):
                            _scan_cell(pts, start, order, origin, h, ix, iy, iz, ny, nz, q, bd, bi, k)
                    else:
                        iz = cq[2] - r
                        if iz >= 0 and iz < nz:
                            _scan_cell(pts, start, order, origin, h, ix, iy, iz, ny, nz, q, bd, bi, k)
                        iz = cq[2] + r
                        if r > 0 and iz >= 0 and iz < nz:
                            _scan_cell(pts, start, order, origin, h, ix, iy, iz, ny, nz, q, bd, bi, k)
            covers = cq[0] - r <= 0 and cq[0] + r >= nx - 1 and cq[1] - r <= 0 and cq[1] + r >= ny - 1 and cq[2] - r <= 0 and cq[2] + r >= nz - 1
            if covers:
                break
            # distance from q to the outside of the visited block
            bound = np.inf
            for a in range(3):
                lo = origin[a] + (cq[a] - r) * h
                hi = origin[a] + (cq[a] + r + 1) * h
                m = min(q[a] - lo, hi - q[a])
                if m < bound:
                    bound = m
            # margin absorbs rounding in the cell assignment
            if bd[k - 1] < bound - 1e-9 * (1.0 + h):
                break
            r += 1
        for j in range(k):
            out_i[qi, j] = bi[j]
            out_d[qi, j] = bd[j]
    return out_i, out_d
