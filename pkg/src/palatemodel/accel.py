"""Hot numeric kernels with two interchangeable backends.

Every kernel exists twice: a numba ``@njit`` version and a vectorized
pure-numpy version. The active backend is chosen once at import time:
numba is used when importable unless the environment variable
``PALATEMODEL_NUMBA`` is set to ``0``. Both backends implement identical
semantics (including lowest-index tie breaking), so results are
interchangeable; ``benchmarks/bench_kernels.py`` compares their speed.
"""

import os

import numpy as np

_ENV_FLAG = os.environ.get("PALATEMODEL_NUMBA", "1")

try:
    from numba import njit, prange

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAS_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        if args and callable(args[0]):
            return args[0]
        return wrap

    prange = range

USE_NUMBA = HAS_NUMBA and _ENV_FLAG != "0"


# ---------------------------------------------------------------------------
# closest point on a triangle soup (Ericson's region test, scalar form)
# ---------------------------------------------------------------------------


@njit(cache=True)
def _closest_on_triangle(ax, ay, az, bx, by, bz, cx, cy, cz, px, py, pz):
    # returns (qx, qy, qz, squared distance) for one triangle / one point
    abx, aby, abz = bx - ax, by - ay, bz - az
    acx, acy, acz = cx - ax, cy - ay, cz - az
    apx, apy, apz = px - ax, py - ay, pz - az

    d1 = abx * apx + aby * apy + abz * apz
    d2 = acx * apx + acy * apy + acz * apz
    if d1 <= 0.0 and d2 <= 0.0:
        dx, dy, dz = px - ax, py - ay, pz - az
        return ax, ay, az, dx * dx + dy * dy + dz * dz

    bpx, bpy, bpz = px - bx, py - by, pz - bz
    d3 = abx * bpx + aby * bpy + abz * bpz
    d4 = acx * bpx + acy * bpy + acz * bpz
    if d3 >= 0.0 and d4 <= d3:
        dx, dy, dz = px - bx, py - by, pz - bz
        return bx, by, bz, dx * dx + dy * dy + dz * dz

    vc = d1 * d4 - d3 * d2
    if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
        v = d1 / (d1 - d3)
        qx, qy, qz = ax + v * abx, ay + v * aby, az + v * abz
        dx, dy, dz = px - qx, py - qy, pz - qz
        return qx, qy, qz, dx * dx + dy * dy + dz * dz

    cpx, cpy, cpz = px - cx, py - cy, pz - cz
    d5 = abx * cpx + aby * cpy + abz * cpz
    d6 = acx * cpx + acy * cpy + acz * cpz
    if d6 >= 0.0 and d5 <= d6:
        dx, dy, dz = px - cx, py - cy, pz - cz
        return cx, cy, cz, dx * dx + dy * dy + dz * dz

    vb = d5 * d2 - d1 * d6
    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
        w = d2 / (d2 - d6)
        qx, qy, qz = ax + w * acx, ay + w * acy, az + w * acz
        dx, dy, dz = px - qx, py - qy, pz - qz
        return qx, qy, qz, dx * dx + dy * dy + dz * dz

    va = d3 * d6 - d5 * d4
    if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        qx = bx + w * (cx - bx)
        qy = by + w * (cy - by)
        qz = bz + w * (cz - bz)
        dx, dy, dz = px - qx, py - qy, pz - qz
        return qx, qy, qz, dx * dx + dy * dy + dz * dz

    denom = 1.0 / (va + vb + vc)
    v = vb * denom
    w = vc * denom
    qx = ax + abx * v + acx * w
    qy = ay + aby * v + acy * w
    qz = az + abz * v + acz * w
    dx, dy, dz = px - qx, py - qy, pz - qz
    return qx, qy, qz, dx * dx + dy * dy + dz * dz


@njit(cache=True, parallel=True)
def _closest_points_numba(tri, queries):
    nq = queries.shape[0]
    nt = tri.shape[0]
    points = np.empty((nq, 3), dtype=np.float64)
    sq = np.empty(nq, dtype=np.float64)
    tri_idx = np.empty(nq, dtype=np.int64)
    for i in prange(nq):
        px, py, pz = queries[i, 0], queries[i, 1], queries[i, 2]
        best = np.inf
        bx = by = bz = 0.0
        bt = -1
        for t in range(nt):
            qx, qy, qz, d2 = _closest_on_triangle(
                tri[t, 0, 0], tri[t, 0, 1], tri[t, 0, 2],
                tri[t, 1, 0], tri[t, 1, 1], tri[t, 1, 2],
                tri[t, 2, 0], tri[t, 2, 1], tri[t, 2, 2],
                px, py, pz,
            )
            if d2 < best:
                best = d2
                bx, by, bz = qx, qy, qz
                bt = t
        points[i, 0], points[i, 1], points[i, 2] = bx, by, bz
        sq[i] = best
        tri_idx[i] = bt
    return points, sq, tri_idx


def _closest_pairs_numpy(a, b, c, p):
    """Closest point on triangle i to point i, vectorized over pairs."""
    ab = b - a
    ac = c - a
    ap = p - a

    d1 = (ab * ap).sum(axis=1)
    d2 = (ac * ap).sum(axis=1)
    bp = p - b
    d3 = (ab * bp).sum(axis=1)
    d4 = (ac * bp).sum(axis=1)
    cp = p - c
    d5 = (ab * cp).sum(axis=1)
    d6 = (ac * cp).sum(axis=1)

    vc = d1 * d4 - d3 * d2
    vb = d5 * d2 - d1 * d6
    va = d3 * d6 - d5 * d4

    out = np.empty_like(p)
    remain = np.ones(len(p), dtype=bool)

    is_a = (d1 <= 0.0) & (d2 <= 0.0)
    out[is_a] = a[is_a]
    remain &= ~is_a

    is_b = (d3 >= 0.0) & (d4 <= d3) & remain
    out[is_b] = b[is_b]
    remain &= ~is_b

    is_ab = (vc <= 0.0) & (d1 >= 0.0) & (d3 <= 0.0) & remain
    if is_ab.any():
        v = (d1[is_ab] / (d1[is_ab] - d3[is_ab]))[:, None]
        out[is_ab] = a[is_ab] + v * ab[is_ab]
    remain &= ~is_ab

    is_c = (d6 >= 0.0) & (d5 <= d6) & remain
    out[is_c] = c[is_c]
    remain &= ~is_c

    is_ac = (vb <= 0.0) & (d2 >= 0.0) & (d6 <= 0.0) & remain
    if is_ac.any():
        w = (d2[is_ac] / (d2[is_ac] - d6[is_ac]))[:, None]
        out[is_ac] = a[is_ac] + w * ac[is_ac]
    remain &= ~is_ac

    is_bc = (va <= 0.0) & ((d4 - d3) >= 0.0) & ((d5 - d6) >= 0.0) & remain
    if is_bc.any():
        d43 = d4[is_bc] - d3[is_bc]
        w = (d43 / (d43 + (d5[is_bc] - d6[is_bc])))[:, None]
        out[is_bc] = b[is_bc] + w * (c[is_bc] - b[is_bc])
    remain &= ~is_bc

    if remain.any():
        denom = 1.0 / (va[remain] + vb[remain] + vc[remain])
        v = (vb[remain] * denom)[:, None]
        w = (vc[remain] * denom)[:, None]
        out[remain] = a[remain] + ab[remain] * v + ac[remain] * w
    return out


def _closest_points_numpy(tri, queries, chunk=64):
    nq = len(queries)
    nt = len(tri)
    points = np.empty((nq, 3), dtype=np.float64)
    sq = np.empty(nq, dtype=np.float64)
    tri_idx = np.empty(nq, dtype=np.int64)
    a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
    for lo in range(0, nq, chunk):
        hi = min(lo + chunk, nq)
        q = queries[lo:hi]
        m = hi - lo
        # expand to (m*nt) pairs
        aa = np.broadcast_to(a, (m, nt, 3)).reshape(-1, 3)
        bb = np.broadcast_to(b, (m, nt, 3)).reshape(-1, 3)
        cc = np.broadcast_to(c, (m, nt, 3)).reshape(-1, 3)
        pp = np.repeat(q, nt, axis=0)
        cand = _closest_pairs_numpy(aa, bb, cc, pp).reshape(m, nt, 3)
        d2 = ((q[:, None, :] - cand) ** 2).sum(axis=2)
        best = d2.argmin(axis=1)
        rows = np.arange(m)
        points[lo:hi] = cand[rows, best]
        sq[lo:hi] = d2[rows, best]
        tri_idx[lo:hi] = best
    return points, sq, tri_idx


# ---------------------------------------------------------------------------
# nearest neighbor in a point set
# ---------------------------------------------------------------------------


@njit(cache=True, parallel=True)
def _nearest_points_numba(points, queries):
    nq = queries.shape[0]
    n = points.shape[0]
    idx = np.empty(nq, dtype=np.int64)
    sq = np.empty(nq, dtype=np.float64)
    for i in prange(nq):
        px, py, pz = queries[i, 0], queries[i, 1], queries[i, 2]
        best = np.inf
        bj = -1
        for j in range(n):
            dx = points[j, 0] - px
            dy = points[j, 1] - py
            dz = points[j, 2] - pz
            d2 = dx * dx + dy * dy + dz * dz
            if d2 < best:
                best = d2
                bj = j
        idx[i] = bj
        sq[i] = best
    return idx, sq


def _nearest_points_numpy(points, queries, chunk=256):
    nq = len(queries)
    idx = np.empty(nq, dtype=np.int64)
    sq = np.empty(nq, dtype=np.float64)
    for lo in range(0, nq, chunk):
        hi = min(lo + chunk, nq)
        d2 = ((queries[lo:hi, None, :] - points[None, :, :]) ** 2).sum(axis=2)
        best = d2.argmin(axis=1)
        idx[lo:hi] = best
        sq[lo:hi] = d2[np.arange(hi - lo), best]
    return idx, sq


# ---------------------------------------------------------------------------
# 6-connected interior of a voxel mask (border counts as outside)
# ---------------------------------------------------------------------------


@njit(cache=True)
def _interior_mask_numba(bits):
    nx, ny, nz = bits.shape
    interior = np.zeros((nx, ny, nz), dtype=np.bool_)
    for x in range(1, nx - 1):
        for y in range(1, ny - 1):
            for z in range(1, nz - 1):
                if (
                    bits[x, y, z]
                    and bits[x - 1, y, z]
                    and bits[x + 1, y, z]
                    and bits[x, y - 1, z]
                    and bits[x, y + 1, z]
                    and bits[x, y, z - 1]
                    and bits[x, y, z + 1]
                ):
                    interior[x, y, z] = True
    return interior


def _interior_mask_numpy(bits):
    padded = np.pad(bits, 1, constant_values=False)
    interior = bits.copy()
    interior &= padded[:-2, 1:-1, 1:-1]
    interior &= padded[2:, 1:-1, 1:-1]
    interior &= padded[1:-1, :-2, 1:-1]
    interior &= padded[1:-1, 2:, 1:-1]
    interior &= padded[1:-1, 1:-1, :-2]
    interior &= padded[1:-1, 1:-1, 2:]
    return interior


# ---------------------------------------------------------------------------
# height-field rasterization: max surface height per xy grid column
# ---------------------------------------------------------------------------


@njit(cache=True)
def _column_heights_numba(v0, v1, v2, x0, y0, dx, dy, nx, ny):
    heights = np.full((nx, ny), -np.inf, dtype=np.float64)
    nt = v0.shape[0]
    for t in range(nt):
        ax, ay, az = v0[t, 0], v0[t, 1], v0[t, 2]
        bx, by, bz = v1[t, 0], v1[t, 1], v1[t, 2]
        cx, cy, cz = v2[t, 0], v2[t, 1], v2[t, 2]
        det = (bx - ax) * (cy - ay) - (cx - ax) * (by - ay)
        if abs(det) < 1e-30:
            continue
        xmin = min(ax, min(bx, cx))
        xmax = max(ax, max(bx, cx))
        ymin = min(ay, min(by, cy))
        ymax = max(ay, max(by, cy))
        i0 = max(0, int(np.ceil((xmin - x0) / dx - 1e-12)))
        i1 = min(nx - 1, int(np.floor((xmax - x0) / dx + 1e-12)))
        j0 = max(0, int(np.ceil((ymin - y0) / dy - 1e-12)))
        j1 = min(ny - 1, int(np.floor((ymax - y0) / dy + 1e-12)))
        for i in range(i0, i1 + 1):
            px = x0 + i * dx
            for j in range(j0, j1 + 1):
                py = y0 + j * dy
                w0 = ((bx - px) * (cy - py) - (cx - px) * (by - py)) / det
                w1 = ((cx - px) * (ay - py) - (ax - px) * (cy - py)) / det
                w2 = 1.0 - w0 - w1
                eps = -1e-12
                if w0 >= eps and w1 >= eps and w2 >= eps:
                    z = w0 * az + w1 * bz + w2 * cz
                    if z > heights[i, j]:
                        heights[i, j] = z
    return heights


def _column_heights_numpy(v0, v1, v2, x0, y0, dx, dy, nx, ny):
    heights = np.full((nx, ny), -np.inf, dtype=np.float64)
    for t in range(v0.shape[0]):
        ax, ay, az = v0[t]
        bx, by, bz = v1[t]
        cx, cy, cz = v2[t]
        det = (bx - ax) * (cy - ay) - (cx - ax) * (by - ay)
        if abs(det) < 1e-30:
            continue
        i0 = max(0, int(np.ceil((min(ax, bx, cx) - x0) / dx - 1e-12)))
        i1 = min(nx - 1, int(np.floor((max(ax, bx, cx) - x0) / dx + 1e-12)))
        j0 = max(0, int(np.ceil((min(ay, by, cy) - y0) / dy - 1e-12)))
        j1 = min(ny - 1, int(np.floor((max(ay, by, cy) - y0) / dy + 1e-12)))
        if i1 < i0 or j1 < j0:
            continue
        px = x0 + np.arange(i0, i1 + 1) * dx
        py = y0 + np.arange(j0, j1 + 1) * dy
        gx, gy = np.meshgrid(px, py, indexing="ij")
        w0 = ((bx - gx) * (cy - gy) - (cx - gx) * (by - gy)) / det
        w1 = ((cx - gx) * (ay - gy) - (ax - gx) * (cy - gy)) / det
        w2 = 1.0 - w0 - w1
        eps = -1e-12
        inside = (w0 >= eps) & (w1 >= eps) & (w2 >= eps)
        z = w0 * az + w1 * bz + w2 * cz
        block = heights[i0 : i1 + 1, j0 : j1 + 1]
        np.maximum(block, np.where(inside, z, -np.inf), out=block)
    return heights


# ---------------------------------------------------------------------------
# backend selection
# ---------------------------------------------------------------------------

if USE_NUMBA:
    _closest_points_impl = _closest_points_numba
    _nearest_points_impl = _nearest_points_numba
    _interior_mask_impl = _interior_mask_numba
    _column_heights_impl = _column_heights_numba
else:
    _closest_points_impl = _closest_points_numpy
    _nearest_points_impl = _nearest_points_numpy
    _interior_mask_impl = _interior_mask_numpy
    _column_heights_impl = _column_heights_numpy


def closest_points_on_triangles(tri, queries):
    """For each query point, the globally closest point over a triangle array.

    tri: (m, 3, 3) float64, queries: (q, 3) float64.
    Returns (points (q,3), squared distances (q,), triangle indices (q,)).
    Ties resolve to the lowest triangle index.
    """
    tri = np.ascontiguousarray(tri, dtype=np.float64)
    queries = np.ascontiguousarray(queries, dtype=np.float64)
    if tri.ndim != 3 or tri.shape[1:] != (3, 3):
        raise ValueError("tri must have shape (m, 3, 3)")
    if len(tri) == 0:
        raise ValueError("empty triangle list")
    return _closest_points_impl(tri, queries)


def nearest_points(points, queries):
    """Index and squared distance of the nearest point for each query.

    Ties resolve to the lowest point index.
    """
    points = np.ascontiguousarray(points, dtype=np.float64)
    queries = np.ascontiguousarray(queries, dtype=np.float64)
    if len(points) == 0:
        raise ValueError("empty point set")
    return _nearest_points_impl(points, queries)


def interior_mask(bits):
    """Voxels whose six face neighbors are all set; border is never interior."""
    bits = np.ascontiguousarray(bits, dtype=bool)
    return _interior_mask_impl(bits)


def column_heights(v0, v1, v2, x0, y0, dx, dy, nx, ny):
    """Max surface height of a triangulated height field per xy grid column.

    Grid column (i, j) sits at world (x0 + i*dx, y0 + j*dy); columns not
    covered by any triangle get -inf.
    """
    v0 = np.ascontiguousarray(v0, dtype=np.float64)
    v1 = np.ascontiguousarray(v1, dtype=np.float64)
    v2 = np.ascontiguousarray(v2, dtype=np.float64)
    return _column_heights_impl(v0, v1, v2, float(x0), float(y0), float(dx), float(dy), int(nx), int(ny))


def warmup():
    """Trigger JIT compilation of every kernel on tiny inputs."""
    tri = np.array([[[0.0, 0, 0], [1, 0, 0], [0, 1, 0]]])
    q = np.array([[0.2, 0.2, 1.0]])
    closest_points_on_triangles(tri, q)
    nearest_points(q, q)
    interior_mask(np.ones((3, 3, 3), dtype=bool))
    column_heights(tri[:, 0], tri[:, 1], tri[:, 2], 0.0, 0.0, 0.5, 0.5, 2, 2)
