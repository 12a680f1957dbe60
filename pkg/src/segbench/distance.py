"""Exact anisotropic Euclidean distance transform.

Separable transform on squared distances in mm^2:

* x: nearest site on the same x-line, by a forward and a backward sweep
  done a whole (y, z) plane at a time so memory is read sequentially;
* y: lower envelope of parabolas (Felzenszwalb & Huttenlocher);
* z: lower envelope again, or, when only a few voxels are queried,
  a direct minimum over the (contiguous) z column.

Every 1D pass takes an exact minimum, so the composition is the exact
Euclidean distance to the nearest foreground voxel centre.
"""
from __future__ import annotations

import numba as nb
import numpy as np

__all__ = ["edt", "squared_edt", "squared_distances_at"]

# columns with more queries than this use the envelope instead of direct minima
_DIRECT_QUERY_LIMIT = 12


@nb.njit(cache=True, nogil=True)
def _envelope_1d(f, n, out, delta, v, g, z):
    """1D squared-distance transform of ``f[:n]`` into ``out``; inf marks 'no site'."""
    k = -1
    for q in range(n):
        fq = f[q]
        if fq == np.inf:
            continue
        pq = delta * q
        gq = fq + pq * pq
        if k < 0:
            k = 0
            v[0] = q
            g[0] = gq
            z[0] = -np.inf
            z[1] = np.inf
            continue
        s = (gq - g[k]) / (2.0 * (pq - delta * v[k]))
        while s <= z[k]:
            k -= 1
            s = (gq - g[k]) / (2.0 * (pq - delta * v[k]))
        k += 1
        v[k] = q
        g[k] = gq
        z[k] = s
        z[k + 1] = np.inf
    if k < 0:
        for q in range(n):
            out[q] = np.inf
        return
    j = 0
    for q in range(n):
        x = delta * q
        while z[j + 1] < x:
            j += 1
        d = x - delta * v[j]
        out[q] = d * d + f[v[j]]


@nb.njit(cache=True, nogil=True)
def _xy_passes(mask, dx, dy):
    nx, ny, nz = mask.shape
    a = np.empty((nx, ny, nz), dtype=np.float64)
    last = np.full((ny, nz), -1, dtype=np.int64)
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                if mask[i, j, k]:
                    last[j, k] = i
                    a[i, j, k] = 0.0
                elif last[j, k] >= 0:
                    d = (i - last[j, k]) * dx
                    a[i, j, k] = d * d
                else:
                    a[i, j, k] = np.inf
    last[:, :] = -1
    for i in range(nx - 1, -1, -1):
        for j in range(ny):
            for k in range(nz):
                if mask[i, j, k]:
                    last[j, k] = i
                elif last[j, k] >= 0:
                    d = (last[j, k] - i) * dx
                    if d * d < a[i, j, k]:
                        a[i, j, k] = d * d
    nmax = max(ny, nz)
    v = np.empty(nmax, dtype=np.int64)
    g = np.empty(nmax, dtype=np.float64)
    z = np.empty(nmax + 1, dtype=np.float64)
    out = np.empty(nmax, dtype=np.float64)
    slab = np.empty((nz, ny), dtype=np.float64)
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                slab[k, j] = a[i, j, k]
        for k in range(nz):
            _envelope_1d(slab[k], ny, out, dy, v, g, z)
            for j in range(ny):
                slab[k, j] = out[j]
        for j in range(ny):
            for k in range(nz):
                a[i, j, k] = slab[k, j]
    return a


@nb.njit(cache=True, nogil=True)
def _z_pass_full(a, dz):
    nx, ny, nz = a.shape
    v = np.empty(nz, dtype=np.int64)
    g = np.empty(nz, dtype=np.float64)
    z = np.empty(nz + 1, dtype=np.float64)
    out = np.empty(nz, dtype=np.float64)
    for i in range(nx):
        for j in range(ny):
            col = a[i, j]
            _envelope_1d(col, nz, out, dz, v, g, z)
            col[:] = out[:nz]


@nb.njit(cache=True, nogil=True)
def _z_pass_queries(a, query, dz, limit):
    nx, ny, nz = a.shape
    n = 0
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                if query[i, j, k]:
                    n += 1
    res = np.empty(n, dtype=np.float64)
    v = np.empty(nz, dtype=np.int64)
    g = np.empty(nz, dtype=np.float64)
    z = np.empty(nz + 1, dtype=np.float64)
    out = np.empty(nz, dtype=np.float64)
    m = 0
    for i in range(nx):
        for j in range(ny):
            col = a[i, j]
            nq = 0
            for k in range(nz):
                if query[i, j, k]:
                    nq += 1
            if nq == 0:
                continue
            if nq > limit:
                _envelope_1d(col, nz, out, dz, v, g, z)
                for k in range(nz):
                    if query[i, j, k]:
                        res[m] = out[k]
                        m += 1
                continue
            for k in range(nz):
                if not query[i, j, k]:
                    continue
                best = np.inf
                x = dz * k
                for kk in range(nz):
                    d = x - dz * kk
                    c = d * d + col[kk]
                    if c < best:
                        best = c
                res[m] = best
                m += 1
    return res


def _prepare(mask, spacing):
    mask = np.ascontiguousarray(mask, dtype=bool)
    if mask.ndim != 3:
        raise ValueError("expected a 3D mask")
    if not mask.any():
        raise ValueError("distance transform of an empty mask is undefined")
    return mask, tuple(float(s) for s in spacing)


def squared_edt(mask: np.ndarray, spacing) -> np.ndarray:
    """Squared mm distance from every voxel centre to the nearest True voxel."""
    mask, (dx, dy, dz) = _prepare(mask, spacing)
    a = _xy_passes(mask, dx, dy)
    _z_pass_full(a, dz)
    return a


def edt(mask: np.ndarray, spacing) -> np.ndarray:
    """Euclidean mm distance from every voxel centre to the nearest True voxel."""
    return np.sqrt(squared_edt(mask, spacing))


def squared_distances_at(sites: np.ndarray, query: np.ndarray, spacing) -> np.ndarray:
    """Squared mm distance to the nearest site, evaluated only where ``query`` is True.

    Values come back in C scan order of the query voxels.
    """
    sites, (dx, dy, dz) = _prepare(sites, spacing)
    query = np.ascontiguousarray(query, dtype=bool)
    if query.shape != sites.shape:
        raise ValueError(f"shape mismatch {sites.shape} vs {query.shape}")
    a = _xy_passes(sites, dx, dy)
    return _z_pass_queries(a, query, dz, _DIRECT_QUERY_LIMIT)
