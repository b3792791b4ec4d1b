"""Cloud-in-cell (multilinear) deposition, gather and fused push kernels.

Grid node ``j`` sits at ``x = j h`` and owns the cell ``[x - h/2, x + h/2)``.
Deposition and gather use the same weights, so ``gather`` is the exact
adjoint of ``deposit`` in the unit-volume grid inner product.  Loops are
serial, which keeps the floating-point summation order fixed.

Kernels operate on flattened grids: component ``c`` of node ``(i, j, k)``
lives at ``c n^3 + i n^2 + j n + k``.
"""
from __future__ import annotations

import math

import numba
import numpy as np

__all__ = ["deposit", "gather", "drift_kick_drift"]


@numba.njit(cache=True, inline="always")
def _cell(s, n):
    # s in [0, n]; returns lower node, upper node, fractional offset
    i = int(s)
    f = s - i
    if i >= n:
        i -= n
    j = i + 1
    if j == n:
        j = 0
    return i, j, f


@numba.njit(cache=True, inline="always")
def _wrap(y):
    y = y - math.floor(y)
    if y >= 1.0:
        y = 0.0
    return y


@numba.njit(cache=True, inline="always")
def _stencil(x, n, idx, wts):
    dim = x.shape[0]
    if dim == 2:
        ix, jx, fx = _cell(x[0] * n, n)
        iy, jy, fy = _cell(x[1] * n, n)
        gx = 1.0 - fx
        gy = 1.0 - fy
        idx[0] = ix * n + iy
        idx[1] = ix * n + jy
        idx[2] = jx * n + iy
        idx[3] = jx * n + jy
        wts[0] = gx * gy
        wts[1] = gx * fy
        wts[2] = fx * gy
        wts[3] = fx * fy
    else:
        ix, jx, fx = _cell(x[0] * n, n)
        iy, jy, fy = _cell(x[1] * n, n)
        iz, jz, fz = _cell(x[2] * n, n)
        gx = 1.0 - fx
        gy = 1.0 - fy
        gz = 1.0 - fz
        nn = n * n
        a0 = ix * nn
        a1 = jx * nn
        b0 = iy * n
        b1 = jy * n
        idx[0] = a0 + b0 + iz
        idx[1] = a0 + b0 + jz
        idx[2] = a0 + b1 + iz
        idx[3] = a0 + b1 + jz
        idx[4] = a1 + b0 + iz
        idx[5] = a1 + b0 + jz
        idx[6] = a1 + b1 + iz
        idx[7] = a1 + b1 + jz
        gxy = gx * gy
        gxf = gx * fy
        fxg = fx * gy
        fxy = fx * fy
        wts[0] = gxy * gz
        wts[1] = gxy * fz
        wts[2] = gxf * gz
        wts[3] = gxf * fz
        wts[4] = fxg * gz
        wts[5] = fxg * fz
        wts[6] = fxy * gz
        wts[7] = fxy * fz


@numba.njit(cache=True)
def _deposit(x, q, n, out):
    dim = x.shape[1]
    ncell = n**dim
    nc = 1 << dim
    idx = np.empty(nc, dtype=np.int64)
    wts = np.empty(nc)
    for p in range(x.shape[0]):
        _stencil(x[p], n, idx, wts)
        for c in range(q.shape[1]):
            o = c * ncell
            qc = q[p, c]
            for a in range(nc):
                out[o + idx[a]] += qc * wts[a]


@numba.njit(cache=True)
def _gather(field, ncomp, x, n, out):
    dim = x.shape[1]
    ncell = n**dim
    nc = 1 << dim
    idx = np.empty(nc, dtype=np.int64)
    wts = np.empty(nc)
    for p in range(x.shape[0]):
        _stencil(x[p], n, idx, wts)
        for c in range(ncomp):
            o = c * ncell
            s = 0.0
            for a in range(nc):
                s += wts[a] * field[o + idx[a]]
            out[p, c] = s


@numba.njit(cache=True)
def _push(x, v, wgt, field, uc, n, dt, decay, x_out, v_out, imp):
    dim = x.shape[1]
    ncell = n**dim
    nc = 1 << dim
    idx = np.empty(nc, dtype=np.int64)
    wts = np.empty(nc)
    h = np.empty(dim)
    half = 0.5 * dt
    for p in range(x.shape[0]):
        for c in range(dim):
            h[c] = _wrap(x[p, c] + half * v[p, c])
        _stencil(h, n, idx, wts)
        for c in range(dim):
            o = c * ncell
            u = 0.0
            for a in range(nc):
                u += wts[a] * field[o + idx[a]]
            u += uc[c]
            vn = u + (v[p, c] - u) * decay
            v_out[p, c] = vn
            q = -wgt[p] * (vn - v[p, c])
            for a in range(nc):
                imp[o + idx[a]] += q * wts[a]
            x_out[p, c] = _wrap(h[c] + half * vn)


@numba.njit(cache=True, boundscheck=False)
def _push3(x, v, wgt, field, uc, n, dt, decay, x_out, v_out, imp):
    # unrolled 3-d specialisation of _push; same arithmetic, about 2x faster
    nn = n * n
    ncell = nn * n
    half = 0.5 * dt
    for p in range(x.shape[0]):
        hx = _wrap(x[p, 0] + half * v[p, 0])
        hy = _wrap(x[p, 1] + half * v[p, 1])
        hz = _wrap(x[p, 2] + half * v[p, 2])
        ix, jx, fx = _cell(hx * n, n)
        iy, jy, fy = _cell(hy * n, n)
        iz, jz, fz = _cell(hz * n, n)
        a0 = ix * nn
        a1 = jx * nn
        b0 = iy * n
        b1 = jy * n
        i000 = a0 + b0 + iz
        i001 = a0 + b0 + jz
        i010 = a0 + b1 + iz
        i011 = a0 + b1 + jz
        i100 = a1 + b0 + iz
        i101 = a1 + b0 + jz
        i110 = a1 + b1 + iz
        i111 = a1 + b1 + jz
        gx = 1.0 - fx
        gy = 1.0 - fy
        gz = 1.0 - fz
        gxy = gx * gy
        gxf = gx * fy
        fxg = fx * gy
        fxy = fx * fy
        w000 = gxy * gz
        w001 = gxy * fz
        w010 = gxf * gz
        w011 = gxf * fz
        w100 = fxg * gz
        w101 = fxg * fz
        w110 = fxy * gz
        w111 = fxy * fz
        for c in range(3):
            o = c * ncell
            u = (w000 * field[o + i000] + w001 * field[o + i001]
                 + w010 * field[o + i010] + w011 * field[o + i011]
                 + w100 * field[o + i100] + w101 * field[o + i101]
                 + w110 * field[o + i110] + w111 * field[o + i111])
            u += uc[c]
            vn = u + (v[p, c] - u) * decay
            v_out[p, c] = vn
            q = -wgt[p] * (vn - v[p, c])
            imp[o + i000] += q * w000
            imp[o + i001] += q * w001
            imp[o + i010] += q * w010
            imp[o + i011] += q * w011
            imp[o + i100] += q * w100
            imp[o + i101] += q * w101
            imp[o + i110] += q * w110
            imp[o + i111] += q * w111
        x_out[p, 0] = _wrap(hx + half * v_out[p, 0])
        x_out[p, 1] = _wrap(hy + half * v_out[p, 1])
        x_out[p, 2] = _wrap(hz + half * v_out[p, 2])


def deposit(x: np.ndarray, q: np.ndarray, n: int) -> np.ndarray:
    """Deposit per-particle quantities ``q`` (shape ``(N, c)``) as grid densities.

    Returns shape ``(c,) + (n,)*dim`` scaled by the inverse cell volume, so
    the grid mean of each component equals ``sum(q[:, c])``.
    """
    x = np.ascontiguousarray(x, dtype=float)
    q = np.ascontiguousarray(q, dtype=float)
    if q.ndim == 1:
        q = q[:, None]
    dim = x.shape[1]
    out = np.zeros(q.shape[1] * n**dim)
    if x.shape[0]:
        _deposit(x, q, n, out)
    out *= n**dim
    return out.reshape((q.shape[1],) + (n,) * dim)


def gather(field: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Multilinear interpolation of grid components ``field`` (``(c,) + shape``)."""
    x = np.ascontiguousarray(x, dtype=float)
    field = np.ascontiguousarray(field, dtype=float)
    n = field.shape[-1]
    out = np.empty((x.shape[0], field.shape[0]))
    if x.shape[0]:
        _gather(field.ravel(), field.shape[0], x, n, out)
    return out


def drift_kick_drift(x, v, wgt, field, uc, dt):
    """Fused half drift, exponential kick toward ``field + uc``, half drift.

    ``field`` is the grid velocity fluctuation and ``uc`` the constant part,
    added after interpolation so a uniform flow is reproduced exactly.  Returns
    ``(x_new, v_new, impulse)``; the impulse ``-wgt (v_new - v)`` is deposited
    at the mid-step positions as a grid momentum density.
    """
    x = np.ascontiguousarray(x, dtype=float)
    v = np.ascontiguousarray(v, dtype=float)
    dim = x.shape[1]
    n = field.shape[-1]
    # the compiled kernel indexes without bounds checks
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(v)) and np.all(np.isfinite(field))):
        raise FloatingPointError("non-finite particle or field data in push")
    x_out = np.empty_like(x)
    v_out = np.empty_like(v)
    imp = np.zeros(dim * n**dim)
    if x.shape[0]:
        (_push3 if dim == 3 else _push)(x, v, np.ascontiguousarray(wgt, dtype=float),
              np.ascontiguousarray(field, dtype=float).ravel(),
              np.ascontiguousarray(uc, dtype=float), n, float(dt), math.exp(-dt),
              x_out, v_out, imp)
    imp *= n**dim
    return x_out, v_out, imp.reshape((dim,) + (n,) * dim)
