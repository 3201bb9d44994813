"""Hot numeric kernels with a numba fast path and a pure-numpy fallback.

The fallback is selected by setting the environment variable
``MASSIVESLE_NO_NUMBA=1`` before import (or automatically when numba is not
installed).  Both paths implement identical arithmetic in identical order, so
results are bit-for-bit equal; ``benchmarks/bench_kernels.py`` times them
against each other.
"""

from __future__ import annotations

import os

import numpy as np

USE_NUMBA = os.environ.get("MASSIVESLE_NO_NUMBA", "0") not in ("1", "true", "yes")

if USE_NUMBA:
    try:
        from numba import njit
    except ImportError:  # pragma: no cover - numba is a hard dep, but degrade anyway
        USE_NUMBA = False

if not USE_NUMBA:
    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]

        def wrap(f):
            return f

        return wrap


@njit(cache=True)
def _inv_step(u, wi, dt):  # pragma: no cover - exercised via wrappers
    """One inverse slit map f_i(u) = W + sqrt((u - W)^2 - 4 dt) on closed H.

    Real points inside the fold |u - W| < 2 sqrt(dt) lift onto the slit
    (+i branch); elsewhere the branch keeps the sign of Re(u - W).
    """
    d = u - wi
    if d.imag == 0.0:
        dr = d.real
        disc = dr * dr - 4.0 * dt
        if disc <= 0.0:
            return wi + 1j * np.sqrt(-disc)
        if dr < 0.0:
            return wi - np.sqrt(disc)
        return wi + np.sqrt(disc)
    s = np.sqrt(d * d - 4.0 * dt)
    if d.real < 0.0:
        s = -s
    return wi + s


@njit(cache=True)
def _trace_numba(w, dt):  # pragma: no cover - exercised via compute_trace
    k = w.shape[0] - 1
    out = np.empty(k + 1, dtype=np.complex128)
    out[0] = 0.0 + 0.0j
    for j in range(1, k + 1):
        z = complex(w[j], 0.0)
        for i in range(j, 0, -1):
            z = _inv_step(z, w[i - 1], dt)
        out[j] = z
    return out


def _inv_step_vec(u, wi, dt):
    d = u - wi
    real_mask = d.imag == 0.0
    disc = d.real * d.real - 4.0 * dt
    on_fold = real_mask & (disc <= 0.0)
    s = np.sqrt(d * d - 4.0 * dt)
    s = np.where(d.real < 0.0, -s, s)
    s = np.where(on_fold, 1j * np.sqrt(np.where(on_fold, -disc, 1.0)), s)
    return wi + s


def _trace_numpy(w, dt):
    k = w.shape[0] - 1
    pts = w.astype(np.complex128).copy()
    for i in range(k, 0, -1):
        pts[i:] = _inv_step_vec(pts[i:], w[i - 1], dt)
    pts[0] = 0.0
    return pts


def compute_trace(w, dt):
    """Trace points gamma(t_k) of the piecewise-constant-driver Loewner chain.

    ``w`` holds driver values W_{t_0..t_K}; the k-th trace point is the image
    of W_{t_k} under the composed inverse slit maps f_1 o ... o f_k.
    """
    w = np.ascontiguousarray(w, dtype=np.float64)
    if USE_NUMBA:
        return _trace_numba(w, dt)
    return _trace_numpy(w, dt)


@njit(cache=True)
def _tip_numba(w, k, dt):  # pragma: no cover - exercised via tip_point
    z = complex(w[k], 0.0)
    for i in range(k, 0, -1):
        z = _inv_step(z, w[i - 1], dt)
    return z


def _tip_numpy(w, k, dt):
    z = complex(w[k])
    for i in range(k, 0, -1):
        z = complex(_inv_step_vec(np.array([z]), w[i - 1], dt)[0])
    return z


def tip_point(w, k, dt):
    """Half-plane position of the curve tip after ``k`` steps."""
    w = np.ascontiguousarray(w, dtype=np.float64)
    if USE_NUMBA:
        return _tip_numba(w, k, dt)
    return _tip_numpy(w, k, dt)


@njit(cache=True)
def _evolve_numba(zeta, w, dt):  # pragma: no cover - exercised via evolve_points
    out = zeta.copy()
    n = out.shape[0]
    for i in range(w.shape[0]):
        wi = w[i]
        for j in range(n):
            u = out[j] - wi
            out[j] = wi + np.sqrt(u * u + 4.0 * dt)
    return out


def _evolve_numpy(zeta, w, dt):
    out = zeta.astype(np.complex128).copy()
    for wi in w:
        u = out - wi
        out = wi + np.sqrt(u * u + 4.0 * dt)
    return out


def evolve_points(zeta, w, dt):
    """Push points of the upper half-plane through the forward slit maps.

    Applies g_{t_{k+1}} = s_k o g_{t_k} with the vertical-slit elementary map
    s_k(u) = W_k + sqrt((u - W_k)^2 + 4 dt) for every driver value in ``w``.
    Points must stay outside the swallowing radius; callers mask first.
    """
    zeta = np.ascontiguousarray(zeta, dtype=np.complex128)
    w = np.ascontiguousarray(w, dtype=np.float64)
    if USE_NUMBA:
        return _evolve_numba(zeta, w, dt)
    return _evolve_numpy(zeta, w, dt)


@njit(cache=True)
def _raster_numba(xs, ys, h, nx, ny):  # pragma: no cover
    touched = np.zeros(nx * ny, dtype=np.uint8)
    for i in range(xs.shape[0] - 1):
        x0 = xs[i] / h
        y0 = ys[i] / h
        x1 = xs[i + 1] / h
        y1 = ys[i + 1] / h
        dx = x1 - x0
        dy = y1 - y0
        n = int(max(abs(dx), abs(dy)) * 2.0) + 1
        for k in range(n + 1):
            t = k / n
            cx = int(np.floor(x0 + t * dx + 0.5))
            cy = int(np.floor(y0 + t * dy + 0.5))
            if 0 <= cx < nx and 0 <= cy < ny:
                touched[cy * nx + cx] = 1
    return touched


def _raster_numpy(xs, ys, h, nx, ny):
    touched = np.zeros(nx * ny, dtype=np.uint8)
    for i in range(xs.shape[0] - 1):
        x0 = xs[i] / h
        y0 = ys[i] / h
        x1 = xs[i + 1] / h
        y1 = ys[i + 1] / h
        dx = x1 - x0
        dy = y1 - y0
        n = int(max(abs(dx), abs(dy)) * 2.0) + 1
        t = np.arange(n + 1) / n
        cx = np.floor(x0 + t * dx + 0.5).astype(np.int64)
        cy = np.floor(y0 + t * dy + 0.5).astype(np.int64)
        ok = (cx >= 0) & (cx < nx) & (cy >= 0) & (cy < ny)
        touched[cy[ok] * nx + cx[ok]] = 1
    return touched


def rasterize_polyline(xs, ys, h, nx, ny):
    """Mark every mesh-``h`` cell a polyline passes through (dense sampling).

    Cell (ix, iy) covers [ix*h - h/2, ix*h + h/2) x [iy*h - h/2, iy*h + h/2);
    segments are sampled at twice the cell rate, which cannot skip a cell.
    Returns a flat uint8 occupancy array of shape (nx*ny,).
    """
    xs = np.ascontiguousarray(xs, dtype=np.float64)
    ys = np.ascontiguousarray(ys, dtype=np.float64)
    if USE_NUMBA:
        return _raster_numba(xs, ys, h, nx, ny)
    return _raster_numpy(xs, ys, h, nx, ny)


@njit(cache=True)
def _occupation_numba(cells, dt_path, ncells):  # pragma: no cover
    occ = np.zeros(ncells, dtype=np.float64)
    for i in range(cells.shape[0]):
        c = cells[i]
        if c >= 0:
            occ[c] += dt_path
    return occ


def _occupation_numpy(cells, dt_path, ncells):
    occ = np.zeros(ncells, dtype=np.float64)
    valid = cells[cells >= 0]
    np.add.at(occ, valid, dt_path)
    return occ


def occupation_per_cell(cells, dt_path, ncells):
    """Accumulate time spent per lattice cell along a sampled loop.

    ``cells`` maps each path sample to its flat cell index (-1 = off-grid).
    """
    cells = np.ascontiguousarray(cells, dtype=np.int64)
    if USE_NUMBA:
        return _occupation_numba(cells, dt_path, ncells)
    return _occupation_numpy(cells, dt_path, ncells)
