"""Lattice discretization of bounded simply connected planar domains.

Conventions, fixed here and used everywhere else:

* cells sit at ``origin + (ix*h, iy*h)`` and own the square of side ``h``
  centered there;
* the Dirichlet operator is the graph Laplacian of the interior cells plus
  ``m^2 h^2`` on the diagonal (diagonal ``4 + m^2 h^2``, off-diagonal ``-1``
  for interior 4-neighbors).  Its inverse is the lattice Green matrix, which
  approximates the continuum Green function of ``-Delta + m^2`` pointwise
  (with the ``-(1/2pi) log`` diagonal singularity appearing as ``log(1/h)``);
* integrals ``int f dz`` become cell sums times ``h^2``;
* the conformal radius is read off the regularized Green diagonal,
  ``CR(z) = exp(2 pi G(z,z) - c(h))``, with ``c(h)`` calibrated once per mesh
  so that the unit disc gives ``CR(0) = 1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.linalg import cho_factor, cho_solve

from .errors import (
    DegenerateDomain,
    DegenerateMarks,
    NegativeMass,
    NotSimplyConnected,
    SolverDiverged,
    TooCloseToBoundary,
    TooLarge,
)

DENSE_CAP = 2500
CG_TOL = 1e-10

_NBR_STEPS = ((1, 0), (-1, 0), (0, 1), (0, -1))


# ---------------------------------------------------------------------------
# shapes


@dataclass(frozen=True)
class Rectangle:
    width: float
    height: float

    @property
    def area(self):
        return self.width * self.height

    def contains(self, x, y):
        return (x > 0.0) & (x < self.width) & (y > 0.0) & (y < self.height)

    def dist_boundary(self, x, y):
        return np.minimum(np.minimum(x, self.width - x),
                          np.minimum(y, self.height - y))

    def sample_point(self, rng):
        return rng.uniform(0.0, self.width), rng.uniform(0.0, self.height)


@dataclass(frozen=True)
class Disc:
    radius: float = 1.0
    center: tuple = (0.0, 0.0)

    @property
    def area(self):
        return math.pi * self.radius ** 2

    def contains(self, x, y):
        return (x - self.center[0]) ** 2 + (y - self.center[1]) ** 2 < self.radius ** 2

    def dist_boundary(self, x, y):
        r = np.hypot(x - self.center[0], y - self.center[1])
        return self.radius - r

    def sample_point(self, rng):
        while True:
            x = rng.uniform(-self.radius, self.radius)
            y = rng.uniform(-self.radius, self.radius)
            if x * x + y * y < self.radius ** 2:
                return self.center[0] + x, self.center[1] + y


@dataclass(frozen=True)
class Polygon:
    vertices: tuple  # ((x0, y0), (x1, y1), ...)

    @property
    def area(self):
        v = np.asarray(self.vertices)
        x, y = v[:, 0], v[:, 1]
        return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))

    def contains(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        v = np.asarray(self.vertices)
        inside = np.zeros(np.broadcast(x, y).shape, dtype=bool)
        n = len(v)
        for i in range(n):
            x0, y0 = v[i]
            x1, y1 = v[(i + 1) % n]
            crosses = (y0 > y) != (y1 > y)
            with np.errstate(divide="ignore", invalid="ignore"):
                xint = x0 + (y - y0) * (x1 - x0) / (y1 - y0)
            inside ^= crosses & (x < xint)
        return inside

    def dist_boundary(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        v = np.asarray(self.vertices)
        best = np.full(np.broadcast(x, y).shape, np.inf)
        n = len(v)
        for i in range(n):
            x0, y0 = v[i]
            x1, y1 = v[(i + 1) % n]
            dx, dy = x1 - x0, y1 - y0
            denom = dx * dx + dy * dy
            t = np.clip(((x - x0) * dx + (y - y0) * dy) / denom, 0.0, 1.0)
            d = np.hypot(x - (x0 + t * dx), y - (y0 + t * dy))
            best = np.minimum(best, d)
        return best

    def sample_point(self, rng):
        v = np.asarray(self.vertices)
        xmin, ymin = v.min(axis=0)
        xmax, ymax = v.max(axis=0)
        while True:
            x = rng.uniform(xmin, xmax)
            y = rng.uniform(ymin, ymax)
            if bool(self.contains(x, y)):
                return x, y


# ---------------------------------------------------------------------------
# grid domain


@dataclass
class MassField:
    """Nonnegative squared-mass values per interior cell (units 1/length^2)."""

    values: np.ndarray
    sup_bound: float = field(init=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if not np.all(np.isfinite(self.values)) or np.any(self.values < 0):
            raise NegativeMass("mass-squared values must be finite and >= 0")
        self.sup_bound = float(self.values.max()) if self.values.size else 0.0

    @property
    def is_zero(self):
        return self.sup_bound == 0.0

    @property
    def is_constant(self):
        return self.values.size == 0 or float(self.values.min()) == self.sup_bound


@dataclass
class GridDomain:
    """Bounded simply connected lattice domain with an ordered boundary cycle."""

    shape: object
    h: float
    origin: tuple
    ix: np.ndarray              # interior cell integer coords
    iy: np.ndarray
    boundary: np.ndarray        # (nb, 2) integer coords, ordered cycle (ccw)
    marks: Optional[tuple] = None       # (idx_a, idx_b) into the boundary cycle
    _index: dict = field(default_factory=dict, repr=False)
    _bindex: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self._index = {(int(x), int(y)): k for k, (x, y) in enumerate(zip(self.ix, self.iy))}
        self._bindex = {(int(x), int(y)): k for k, (x, y) in enumerate(self.boundary)}

    # -- geometry ----------------------------------------------------------

    @property
    def n_cells(self):
        return self.ix.size

    @property
    def n_boundary(self):
        return self.boundary.shape[0]

    def xy(self):
        """Physical coordinates of the interior cells, shape (n, 2)."""
        return np.column_stack([self.origin[0] + self.ix * self.h,
                                self.origin[1] + self.iy * self.h])

    def zs(self):
        """Interior cells as complex numbers."""
        p = self.xy()
        return p[:, 0] + 1j * p[:, 1]

    def boundary_xy(self):
        return np.column_stack([self.origin[0] + self.boundary[:, 0] * self.h,
                                self.origin[1] + self.boundary[:, 1] * self.h])

    def cell_index(self, ix, iy):
        return self._index.get((int(ix), int(iy)), -1)

    def nearest_cell(self, x, y):
        """Index of the interior cell whose center is closest to (x, y)."""
        ix = round((x - self.origin[0]) / self.h)
        iy = round((y - self.origin[1]) / self.h)
        k = self.cell_index(ix, iy)
        if k >= 0:
            return k
        d2 = (self.ix - (x - self.origin[0]) / self.h) ** 2 \
            + (self.iy - (y - self.origin[1]) / self.h) ** 2
        return int(np.argmin(d2))

    def cells_of_points(self, x, y):
        """Flat interior index per point (-1 when off the interior grid)."""
        jx = np.round((np.asarray(x) - self.origin[0]) / self.h).astype(np.int64)
        jy = np.round((np.asarray(y) - self.origin[1]) / self.h).astype(np.int64)
        out = np.empty(jx.shape, dtype=np.int64)
        flat_jx = jx.ravel()
        flat_jy = jy.ravel()
        flat = out.ravel()
        for k in range(flat.size):
            flat[k] = self.cell_index(flat_jx[k], flat_jy[k])
        return out

    def interior_distance(self):
        """Distance of each cell center to the continuum boundary."""
        p = self.xy()
        return self.shape.dist_boundary(p[:, 0], p[:, 1])

    def neighbor_arrays(self):
        """Per cell and direction: interior neighbor index (else -1) and
        boundary-cycle index (else -1).  Cached."""
        cached = getattr(self, "_nbr_cache", None)
        if cached is not None:
            return cached
        n = self.n_cells
        nbr = -np.ones((n, 4), dtype=np.int64)
        bnbr = -np.ones((n, 4), dtype=np.int64)
        for k in range(n):
            cx, cy = int(self.ix[k]), int(self.iy[k])
            for d, (dx, dy) in enumerate(_NBR_STEPS):
                j = self.cell_index(cx + dx, cy + dy)
                if j >= 0:
                    nbr[k, d] = j
                else:
                    bnbr[k, d] = self._bindex.get((cx + dx, cy + dy), -1)
        self._nbr_cache = (nbr, bnbr)
        return self._nbr_cache

    # -- marked arcs ---------------------------------------------------------

    def arc_signs(self):
        """+1 on the clockwise arc a->b, -1 on the counterclockwise arc, 0 at marks.

        The cycle itself is stored counterclockwise, so walking forward from a
        to b traverses the counterclockwise arc.
        """
        if self.marks is None:
            raise DegenerateMarks("domain has no boundary marks")
        ia, ib = self.marks
        sign = np.empty(self.n_boundary, dtype=float)
        nb = self.n_boundary
        k = (ia + 1) % nb
        while k != ib:
            sign[k] = -1.0
            k = (k + 1) % nb
        k = (ib + 1) % nb
        while k != ia:
            sign[k] = +1.0
            k = (k + 1) % nb
        sign[ia] = 0.0
        sign[ib] = 0.0
        return sign

    def mark_points(self):
        ia, ib = self.marks
        bxy = self.boundary_xy()
        return bxy[ia], bxy[ib]


def _trace_boundary_cycle(interior):
    """Ordered (ccw) cycle of boundary lattice points around a 4-connected set.

    Walks the edge contour of the union of cell squares with the interior on
    the left and records the outside cell right of each edge, inserting the
    diagonal cell at every convex corner so that the 8-connected ring (the
    corner cells included) comes out in cyclic order.
    """
    cells = set(interior)
    edges = {}  # tail vertex -> list of (head vertex, outside cell)
    for (i, j) in cells:
        if (i, j - 1) not in cells:   # bottom, walk +x
            edges.setdefault((i, j), []).append(((i + 1, j), (i, j - 1)))
        if (i + 1, j) not in cells:   # right, walk +y
            edges.setdefault((i + 1, j), []).append(((i + 1, j + 1), (i + 1, j)))
        if (i, j + 1) not in cells:   # top, walk -x
            edges.setdefault((i + 1, j + 1), []).append(((i, j + 1), (i, j + 1)))
        if (i - 1, j) not in cells:   # left, walk -y
            edges.setdefault((i, j + 1), []).append(((i, j), (i - 1, j)))
    # vertices are offset so that cell (i, j) owns corners (i, j)..(i+1, j+1)
    start = min(edges.keys())
    cycle_out = []
    prev_dir = None
    v = start
    first = True
    while first or v != start:
        first = False
        cands = edges[v]
        if len(cands) == 1 or prev_dir is None:
            head, outside = cands[0]
        else:
            # pinch vertex: take the sharpest left turn to stay on the outer cycle
            def turn(c):
                d = (c[0][0] - v[0], c[0][1] - v[1])
                cross = prev_dir[0] * d[1] - prev_dir[1] * d[0]
                dot = prev_dir[0] * d[0] + prev_dir[1] * d[1]
                return math.atan2(cross, dot)
            head, outside = max(cands, key=turn)
        d = (head[0] - v[0], head[1] - v[1])
        if prev_dir is not None and (prev_dir[0] * d[1] - prev_dir[1] * d[0]) > 0:
            # left (convex) turn: the cell diagonally across the vertex is a
            # corner boundary point between the two edge neighbors
            corner = _corner_cell(v, prev_dir, d)
            if corner not in cells:
                cycle_out.append(corner)
        cycle_out.append(outside)
        prev_dir = d
        v = head
    # close the cycle: handle a convex turn at the start vertex
    cands = edges[start]
    head0, _ = cands[0]
    d0 = (head0[0] - start[0], head0[1] - start[1])
    if prev_dir[0] * d0[1] - prev_dir[1] * d0[0] > 0:
        corner = _corner_cell(start, prev_dir, d0)
        if corner not in cells:
            cycle_out.append(corner)
    # drop consecutive duplicates
    cycle = []
    for c in cycle_out:
        if not cycle or cycle[-1] != c:
            cycle.append(c)
    if len(cycle) > 1 and cycle[0] == cycle[-1]:
        cycle.pop()
    return cycle


def _corner_cell(v, d_in, d_out):
    """Cell diagonally across vertex ``v`` between two left-turning edges.

    Cell (i, j) owns the vertices (i, j)..(i+1, j+1); at a convex corner the
    outside-diagonal cell sits opposite the interior across the vertex.
    """
    if d_in == (1, 0) and d_out == (0, 1):
        return (v[0], v[1] - 1)
    if d_in == (0, 1) and d_out == (-1, 0):
        return (v[0], v[1])
    if d_in == (-1, 0) and d_out == (0, -1):
        return (v[0] - 1, v[1])
    if d_in == (0, -1) and d_out == (1, 0):
        return (v[0] - 1, v[1] - 1)
    raise AssertionError(f"not a left turn: {d_in} -> {d_out}")


def euler_characteristic(interior):
    """V - E + F of the polyomino built from the interior cells."""
    cells = set(interior)
    v = len(cells)
    e = 0
    f = 0
    for (i, j) in cells:
        if (i + 1, j) in cells:
            e += 1
        if (i, j + 1) in cells:
            e += 1
        if (i + 1, j) in cells and (i, j + 1) in cells and (i + 1, j + 1) in cells:
            f += 1
    return v - e + f


def _connected(interior):
    cells = set(interior)
    if not cells:
        return True
    seen = {next(iter(cells))}
    stack = [next(iter(cells))]
    while stack:
        i, j = stack.pop()
        for di, dj in _NBR_STEPS:
            n = (i + di, j + dj)
            if n in cells and n not in seen:
                seen.add(n)
                stack.append(n)
    return len(seen) == len(cells)


def build_domain(shape, h, marks=None):
    """Discretize ``shape`` at mesh ``h``, optionally with two boundary marks.

    ``marks`` is a pair of physical boundary points; they are snapped to the
    nearest points of the boundary cycle and split it into the clockwise arc
    (sign +1) and the counterclockwise arc (sign -1).
    """
    if h <= 0:
        raise DegenerateDomain("mesh must be positive")
    if isinstance(shape, Disc):
        origin = shape.center
        rad = int(math.ceil(shape.radius / h)) + 1
        rng_i = range(-rad, rad + 1)
    elif isinstance(shape, Rectangle):
        origin = (0.0, 0.0)
        rng_i = None
    elif isinstance(shape, Polygon):
        origin = (0.0, 0.0)
        v = np.asarray(shape.vertices)
        rng_i = (range(int(math.floor(v[:, 0].min() / h)) - 1,
                       int(math.ceil(v[:, 0].max() / h)) + 2),
                 range(int(math.floor(v[:, 1].min() / h)) - 1,
                       int(math.ceil(v[:, 1].max() / h)) + 2))
    else:
        raise DegenerateDomain(f"unknown shape {shape!r}")

    interior = []
    if isinstance(shape, Rectangle):
        nx = int(round(shape.width / h))
        ny = int(round(shape.height / h))
        for i in range(1, nx):
            for j in range(1, ny):
                x, y = i * h, j * h
                if shape.contains(x, y):
                    interior.append((i, j))
    elif isinstance(shape, Disc):
        for i in rng_i:
            for j in rng_i:
                if shape.contains(origin[0] + i * h, origin[1] + j * h):
                    interior.append((i, j))
    else:
        for i in rng_i[0]:
            for j in rng_i[1]:
                if shape.contains(i * h, j * h):
                    interior.append((i, j))

    if not interior:
        raise DegenerateDomain(f"{shape!r} has no interior cells at mesh {h}")
    if not _connected(interior):
        raise NotSimplyConnected("interior cells are not 4-connected")
    if euler_characteristic(interior) != 1:
        raise NotSimplyConnected("Euler check failed: interior has holes")

    cycle = _trace_boundary_cycle(interior)
    ints = set(interior)
    assert not (set(cycle) & ints)

    ix = np.array([c[0] for c in interior], dtype=np.int64)
    iy = np.array([c[1] for c in interior], dtype=np.int64)
    dom = GridDomain(shape=shape, h=h, origin=origin, ix=ix, iy=iy,
                     boundary=np.array(cycle, dtype=np.int64))

    if marks is not None:
        bxy = dom.boundary_xy()
        (ax, ay), (bx, by) = marks
        ia = int(np.argmin((bxy[:, 0] - ax) ** 2 + (bxy[:, 1] - ay) ** 2))
        ib = int(np.argmin((bxy[:, 0] - bx) ** 2 + (bxy[:, 1] - by) ** 2))
        if ia == ib:
            raise DegenerateMarks("marks snap to the same boundary cell")
        dom.marks = (ia, ib)
    return dom


def constant_mass(domain, m2, active=None):
    n = domain.n_cells if active is None else int(np.count_nonzero(active))
    return MassField(np.full(n, float(m2)))


# ---------------------------------------------------------------------------
# Dirichlet operator


@dataclass
class DirichletOperator:
    """(-Delta + m^2) with Dirichlet rows eliminated, as ``4 + m^2 h^2`` stencil.

    ``active`` marks the interior cells the operator acts on (slit-masked
    grids deactivate cells).  ``boundary_edges`` lists, per active cell, the
    Dirichlet neighbors it touches: pairs (row, boundary-cycle index) for the
    outer boundary and (row, interior cell index) for masked cells.
    """

    domain: GridDomain
    mass: MassField
    matrix: sp.csr_matrix
    rows: np.ndarray                 # active cell indices (into domain cells)
    outer_edges: np.ndarray          # (k, 2): row in matrix, boundary cycle idx
    mask_edges: np.ndarray           # (k, 2): row in matrix, masked cell idx
    _chol: object = field(default=None, repr=False)
    _dense_inv: object = field(default=None, repr=False)

    @property
    def n(self):
        return self.matrix.shape[0]

    @property
    def is_massless(self):
        return self.mass.is_zero

    def cholesky(self):
        if self._chol is None:
            if self.n > DENSE_CAP:
                raise TooLarge(f"dense factorization capped at {DENSE_CAP} cells")
            try:
                self._chol = cho_factor(self.matrix.toarray(), lower=True)
            except np.linalg.LinAlgError as exc:  # pragma: no cover
                raise SolverDiverged(f"Cholesky failed: {exc}") from exc
        return self._chol

    def dense_inverse(self):
        """Full Green matrix (inverse of the operator).  Small grids only."""
        if self._dense_inv is None:
            if self.n > DENSE_CAP:
                raise TooLarge(f"dense inverse capped at {DENSE_CAP} cells")
            self._dense_inv = cho_solve(self.cholesky(), np.eye(self.n))
        return self._dense_inv

    def solve(self, b):
        b = np.asarray(b, dtype=float)
        if self.n <= DENSE_CAP:
            return cho_solve(self.cholesky(), b)
        diag = self.matrix.diagonal()
        precond = spla.LinearOperator(self.matrix.shape, matvec=lambda x: x / diag)
        if b.ndim == 1:
            x, info = spla.cg(self.matrix, b, rtol=CG_TOL, atol=0.0, M=precond,
                              maxiter=20 * self.n)
            if info != 0:
                raise SolverDiverged(f"CG failed to converge (info={info})")
            return x
        return np.column_stack([self.solve(col) for col in b.T])


def assemble_operator(domain, mass, active=None):
    """Assemble the Dirichlet operator on the active interior cells.

    ``mass`` holds m^2 per *active* cell; deactivated cells act as extra
    Dirichlet boundary (slit masking).
    """
    n_all = domain.n_cells
    if active is None:
        active = np.ones(n_all, dtype=bool)
    rows = np.flatnonzero(active)
    if isinstance(mass, (int, float)):
        mass = MassField(np.full(rows.size, float(mass)))
    if mass.values.size != rows.size:
        raise NegativeMass("mass field size does not match active cell count")

    remap = -np.ones(n_all, dtype=np.int64)
    remap[rows] = np.arange(rows.size)
    h2 = domain.h ** 2
    nbr, bnbr = domain.neighbor_arrays()

    ii = [np.arange(rows.size)]
    jj = [np.arange(rows.size)]
    data = [4.0 + mass.values * h2]
    outer_edges = []
    mask_edges = []
    for d in range(4):
        nd = nbr[rows, d]
        has_cell = nd >= 0
        live = has_cell & active[np.where(has_cell, nd, 0)]
        r_live = np.flatnonzero(live)
        ii.append(r_live)
        jj.append(remap[nd[r_live]])
        data.append(np.full(r_live.size, -1.0))
        r_mask = np.flatnonzero(has_cell & ~live)
        if r_mask.size:
            mask_edges.append(np.column_stack([r_mask, nd[r_mask]]))
        r_out = np.flatnonzero(~has_cell)
        if r_out.size:
            bd = bnbr[rows[r_out], d]
            if np.any(bd < 0):
                raise NotSimplyConnected(
                    "a cell has a neighbor outside cells + boundary")
            outer_edges.append(np.column_stack([r_out, bd]))

    matrix = sp.csr_matrix(
        (np.concatenate(data), (np.concatenate(ii), np.concatenate(jj))),
        shape=(rows.size, rows.size))
    empty = np.empty((0, 2), dtype=np.int64)
    return DirichletOperator(
        domain=domain, mass=mass, matrix=matrix, rows=rows,
        outer_edges=np.vstack(outer_edges) if outer_edges else empty,
        mask_edges=np.vstack(mask_edges) if mask_edges else empty,
    )


def boundary_rhs(op, outer=None, masked=None):
    """Right-hand side induced by Dirichlet boundary data.

    ``outer`` gives a value per boundary-cycle point (scalar broadcast ok);
    ``masked`` gives a value per *domain* interior cell, read only where cells
    are deactivated.
    """
    b = np.zeros(op.n)
    if outer is not None and op.outer_edges.size:
        vals = np.broadcast_to(np.asarray(outer, dtype=float),
                               (op.domain.n_boundary,))
        np.add.at(b, op.outer_edges[:, 0], vals[op.outer_edges[:, 1]])
    if masked is not None and op.mask_edges.size:
        vals = np.broadcast_to(np.asarray(masked, dtype=float),
                               (op.domain.n_cells,))
        np.add.at(b, op.mask_edges[:, 0], vals[op.mask_edges[:, 1]])
    return b


def solve_dirichlet(op, boundary_data=None, rhs=None, masked_data=None):
    """Solve (-Delta + m^2) u = rhs with the given Dirichlet boundary values.

    ``rhs`` is a physical density (the equation right-hand side); the lattice
    system absorbs the ``h^2`` scaling.  With ``rhs=None`` and zero mass this
    is the discrete harmonic extension of the boundary data.
    """
    b = boundary_rhs(op, outer=boundary_data, masked=masked_data)
    if rhs is not None:
        b = b + np.asarray(rhs, dtype=float) * op.domain.h ** 2
    return op.solve(b)


def green_column(op, z):
    """Green values G(z, .) for an active cell index ``z`` (into op.rows)."""
    e = np.zeros(op.n)
    e[z] = 1.0
    g = op.solve(e)
    return g


@dataclass
class GreenTable:
    """Cache of Green-function columns, dense or solved on demand."""

    op: DirichletOperator
    mode: str = "ondemand"
    _cols: dict = field(default_factory=dict, repr=False)

    def column(self, z):
        if self.mode == "dense":
            return self.op.dense_inverse()[:, z]
        if z not in self._cols:
            self._cols[z] = green_column(self.op, z)
        return self._cols[z]

    def value(self, z, w):
        return float(self.column(z)[w])

    def export_rows(self):
        """(z, w, value) triples for every cached column."""
        if self.mode == "dense":
            g = self.op.dense_inverse()
            return [(z, w, float(g[z, w])) for z in range(self.op.n)
                    for w in range(self.op.n)]
        return [(z, w, float(col[w])) for z, col in sorted(self._cols.items())
                for w in range(self.op.n)]


def spectrum(op):
    """Sorted eigenvalues of the operator matrix (dense mode)."""
    if op.n > DENSE_CAP:
        raise TooLarge(f"dense spectrum capped at {DENSE_CAP} cells")
    return np.linalg.eigvalsh(op.matrix.toarray())


# ---------------------------------------------------------------------------
# conformal radius via the regularized Green diagonal

_CR_CALIBRATION = {}


def lattice_green_diag(op):
    """Diagonal of the Green matrix (dense mode)."""
    return np.diag(op.dense_inverse()).copy()


def _calibration_constant(h):
    key = round(h, 12)
    if key not in _CR_CALIBRATION:
        disc = build_domain(Disc(radius=1.0), h)
        op = assemble_operator(disc, constant_mass(disc, 0.0))
        k0 = disc.cell_index(0, 0)
        g00 = float(green_column(op, k0)[k0])
        _CR_CALIBRATION[key] = 2.0 * math.pi * g00
    return _CR_CALIBRATION[key]


def conformal_radius(domain, z, op=None, green_diag=None):
    """CR(z, boundary) from exp(2 pi G(z,z) - c(h)).

    ``z`` is an interior cell index.  Pass a precomputed massless operator or
    Green diagonal to amortize repeated queries.
    """
    dist = float(domain.interior_distance()[z])
    if dist < 2.0 * domain.h:
        raise TooCloseToBoundary(f"cell {z} is {dist:.3g} from the boundary")
    if green_diag is not None:
        gzz = float(green_diag[z])
    else:
        if op is None:
            op = assemble_operator(domain, constant_mass(domain, 0.0))
        gzz = float(green_column(op, z)[z])
    return math.exp(2.0 * math.pi * gzz - _calibration_constant(domain.h))
