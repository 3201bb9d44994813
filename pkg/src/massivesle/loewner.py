"""Chordal Loewner evolution, SLE4 and massive SLE4 drivers, and the
change-of-measure weights that connect them.

Everything is parametrized by half-plane capacity: the composed vertical
slit maps solve the Loewner equation dg = 2 dt / (g - W) exactly for a
piecewise-constant driver, each step adding exactly 2 dt of capacity.

The massive driver integrates

    dW = 2 dB - 2 pi ( sum_z m^2(z) P^m(z) h(z) h^2 ) dt

where P^m is the massive Poisson kernel seen from the tip (closed-form
massless part through the chain, one massive lattice solve for the
correction) and h is the harmonic function equal to +1/2 on the boundary
arc containing the left side of the curve and -1/2 on the other arc.  The
printed variant of that boundary condition is internally inconsistent in the
source material; the sign used here is the one for which the +-1/2 massive
harmonic observable is a martingale under the drifted driver, which the test
suite checks directly.

The alternative construction weights plain SLE4 paths by

    log w_t = loop_term(D_t) - 1/2 sum m^2 phi_t phi_t^m h^2
              + sum (m^2 / 2) (G_D(z,z) - G_{D_t}(z,z)) h^2  -  log Z

with Z the boundary partition value of the unslit domain, so the weight is
exactly 1 at t = 0 and has unit mean at all later times.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import LAMBDA
from ._kernels import compute_trace, evolve_points, tip_point
from .conformal import uniformizer_for
from .errors import MaskDisconnected, StepTooLarge
from .lattice import MassField, assemble_operator

DT_MAX = 0.05
SWALLOW_FACTOR = 4.0


@dataclass
class DrivingPath:
    """Driver values on a uniform capacity-time grid, W_0 = 0."""

    times: np.ndarray
    values: np.ndarray
    seed: Optional[int] = None

    def __post_init__(self):
        if self.values[0] != 0.0:
            raise ValueError("driving function must start at 0")
        dts = np.diff(self.times)
        if np.any(dts <= 0) or np.ptp(dts) > 1e-12 * dts[0]:
            raise ValueError("driver needs a uniform increasing time grid")
        if dts[0] > DT_MAX + 1e-15:
            raise ValueError(f"time step {dts[0]} exceeds dt_max={DT_MAX}")

    @property
    def dt(self):
        return float(self.times[1] - self.times[0])

    @property
    def n_steps(self):
        return self.values.size - 1


def sle4_driver(T, dt, seed):
    """SLE4 driver: independent increments 2 N(0, dt), deterministic per seed."""
    n = int(round(T / dt))
    rng = np.random.default_rng(seed)
    inc = 2.0 * math.sqrt(dt) * rng.standard_normal(n)
    w = np.concatenate([[0.0], np.cumsum(inc)])
    return DrivingPath(times=np.arange(n + 1) * dt, values=w, seed=int(seed))


class ConformalChain:
    """Composition of elementary vertical slit maps for one driver."""

    def __init__(self, driver):
        self.driver = driver
        self.dt = driver.dt
        self.w = np.asarray(driver.values, dtype=float)

    @property
    def n_steps(self):
        return self.w.size - 1

    def hcap(self, k=None):
        """Half-plane capacity after k steps (2 t_k, exact by construction)."""
        k = self.n_steps if k is None else k
        return 2.0 * k * self.dt

    def map_points(self, zs, upto=None, guard=True):
        """g_{t_k}(z) for points of the upper half-plane.

        Raises StepTooLarge when a tracked point enters the swallowing
        radius; pass guard=False only for points known to stay far away.
        """
        k = self.n_steps if upto is None else upto
        zs = np.asarray(zs, dtype=complex)
        if guard:
            out = zs.copy()
            r = SWALLOW_FACTOR * math.sqrt(self.dt)
            for i in range(k):
                if np.any(np.abs(out - self.w[i]) < r):
                    raise StepTooLarge(f"tracked point swallowed at step {i}")
                out = evolve_points(out, self.w[i:i + 1], self.dt)
            return out
        return evolve_points(zs, self.w[:k], self.dt)


def evolve(driver):
    """Build the conformal chain solving the Loewner equation for ``driver``."""
    return ConformalChain(driver)


def trace_curve(chain):
    """Curve points gamma(t_k) in half-plane coordinates.

    The inverse slit maps are evaluated tip-first; points keep a nonnegative
    imaginary part by construction of the branch.
    """
    return compute_trace(chain.w, chain.dt)


# ---------------------------------------------------------------------------
# massive SLE4 on a marked lattice domain


def _initial_inverses(domain, mass):
    """Dense inverses of the massless and massive operators, cached per mass."""
    cache = getattr(domain, "_inverse_cache", None)
    if cache is None:
        cache = {}
        domain._inverse_cache = cache
    key = mass.values.tobytes()
    if key not in cache:
        op0 = assemble_operator(domain, MassField(np.zeros(domain.n_cells)))
        g0 = op0.dense_inverse()
        if mass.is_zero:
            gm = g0
        else:
            opm = assemble_operator(domain, mass)
            gm = opm.dense_inverse()
        cache[key] = (g0, gm)
    return cache[key]


class MassiveDriftState:
    """Chordal evolution state on the lattice: pulled-back grid coordinates,
    slit masking, drift solves, observables and weights.

    Used both with the drift enabled (massive SLE4 via its SDE) and disabled
    (plain SLE4 paths that get reweighted); both arms share the same masking
    surrogate, so discretization bias largely cancels in comparisons.

    Dense inverses of the massless and massive slit operators are maintained
    throughout: masking cells deletes the matching rows and columns by a
    Schur-complement update, so every Dirichlet solve along the path is a
    single matrix-vector product.
    """

    def __init__(self, domain, mass, dt, drift_enabled=True):
        if isinstance(mass, (int, float)):
            mass = MassField(np.full(domain.n_cells, float(mass)))
        self.domain = domain
        self.mass = mass
        self.dt = float(dt)
        self.drift_enabled = drift_enabled and not mass.is_zero
        self.uni = uniformizer_for(domain)
        self.phi = self.uni.to_h(domain.zs())
        self.zeta = self.phi.copy()
        self.w = [0.0]
        self.masked = np.zeros(domain.n_cells, dtype=bool)
        self.side = np.zeros(domain.n_cells, dtype=np.int8)
        self.wall_value = np.zeros(domain.n_cells)
        self.logder = np.zeros(domain.n_cells)   # log |g_t'(phi(z))|
        a_xy, _ = domain.mark_points()
        self.tip = complex(a_xy[0], a_xy[1])
        self.f_half = 0.5 * domain.arc_signs()
        self._swallow = SWALLOW_FACTOR * math.sqrt(self.dt)
        self._logz0 = None
        g0, gm = _initial_inverses(domain, mass)
        self.act = np.arange(domain.n_cells)
        self.g0 = g0.copy()
        self.gm = gm.copy() if not mass.is_zero else self.g0
        self.m_act = mass.values.copy()

    # -- stepping ------------------------------------------------------------

    @property
    def k(self):
        return len(self.w) - 1

    @property
    def t(self):
        return self.k * self.dt

    @staticmethod
    def _schur_delete(g, pos):
        keep = np.delete(np.arange(g.shape[0]), pos)
        gkd = g[np.ix_(keep, pos)]
        gdd = g[np.ix_(pos, pos)]
        out = g[np.ix_(keep, keep)] - gkd @ np.linalg.solve(gdd, gkd.T)
        return 0.5 * (out + out.T)

    def _mask_cells(self, idx, w_ref, sides=None, values=None, zeta_pre=None):
        if idx.size == 0:
            return
        order = np.argsort(idx)
        idx = idx[order]
        self.masked[idx] = True
        if sides is None:
            self.side[idx] = np.where(self.zeta[idx].real < w_ref, 1, -1)
        else:
            self.side[idx] = sides[order]
        if values is not None:
            self.wall_value[idx] = values[order]
        else:
            # freeze the closed-form massless observable at the wall cell:
            # the continuum +-1/2 data evaluated where the cell actually sits
            zp = self.zeta if zeta_pre is None else zeta_pre
            self.wall_value[idx] = np.angle(zp[idx] - w_ref) / math.pi - 0.5
        pos = np.searchsorted(self.act, idx)
        self.g0 = self._schur_delete(self.g0, pos)
        if self.mass.is_zero:
            self.gm = self.g0
        else:
            self.gm = self._schur_delete(self.gm, pos)
        self.act = np.delete(self.act, pos)
        self.m_act = np.delete(self.m_act, pos)

    def _mask_connectivity(self):
        """Absorb lattice pockets pinched off by the rasterized slit."""
        dom = self.domain
        nbr, _ = dom.neighbor_arrays()
        unm = np.flatnonzero(~self.masked)
        if unm.size == 0:
            raise MaskDisconnected("slit mask consumed the whole grid")
        comp = -np.ones(dom.n_cells, dtype=np.int64)
        n_comp = 0
        for start in unm:
            if comp[start] >= 0:
                continue
            stack = [start]
            comp[start] = n_comp
            while stack:
                c = stack.pop()
                for d in range(4):
                    k = nbr[c, d]
                    if k >= 0 and not self.masked[k] and comp[k] < 0:
                        comp[k] = n_comp
                        stack.append(k)
            n_comp += 1
        if n_comp <= 1:
            return
        sizes = np.bincount(comp[unm])
        keep = int(np.argmax(sizes))
        orphans = unm[comp[unm] != keep]
        sides = self._pocket_sides(orphans)
        self._mask_cells(orphans, self.w[-1], sides=sides,
                         values=0.5 * sides.astype(float))

    def _pocket_sides(self, orphans):
        """Sides for pinched-off pockets by voting over the enclosing walls
        (masked curve cells and outer boundary arcs carry known signs)."""
        dom = self.domain
        nbr, bnbr = dom.neighbor_arrays()
        arc = dom.arc_signs()
        sides = np.zeros(orphans.size, dtype=np.int8)
        undecided = list(range(orphans.size))
        for _ in range(orphans.size + 1):
            if not undecided:
                break
            still = []
            for i in undecided:
                c = orphans[i]
                vote = 0.0
                for d in range(4):
                    k = nbr[c, d]
                    if k >= 0:
                        if self.masked[k]:
                            vote += self.side[k]
                        else:
                            j = np.searchsorted(orphans, k)
                            if j < orphans.size and orphans[j] == k:
                                vote += sides[j]
                    else:
                        b = bnbr[c, d]
                        if b >= 0:
                            vote += arc[b]
                if vote != 0.0:
                    sides[i] = 1 if vote > 0 else -1
                else:
                    still.append(i)
            undecided = still
        for i in undecided:  # isolated tie: fall back to the conformal sign
            sides[i] = 1 if self.zeta[orphans[i]].real < self.w[-1] else -1
        return sides

    def step(self, gaussian_increment):
        """Advance one capacity step: drift solve, driver update, masking."""
        w_now = self.w[-1]
        drift = self.massive_drift() if self.drift_enabled else 0.0
        w_next = w_now + gaussian_increment + drift * self.dt
        n_masked_before = int(np.count_nonzero(self.masked))

        unm = np.flatnonzero(~self.masked)
        close = unm[np.abs(self.zeta[unm] - w_now) < self._swallow]
        self._mask_cells(close, w_now)

        zeta_pre = self.zeta.copy()
        unm = ~self.masked
        d = self.zeta[unm] - w_now
        s = np.sqrt(d * d + 4.0 * self.dt)
        s = np.where(d.real < 0.0, -s, s)
        # elementary-map derivative s'(u) = (u - W)/sqrt((u - W)^2 + 4 dt)
        self.logder[unm] += np.log(np.abs(d)) - np.log(np.abs(s))
        self.zeta[unm] = w_now + s
        self.w.append(float(w_next))

        tip_h = tip_point(np.asarray(self.w), self.k, self.dt)
        new_tip = complex(self.uni.from_h(tip_h, guess=self.tip))
        self._mask_near_segment(self.tip, new_tip, w_now, zeta_pre)
        self.tip = new_tip
        if int(np.count_nonzero(self.masked)) > n_masked_before:
            self._mask_connectivity()
        return drift

    def _mask_near_segment(self, p0, p1, w_ref, zeta_pre):
        """Mask cells within one mesh width of the new tip segment (interior
        projections only; cells ahead of the tip wait until the curve commits
        to a side).

        The slit is a two-sided jump line, so the wall must be thick enough
        that each side of the curve exposes a layer of cells carrying its own
        sign; a half-cell wall lets single cells straddle the jump and short
        it out.  Cells crossed by the curve itself are shielded by the outer
        layers, so their (ambiguous) sign barely matters.  Sides come from
        the pre-map conformal coordinate (left of the grown curve has
        Re(g(phi)) < W exactly), which is free of the direction noise a
        per-segment cross product would pick up at the mesh scale.
        """
        dom = self.domain
        h = dom.h
        x0, y0 = min(p0.real, p1.real) - 1.5 * h, min(p0.imag, p1.imag) - 1.5 * h
        x1, y1 = max(p0.real, p1.real) + 1.5 * h, max(p0.imag, p1.imag) + 1.5 * h
        xy = dom.xy()
        box = np.flatnonzero((~self.masked)
                             & (xy[:, 0] >= x0) & (xy[:, 0] <= x1)
                             & (xy[:, 1] >= y0) & (xy[:, 1] <= y1))
        if box.size == 0:
            return
        px = xy[box, 0] - p0.real
        py = xy[box, 1] - p0.imag
        ex, ey = p1.real - p0.real, p1.imag - p0.imag
        denom = ex * ex + ey * ey
        if denom == 0:
            return
        t_raw = (px * ex + py * ey) / denom
        t = np.clip(t_raw, 0.0, 1.0)
        dist = np.hypot(px - t * ex, py - t * ey)
        hit = (dist <= h) & (t_raw < 1.0)
        cells = box[hit]
        sides = np.where(zeta_pre[cells].real < w_ref, 1, -1).astype(np.int8)
        self._mask_cells(cells, w_ref, sides=sides, zeta_pre=zeta_pre)

    # -- boundary data and solves on the slit grid ------------------------------

    def slit_operator(self, mass_values=None):
        """Fresh operator on the unmasked grid (massless when no mass given).

        Used by cross-checks; the fast path works off the maintained inverses.
        """
        active = ~self.masked
        m = MassField(np.zeros(int(active.sum()))) if mass_values is None \
            else MassField(mass_values[active])
        return assemble_operator(self.domain, m, active=active)

    def _boundary_rhs(self, outer_vals, masked_scale):
        """Dirichlet right-hand side on the active cells.

        ``outer_vals`` holds one value per boundary-cycle point; masked cells
        contribute ``2 * masked_scale * wall_value`` (the frozen observable,
        which approaches +-masked_scale right at the curve).
        """
        nbr, bnbr = self.domain.neighbor_arrays()
        b = np.zeros(self.act.size)
        for d in range(4):
            nd = nbr[self.act, d]
            bd = bnbr[self.act, d]
            has_cell = nd >= 0
            hit_mask = has_cell & self.masked[np.where(has_cell, nd, 0)]
            if np.any(hit_mask):
                b[hit_mask] += 2.0 * masked_scale * self.wall_value[nd[hit_mask]]
            hit_outer = bd >= 0
            if np.any(hit_outer):
                b[hit_outer] += outer_vals[bd[hit_outer]]
        return b

    # -- kernels and drift -----------------------------------------------------

    def massless_kernel(self):
        """P_t(z) = Im(-1/(g_t(phi(z)) - W_t)) / pi on the active cells."""
        d = self.zeta[self.act] - self.w[-1]
        return np.imag(-1.0 / d) / math.pi

    def side_function(self):
        """h_t(z) = arg(g_t(phi(z)) - W_t)/pi - 1/2 on the active cells.

        Equals +1/2 on the arc attached to the left side of the curve (the
        preimage of the negative reals) and -1/2 on the other arc; this is
        phi_t / (2 lambda).
        """
        d = self.zeta[self.act] - self.w[-1]
        return np.angle(d) / math.pi - 0.5

    def massive_poisson_kernel(self):
        """P_t^m = P_t - int m^2 P_t G_t^m on the active cells."""
        p = self.massless_kernel()
        if self.mass.is_zero:
            return p
        rhs = self.domain.h ** 2 * (self.m_act * p)
        return p - self.gm @ rhs

    def massive_drift(self):
        """Drift -2 pi sum m^2(z) P_t^m(z) h_t(z) h^2 of the massive driver."""
        if self.mass.is_zero:
            return 0.0
        pm = self.massive_poisson_kernel()
        ht = self.side_function()
        return -2.0 * math.pi * self.domain.h ** 2 \
            * float(np.sum(self.m_act * pm * ht))

    # -- observables -----------------------------------------------------------

    def mharmonic_field(self):
        """Massive harmonic observable (+1/2 / -1/2 arcs) on the active cells.

        Computed by the resolvent route H^m = H - G_t^m[m^2 H]: the massless
        part is exact through the chain, the mass correction is one smooth
        integral against the maintained massive Green matrix.  With zero mass
        this is exactly the closed-form massless observable.
        """
        hval = self.side_function()
        if self.mass.is_zero:
            return hval
        rhs = self.domain.h ** 2 * (self.m_act * hval)
        return hval - self.gm @ rhs

    def mharmonic_observable(self, cells):
        """Massive harmonic observable at given domain cells.

        Returns NaN for cells already absorbed by the slit; callers freeze
        the last value there (the observable is stopped at tau_z).
        """
        u = self.mharmonic_field()
        remap = -np.ones(self.domain.n_cells, dtype=np.int64)
        remap[self.act] = np.arange(self.act.size)
        out = np.full(len(cells), np.nan)
        for i, c in enumerate(cells):
            r = remap[c]
            if r >= 0:
                out[i] = u[r]
        return out

    # -- change-of-measure weight ----------------------------------------------

    def _domain_green_diag(self):
        g0_full, _ = _initial_inverses(self.domain, self.mass)
        return np.diag(g0_full)

    def _bracket(self):
        """The three weight ingredients before normalization:

        loop_term(D_t)  (determinant route on the masked grid)
        - 1/2 sum m^2 phi_t phi_t^m h^2   (phi_t exact through the chain,
          phi_t^m by the resolvent correction)
        + sum (m^2 / 4 pi) log(CR(z, bdry D) / CR(z, bdry D_t)) h^2
          (closed form: the log-ratio is log(Im phi / Im zeta) + log|g_t'|).
        """
        dom = self.domain
        h2 = dom.h ** 2
        gm_form = self.g0 * (self.m_act * h2)[None, :]
        loop = 0.5 * float(np.trace(gm_form))
        _, logdet = np.linalg.slogdet(np.eye(self.act.size) + gm_form)
        loop -= 0.5 * logdet

        phi_t = 2.0 * LAMBDA * self.side_function()
        phi_tm = phi_t - self.gm @ (h2 * self.m_act * phi_t)
        cross = -0.5 * float(np.sum(self.m_act * phi_t * phi_tm)) * h2

        act = self.act
        log_ratio = np.log(self.phi[act].imag) - np.log(self.zeta[act].imag) \
            + self.logder[act]
        cr_term = float(np.sum(self.m_act * log_ratio)) * h2 / (4.0 * math.pi)
        return loop + cross + cr_term

    def log_z0(self):
        """Normalization: the bracket of the unslit configuration, evaluated
        with the same machinery as the running weight (so the weight is
        exactly 1 at t = 0).  Agrees with the boundary partition formula of
        the reweight module within the mesh error."""
        if self._logz0 is None:
            cache = getattr(self.domain, "_logz0_cache", None)
            if cache is None:
                cache = {}
                self.domain._logz0_cache = cache
            key = self.mass.values.tobytes()
            if key not in cache:
                if self.k == 0:
                    cache[key] = self._bracket()
                else:
                    fresh = MassiveDriftState(self.domain, self.mass, self.dt,
                                              drift_enabled=False)
                    cache[key] = fresh._bracket()
            self._logz0 = cache[key]
        return self._logz0

    def rn_log_weight(self):
        """Change-of-measure log-weight of the current slit configuration.

        Identically 0 for zero mass and exactly 0 at t = 0; unit mean over
        plain SLE4 paths at any fixed capacity time.
        """
        if self.mass.is_zero:
            return 0.0
        self.log_z0()
        return self._bracket() - self._logz0

    def driving_path(self):
        n = self.k
        return DrivingPath(times=np.arange(n + 1) * self.dt,
                           values=np.array(self.w), seed=None)


def msle4_driver(domain, mass, T, dt, seed):
    """Massive SLE4 driver by Euler-Maruyama with a fresh drift solve per step.

    With zero mass the Gaussian increments are consumed identically, so the
    path is bit-for-bit the SLE4 driver of the same seed.
    """
    n = int(round(T / dt))
    rng = np.random.default_rng(seed)
    inc = 2.0 * math.sqrt(dt) * rng.standard_normal(n)
    state = MassiveDriftState(domain, mass, dt, drift_enabled=True)
    for i in range(n):
        state.step(inc[i])
    path = state.driving_path()
    path.seed = int(seed)
    return path


def run_chordal_path(domain, mass, T, dt, seed, drift_enabled,
                     checkpoint_steps=(), observe_cells=(), weight_steps=()):
    """Run one chordal path and collect observables along the way.

    Returns a dict with the driver values, the +-1/2 massive harmonic
    observable at the requested cells and checkpoints (frozen at absorption)
    and the change-of-measure log-weight at the requested steps.
    """
    n = int(round(T / dt))
    rng = np.random.default_rng(seed)
    inc = 2.0 * math.sqrt(dt) * rng.standard_normal(n)
    state = MassiveDriftState(domain, mass, dt, drift_enabled=drift_enabled)
    checkpoint_steps = sorted(checkpoint_steps)
    weight_steps = set(weight_steps)
    obs = []
    weights = {}
    # the observable is tracked every step so that absorbed cells freeze at
    # their true pre-absorption value (the stopped process H_{t ^ tau_z})
    last = state.mharmonic_observable(observe_cells) if observe_cells else None
    if 0 in checkpoint_steps:
        obs.append(last.copy())
    if 0 in weight_steps:
        weights[0] = state.rn_log_weight()
    for i in range(1, n + 1):
        state.step(inc[i - 1])
        if observe_cells:
            vals = state.mharmonic_observable(observe_cells)
            hold = np.isnan(vals)
            vals[hold] = last[hold]
            last = vals
            if i in checkpoint_steps:
                obs.append(last.copy())
        if i in weight_steps:
            weights[i] = state.rn_log_weight()
    return {
        "w": np.array(state.w),
        "observables": np.array(obs) if obs else None,
        "log_weights": weights,
        "state": state,
    }
