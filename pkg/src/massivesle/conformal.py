"""Uniformizing maps onto the upper half-plane with two boundary marks.

The chordal machinery needs a fixed conformal map phi: D -> H sending the
marks a -> 0 and b -> infinity.  Rectangles go through the complex Jacobi
elliptic sn (the rectangle [-K, K] x [0, K'] maps onto H with sn(.; k),
bottom midpoint to 0 and top midpoint to the pole), discs through a Mobius
transformation; both are post-composed with a Mobius map of H fixing the
boundary to place the marks.  Orientation is preserved, so the clockwise
boundary arc from a to b always lands on the negative reals.
"""

from __future__ import annotations

import cmath
import math

import numpy as np
from scipy.optimize import brentq
from scipy.special import ellipj, ellipk

from .errors import UnsupportedUniformizer
from .lattice import Disc, Rectangle


def complex_ellipj(z, m):
    """Jacobi sn, cn, dn at complex argument via the real addition formulas."""
    z = np.asarray(z, dtype=complex)
    x, y = z.real, z.imag
    s, c, d, _ = ellipj(x, m)
    s1, c1, d1, _ = ellipj(y, 1.0 - m)
    den = c1 * c1 + m * (s * s1) ** 2
    sn = (s * d1 + 1j * c * d * s1 * c1) / den
    cn = (c * c1 - 1j * s * d * s1 * d1) / den
    dn = (d * c1 * d1 - 1j * m * s * c * s1) / den
    return sn, cn, dn


class _Mobius:
    """u -> sigma (u - ua) / (u - ub) on H, with ub possibly infinite."""

    def __init__(self, ua, ub):
        self.ua = ua
        self.ub = ub
        if math.isinf(ub):
            self.sigma = 1.0
        else:
            self.sigma = 1.0 if ua > ub else -1.0

    def __call__(self, u):
        if math.isinf(self.ub):
            return self.sigma * (u - self.ua)
        return self.sigma * (u - self.ua) / (u - self.ub)

    def inverse(self, w):
        if math.isinf(self.ub):
            return w / self.sigma + self.ua
        # w = s (u - a)/(u - b)  =>  u = (s a - w b) / (s - w)
        return (self.sigma * self.ua - w * self.ub) / (self.sigma - w)

    def deriv(self, u):
        if math.isinf(self.ub):
            return self.sigma * np.ones_like(u)
        return self.sigma * (self.ua - self.ub) / (u - self.ub) ** 2


class RectangleUniformizer:
    """phi: (0,w) x (0,ht) -> H with phi(a) = 0, phi(b) = infinity."""

    def __init__(self, shape, a, b):
        self.shape = shape
        ratio = 2.0 * shape.height / shape.width

        def f(logm):
            m = math.exp(logm)
            return ellipk(1.0 - m) / ellipk(m) - ratio

        logm = brentq(f, math.log(1e-12), math.log(1.0 - 1e-12), xtol=1e-15)
        self.m = math.exp(logm)
        self.K = float(ellipk(self.m))
        self.Kp = float(ellipk(1.0 - self.m))
        self.scale = 2.0 * self.K / shape.width

        ua = self._sn_boundary(complex(*a))
        ub = self._sn_boundary(complex(*b))
        self.mobius = _Mobius(ua, ub)

    def _zeta(self, z):
        z = np.asarray(z, dtype=complex)
        return (z - 0.5 * self.shape.width) * self.scale

    def _sn_boundary(self, z):
        zeta = complex(self._zeta(z))
        # the pole of sn sits at i K'; treat the top midpoint as infinity
        if abs(zeta - 1j * self.Kp) < 1e-12:
            return math.inf
        sn, _, _ = complex_ellipj(zeta, self.m)
        return float(np.real(sn))

    def to_h(self, z):
        sn, _, _ = complex_ellipj(self._zeta(z), self.m)
        return self.mobius(sn)

    def deriv(self, z):
        zeta = self._zeta(z)
        sn, cn, dn = complex_ellipj(zeta, self.m)
        return self.mobius.deriv(sn) * cn * dn * self.scale

    def from_h(self, w, guess):
        """Invert by complex Newton from ``guess`` (physical coordinates)."""
        u = self.mobius.inverse(w)
        zeta = complex(self._zeta(complex(guess)))
        for _ in range(60):
            sn, cn, dn = complex_ellipj(zeta, self.m)
            dz = (sn - u) / (cn * dn)
            zeta = zeta - dz
            # stay inside the fundamental rectangle of sn
            zeta = complex(min(max(zeta.real, -self.K), self.K),
                           min(max(zeta.imag, 0.0), self.Kp))
            if abs(dz) < 1e-13:
                break
        return complex(zeta) / self.scale + 0.5 * self.shape.width


class DiscUniformizer:
    """phi: disc -> H via a single Mobius map, phi(a) = 0, phi(b) = infinity."""

    def __init__(self, shape, a, b):
        self.a = complex(*a)
        self.b = complex(*b)
        self.center = complex(*shape.center)
        t0 = (self.center - self.a) / (self.center - self.b)
        self.rot = cmath.exp(1j * (0.5 * math.pi - cmath.phase(t0)))

    def to_h(self, z):
        z = np.asarray(z, dtype=complex)
        return self.rot * (z - self.a) / (z - self.b)

    def deriv(self, z):
        z = np.asarray(z, dtype=complex)
        return self.rot * (self.a - self.b) / (z - self.b) ** 2

    def from_h(self, w, guess=None):
        # w = rot (z - a)/(z - b)  =>  z = (rot a - w b)/(rot - w)
        return (self.rot * self.a - w * self.b) / (self.rot - w)


def uniformizer_for(domain):
    """Half-plane uniformizer for a marked domain (rectangle or disc)."""
    if domain.marks is None:
        raise UnsupportedUniformizer("domain has no boundary marks")
    a, b = domain.mark_points()
    if isinstance(domain.shape, Rectangle):
        return RectangleUniformizer(domain.shape, a, b)
    if isinstance(domain.shape, Disc):
        return DiscUniformizer(domain.shape, a, b)
    raise UnsupportedUniformizer(
        f"no half-plane uniformizer for {type(domain.shape).__name__}")
