"""Statistical machinery shared by the verification suite.

All routines are pure functions of in-memory batches and deterministic given
their inputs.  Verdict thresholds are explicit in every report; batteries of
checks apply a Bonferroni-adjusted threshold so the family-wise false-alarm
rate stays at the configured level.  Final reductions use exactly rounded
summation (math.fsum) so verdicts are stable across platforms.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict
from typing import Optional

import numpy as np
from scipy.special import erfc, ndtri
from scipy.stats import ks_1samp, ks_2samp

from .errors import MeshMismatch, TooFewSamples
from .reweight import log_sum_exp


@dataclass
class EstimateReport:
    name: str
    value: float
    stderr: float
    n_effective: float
    z_scores: list = field(default_factory=list)
    threshold: float = 3.0
    verdict: bool = True
    seed: Optional[int] = None
    config_hash: Optional[str] = None
    extra: dict = field(default_factory=dict)

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text):
        return cls(**json.loads(text))


def z_threshold(n_tests, alpha=None):
    """Bonferroni-adjusted two-sided z threshold for a battery of checks.

    ``alpha`` defaults to the family-wise rate of a single 3-SE test, so one
    check keeps the plain threshold 3.
    """
    if alpha is None:
        alpha = 2.0 * 0.0013498980316300933  # 2 Phi(-3)
    if n_tests <= 1:
        return 3.0
    return float(-ndtri(alpha / (2.0 * n_tests)))


def mean_ci(samples, log_weights=None, name="mean", threshold=3.0):
    """Self-normalized mean with delta-method standard error and ESS."""
    x = np.asarray(samples, dtype=float)
    if x.size < 2:
        raise TooFewSamples("mean_ci needs at least two samples")
    if log_weights is None:
        mean = math.fsum(x) / x.size
        se = math.sqrt(math.fsum((x - mean) ** 2) / (x.size - 1) / x.size)
        ess = float(x.size)
    else:
        lw = np.asarray(log_weights, dtype=float)
        w = np.exp(lw - log_sum_exp(lw))
        mean = math.fsum(w * x)
        se = math.sqrt(math.fsum((w * (x - mean)) ** 2))
        ess = 1.0 / math.fsum(w * w)
    return EstimateReport(name=name, value=mean, stderr=se, n_effective=ess,
                          threshold=threshold)


def weighted_mean_var(x, log_weights=None):
    """Mean and variance under self-normalized weights, with delta-method SEs.

    Returns (mean, se_mean, var, se_var, ess).  The variance SE uses the
    influence function of m2 - mean^2, valid for the unweighted case too.
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    if n < 2:
        raise TooFewSamples("need at least two samples")
    if log_weights is None:
        w = np.full(n, 1.0 / n)
        ess = float(n)
    else:
        lw = np.asarray(log_weights, dtype=float)
        w = np.exp(lw - log_sum_exp(lw))
        ess = 1.0 / math.fsum(w * w)
    mean = math.fsum(w * x)
    m2 = math.fsum(w * x * x)
    var = m2 - mean * mean
    se_mean = math.sqrt(math.fsum((w * (x - mean)) ** 2))
    infl = (x * x - m2) - 2.0 * mean * (x - mean)
    se_var = math.sqrt(math.fsum((w * infl) ** 2))
    return mean, se_mean, var, se_var, ess


def two_sample_z(a_value, a_se, b_value, b_se):
    """z-score of a difference with independent standard errors."""
    return (a_value - b_value) / math.hypot(a_se, b_se)


def martingale_test(observables, name="martingale", alpha=None, threshold=None):
    """Test that per-gap increments of path observables have mean zero.

    ``observables`` has shape (paths, checkpoints); each column gap yields a
    z-score mean(dH)/SE(dH); the battery passes when every |z| stays below the
    Bonferroni-adjusted threshold.
    """
    h = np.asarray(observables, dtype=float)
    if h.ndim != 2 or h.shape[0] < 2 or h.shape[1] < 2:
        raise TooFewSamples("martingale_test needs >= 2 paths and >= 2 checkpoints")
    diffs = np.diff(h, axis=1)
    zs = []
    for g in range(diffs.shape[1]):
        d = diffs[:, g]
        se = d.std(ddof=1) / math.sqrt(d.size)
        zs.append(float(d.mean() / se) if se > 0 else 0.0)
    thr = threshold if threshold is not None else z_threshold(len(zs), alpha)
    verdict = all(abs(z) <= thr for z in zs)
    worst = max(zs, key=abs)
    return EstimateReport(name=name, value=worst, stderr=1.0,
                          n_effective=float(h.shape[0]), z_scores=zs,
                          threshold=thr, verdict=verdict)


def ks_report(samples, cdf=None, other=None, name="ks", p_threshold=0.01):
    """Kolmogorov-Smirnov test against an exact CDF or a second sample.

    Small batches (n < 50) use the exact null distribution.
    """
    x = np.asarray(samples, dtype=float)
    method = "exact" if x.size < 50 else "auto"
    if cdf is not None:
        res = ks_1samp(x, cdf, method=method)
    elif other is not None:
        res = ks_2samp(x, np.asarray(other, dtype=float))
    else:
        raise TooFewSamples("ks_report needs a cdf or a second sample")
    return EstimateReport(name=name, value=float(res.statistic),
                          stderr=float(res.pvalue), n_effective=float(x.size),
                          threshold=p_threshold, verdict=bool(res.pvalue > p_threshold),
                          extra={"pvalue": float(res.pvalue)})


# ---------------------------------------------------------------------------
# 1D Brownian motion exit-time oracle (hitting of {-a, a} from 0)


def bm_exit_time_cdf(t, a=math.pi):
    """P(tau_{-a,a} <= t) for standard 1D Brownian motion started at 0.

    Large-time theta series P(tau > t) = (4/pi) sum (-1)^k/(2k+1)
    exp(-(2k+1)^2 pi^2 t / (8 a^2)); small times use the reflection series
    P(tau <= t) = 2 sum (-1)^k erfc((2k+1) a / sqrt(2 t)).
    """
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    small = (t > 0) & (t < a * a)
    big = t >= a * a
    if np.any(small):
        ts = t[small]
        acc = np.zeros_like(ts)
        for k in range(12):
            acc += (-1.0) ** k * 2.0 * erfc((2 * k + 1) * a / np.sqrt(2.0 * ts))
        out[small] = acc
    if np.any(big):
        tb = t[big]
        acc = np.zeros_like(tb)
        for k in range(64):
            acc += ((-1.0) ** k / (2 * k + 1)) * np.exp(
                -((2 * k + 1) ** 2) * math.pi ** 2 * tb / (8.0 * a * a))
        out[big] = 1.0 - (4.0 / math.pi) * acc
    return np.clip(out, 0.0, 1.0) if out.ndim else float(np.clip(out, 0.0, 1.0))


def sample_bm_exit_times(n, rng, a=math.pi):
    """Exact draws of tau_{-a,a} by inverting the CDF (bisection)."""
    u = rng.uniform(size=n)
    lo = np.full(n, 1e-9)
    hi = np.full(n, 60.0 * a * a)
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        below = bm_exit_time_cdf(mid, a) < u
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# conformal covariance of the massive Green function


def conformal_covariance_green(domain, scale, m2, pair_count=24, seed=7,
                               name="green_conformal_covariance",
                               tolerance_per_h=None):
    """Check G^m_D(z, w) = G^{m/s^2}_{sD}(sz, sw) on a dilated rectangle.

    Both domains are discretized at the same absolute mesh, so the scaled
    one is relatively refined; values agree within an O(h) allowance.
    """
    from .lattice import Rectangle, build_domain, assemble_operator, constant_mass

    if not isinstance(domain.shape, Rectangle):
        raise MeshMismatch("dilation check implemented for rectangles")
    h = domain.h
    if scale != int(scale) or scale < 1:
        raise MeshMismatch("integer dilation required for cell alignment")
    big = build_domain(Rectangle(domain.shape.width * scale,
                                 domain.shape.height * scale), h)
    op_small = assemble_operator(domain, constant_mass(domain, m2))
    op_big = assemble_operator(big, constant_mass(big, m2 / scale ** 2))
    g_small = op_small.dense_inverse()
    g_big = op_big.dense_inverse()

    rng = np.random.default_rng(seed)
    dist = domain.interior_distance()
    bulk = np.flatnonzero(dist >= 3 * h)
    zs = rng.choice(bulk, size=min(pair_count, bulk.size), replace=False)
    ws = rng.choice(bulk, size=min(pair_count, bulk.size), replace=False)
    devs = []
    vals = []
    s = int(scale)
    for z, w in zip(zs, ws):
        if z == w:
            continue
        bz = big.cell_index(domain.ix[z] * s, domain.iy[z] * s)
        bw = big.cell_index(domain.ix[w] * s, domain.iy[w] * s)
        if bz < 0 or bw < 0:
            raise MeshMismatch("scaled cell does not align with the fine grid")
        devs.append(abs(g_small[z, w] - g_big[bz, bw]))
        vals.append(abs(g_small[z, w]))
    max_dev = max(devs)
    allowance = (tolerance_per_h if tolerance_per_h is not None else 0.6) * h
    return EstimateReport(name=name, value=float(max_dev), stderr=0.0,
                          n_effective=float(len(devs)), threshold=allowance,
                          verdict=bool(max_dev <= allowance),
                          extra={"mean_value": float(np.mean(vals)), "h": h})
