"""Reduced-form session objects from Poisson-meeting primitives.

For a driver: match probability q, conditional payment pi, time-to-contract
tau. For a rider: match probability qR, wait tauR, and the expected paid
price pbarM. Closed forms cover uniform values with exponential or linear
clocks and all posted variants; everything else goes through adaptive
quadrature.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from numpy.polynomial.legendre import leggauss as _leggauss_uncached
from scipy.integrate import quad
from scipy.optimize import brentq

from .types import (
    DutchExp,
    DutchLinear,
    Mechanism,
    MarketPrimitives,
    PostedBatch,
    PostedImmediate,
    Uniform,
    contact_rates,
    eligibility_time,
    price_path,
)

__all__ = [
    "HazardProfile",
    "hazard_profile",
    "hazard_DA",
    "driver_objects",
    "rider_objects",
    "match_volume",
    "avg_price_DA",
    "ReducedFormBundle",
    "bundle",
]

# below this, delta*T is treated as the flat-path limit
_FLAT_EPS = 1e-8
# below this, a match probability cannot condition a payment
_Q_EPS = 1e-12


@lru_cache(maxsize=8)
def leggauss(n):
    """Gauss-Legendre nodes for the few sizes in use; the eigensolver
    behind node construction dominates bundle time without a cache."""
    x, w = _leggauss_uncached(n)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


@dataclass(frozen=True)
class HazardProfile:
    """Evaluable cumulative hazard H, survival S, and trade hazard h on [0, T]."""

    prim: MarketPrimitives
    mech: Mechanism
    valueDist: object
    muD: float
    knots: tuple[float, ...]  # interior times where h has a kink or jump

    def h(self, t):
        return self.muD * np.asarray(self.valueDist.survival(price_path(self.mech, t)), float)

    def H(self, t):
        return _cum_hazard(self, t)

    def S(self, t):
        return np.exp(-np.asarray(self.H(t), float))


def hazard_profile(prim, mech, valueDist) -> HazardProfile:
    muD, _ = contact_rates(prim)
    knots = []
    if isinstance(mech, (DutchExp, DutchLinear)):
        lo, hi = valueDist.support
        for level in (hi, lo, getattr(mech, "floor", None)):
            if level is None or not math.isfinite(level):
                continue
            tc = eligibility_time(mech, level)
            if 0.0 < tc < prim.T:
                knots.append(tc)
    return HazardProfile(prim, mech, valueDist, muD, tuple(sorted(set(knots))))


def _cum_hazard(prof: HazardProfile, t):
    scalar = np.isscalar(t)
    tt = np.atleast_1d(np.asarray(t, float))
    if np.any(tt < 0) or np.any(tt > prof.prim.T * (1 + 1e-12)):
        raise ValueError("time outside [0, T]")
    mech, vd = prof.mech, prof.valueDist
    if isinstance(mech, (PostedImmediate, PostedBatch)):
        eta = prof.muD * float(vd.survival(mech.pbar))
        out = eta * tt
    elif isinstance(mech, DutchExp) and isinstance(vd, Uniform):
        out = _cum_hazard_exp_uniform(prof.muD, mech, vd, tt)
    elif isinstance(mech, DutchLinear) and isinstance(vd, Uniform):
        out = np.array([_cum_hazard_piecewise_linear(prof, x) for x in tt])
    else:
        out = np.array([_cum_hazard_quad(prof, x) for x in tt])
    return float(out[0]) if scalar else out


def _cum_hazard_exp_uniform(muD, mech, vd, tt):
    """Closed form for p(t) = p0 exp(-delta t) against Uniform[lo, hi] values.

    On the segment where p lies inside the support,
    int mu (hi - p0 e^(-d s)) / (hi - lo) ds has an elementary antiderivative;
    outside, h is 0 (above hi) or mu (below lo).
    """
    lo, hi = vd.support
    width = hi - lo
    p0, d = mech.p0, mech.delta
    if d * np.max(tt) < _FLAT_EPS or d == 0.0:
        return muD * float(vd.survival(p0)) * tt
    t_hi = math.log(p0 / hi) / d if p0 > hi else 0.0
    t_lo = math.log(p0 / lo) / d if (lo > 0 and p0 > lo) else math.inf

    def seg(a, b):
        # integral of (hi - p0 e^(-d s)) ds / width over [a, b]
        if b <= a:
            return 0.0
        return (hi * (b - a) + (p0 / d) * (math.exp(-d * b) - math.exp(-d * a))) / width

    out = np.empty_like(tt)
    for i, t in enumerate(tt):
        mid = seg(min(max(t_hi, 0.0), t), min(t, t_lo))
        tail = max(0.0, t - t_lo) if math.isfinite(t_lo) else 0.0
        out[i] = muD * (mid + tail)
    return out


def _cum_hazard_piecewise_linear(prof, t):
    """Exact trapezoid over kink knots; h is piecewise linear in t for a
    linear clock against uniform values."""
    pts = [0.0] + [k for k in prof.knots if k < t] + [t]
    total = 0.0
    for a, b in zip(pts[:-1], pts[1:]):
        ha, hb = float(prof.h(a)), float(prof.h(b))
        total += 0.5 * (ha + hb) * (b - a)
    return total


def _cum_hazard_quad(prof, t):
    if t == 0.0:
        return 0.0
    pts = [k for k in prof.knots if 0.0 < k < t] or None
    val, err = quad(lambda s: float(prof.h(s)), 0.0, t,
                    points=pts, epsabs=1e-10, epsrel=1e-9, limit=200)
    if err > 1e-8:
        raise RuntimeError(f"hazard quadrature did not converge (error estimate {err:.2e})")
    return val


def hazard_DA(prim, mech, valueDist, t):
    """Cumulative trade hazard of a descending clock at time t."""
    if not isinstance(mech, (DutchExp, DutchLinear)):
        raise TypeError("hazard_DA expects a descending-clock mechanism")
    return hazard_profile(prim, mech, valueDist).H(t)


# ---------------------------------------------------------------------------
# driver-side objects


def _quad_points(prof):
    """Break points for time quadrature: hazard kinks plus the match-time
    quantiles H^-1(k).

    At extreme tightness the survival mass dies in a boundary layer far
    shorter than T; panels cut at fixed cumulative-hazard levels keep
    that layer visible to the quadrature nodes regardless of scale, and
    beyond H = 32 the remaining mass is below every tolerance in use.
    """
    T = prof.prim.T
    pts = set(prof.knots)
    Htot = float(prof.H(T))
    lo = 0.0
    for k in (1.0, 2.0, 4.0, 8.0, 16.0, 32.0):
        if k >= Htot:
            break
        t = brentq(lambda s: float(prof.H(s)) - k, lo, T, xtol=1e-13 * T)
        pts.add(float(t))
        lo = t
    pts = sorted(p for p in pts if 0.0 < p < T)
    return pts or None


def driver_objects(prim, mech, valueDist):
    """(q, pi, tau) for a driver; pi is NaN when q is numerically zero."""
    T, alpha = prim.T, prim.alpha
    muD, _ = contact_rates(prim)
    if isinstance(mech, (PostedImmediate, PostedBatch)):
        eta = muD * float(valueDist.survival(mech.pbar))
        q = -math.expm1(-eta * T)
        pi = (1.0 - alpha) * mech.pbar
        if isinstance(mech, PostedBatch):
            tau = T
        else:
            tau = (q / eta if eta * T > 1e-14 else T) + q * mech.phi
        return q, pi, tau

    prof = hazard_profile(prim, mech, valueDist)
    q = -math.expm1(-prof.H(T))
    pts = _quad_points(prof)
    tau, _ = quad(lambda t: float(prof.S(t)), 0.0, T,
                  points=pts, epsabs=1e-9 * T, epsrel=1e-9, limit=200)
    if q < _Q_EPS:
        return q, math.nan, tau
    paid, _ = quad(lambda t: float(price_path(mech, t)) * float(prof.h(t)) * float(prof.S(t)),
                   0.0, T, points=pts, epsabs=1e-12, epsrel=1e-9, limit=200)
    pi = (1.0 - alpha) / q * paid
    return q, pi, tau


def match_volume(prim, q):
    """Expected matches per session, m = D q."""
    if not 0.0 <= q <= 1.0 + 1e-12:
        raise ValueError("q outside [0, 1]")
    return prim.D * q


def avg_price_DA(prim, mech, valueDist):
    """Hazard-weighted average clock price; lies in [p(T), p0]."""
    if not isinstance(mech, (DutchExp, DutchLinear)):
        raise TypeError("avg_price_DA expects a descending-clock mechanism")
    prof = hazard_profile(prim, mech, valueDist)
    q = -math.expm1(-prof.H(prim.T))
    if q < _Q_EPS:
        return math.nan
    pts = _quad_points(prof)
    paid, _ = quad(lambda t: float(price_path(mech, t)) * float(prof.h(t)) * float(prof.S(t)),
                   0.0, prim.T, points=pts, epsabs=1e-12, epsrel=1e-9, limit=200)
    # int h S dt = q, so the normalizer is free
    return paid / q


# ---------------------------------------------------------------------------
# rider-side objects


def _censored_exp_mean(rate, horizon):
    """E[min(Exp(rate), horizon)]."""
    if rate * horizon < 1e-14:
        return horizon
    return -math.expm1(-rate * horizon) / rate


def _eligibility_times(mech, v, T):
    """Vectorized eligibility_time; values the clock never reaches get T
    (their wait is censored at the horizon anyway)."""
    v = np.asarray(v, float)
    if isinstance(mech, DutchExp):
        if mech.delta == 0.0:
            return np.where(v >= mech.p0, 0.0, T)
        with np.errstate(divide="ignore"):
            tv = np.log(mech.p0 / np.maximum(v, 1e-300)) / mech.delta
        return np.clip(tv, 0.0, T)
    # linear clock: reaches v at (p0 - v)/slope, never drops below the floor
    if mech.slope == 0.0:
        return np.where(v >= mech.p0, 0.0, T)
    tv = np.where(v >= mech.floor, (mech.p0 - v) / mech.slope, T)
    return np.clip(tv, 0.0, T)


def _rider_wait_dutch(prim, mech, valueDist):
    """E over values of the wait: clock reaches v at t_v, then a censored
    exponential at the rider contact rate. Integrated on the quantile scale
    with Gauss-Legendre nodes, split at the eligibility kinks, and refined
    by doubling until stable."""
    _, muR = contact_rates(prim)
    T = prim.T
    pT = float(price_path(mech, T))

    def waits(v):
        tv = _eligibility_times(mech, v, T)
        rem = T - tv
        if muR * T < 1e-14:
            return np.full_like(tv, T)
        cens = -np.expm1(-muR * rem) / muR
        return tv + cens

    u_cuts = sorted({0.0, float(valueDist.cdf(pT)), float(valueDist.cdf(mech.p0)), 1.0})

    def estimate(n):
        total = 0.0
        base_x, base_w = leggauss(n)
        for a, b in zip(u_cuts[:-1], u_cuts[1:]):
            if b - a < 1e-15:
                continue
            u = 0.5 * (b - a) * base_x + 0.5 * (a + b)
            v = np.asarray(valueDist.quantile(u), float)
            w = 0.5 * (b - a) * base_w
            total += float(np.dot(w, waits(v)))
        return total

    est, n = estimate(256), 256
    while n < 4096:
        nxt = estimate(2 * n)
        if abs(nxt - est) <= 1e-8:
            return nxt, False
        est, n = nxt, 2 * n
    return est, True  # slow convergence, surfaced as a bundle flag


def rider_objects(prim, mech, valueDist):
    """(qR, tauR, pbarM) for a rider. qR = D q / R with no depletion
    correction, so it can pass 1 outside the thin-market regime."""
    T = prim.T
    _, muR = contact_rates(prim)
    q, _, _ = driver_objects(prim, mech, valueDist)
    qR = prim.D * q / prim.R

    if isinstance(mech, PostedBatch):
        return qR, T, mech.pbar
    if isinstance(mech, PostedImmediate):
        sbar = float(valueDist.survival(mech.pbar))
        tauR = sbar * _censored_exp_mean(muR, T) + (1.0 - sbar) * T + qR * mech.phi
        return qR, tauR, mech.pbar

    tauR, _slow = _rider_wait_dutch(prim, mech, valueDist)
    return qR, tauR, avg_price_DA(prim, mech, valueDist)


# ---------------------------------------------------------------------------
# the full bundle


@dataclass(frozen=True)
class ReducedFormBundle:
    """All mechanism-specific session objects at one thickness."""

    q: float
    pi: float
    tau: float
    tauR: float
    qR: float
    m: float
    pbarM: float
    flags: tuple[str, ...] = field(default=())

    def __post_init__(self):
        if not -1e-12 <= self.q <= 1.0 + 1e-12:
            raise ValueError("q outside [0, 1]")


def bundle(prim, mech, valueDist) -> ReducedFormBundle:
    q, pi, tau = driver_objects(prim, mech, valueDist)
    flags = []
    if isinstance(mech, (DutchExp, DutchLinear)):
        qR = prim.D * q / prim.R
        tauR, slow = _rider_wait_dutch(prim, mech, valueDist)
        pbarM = avg_price_DA(prim, mech, valueDist) if q >= _Q_EPS else math.nan
        if slow:
            flags.append("rider-quadrature-slow-convergence")
    else:
        qR, tauR, pbarM = rider_objects(prim, mech, valueDist)
    if q < _Q_EPS:
        flags.append("undefined-empty-match-set")
    if qR > 1.0 + 1e-9:
        flags.append("qR-above-one")
    return ReducedFormBundle(q, pi, tau, tauR, qR, match_volume(prim, q), pbarM, tuple(flags))
