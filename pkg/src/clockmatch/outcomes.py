"""Revenue accounting, clock-speed price bounds, and welfare comparisons.

Welfare levels drop the mechanism-independent constant, so only
differences between mechanisms are meaningful.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .equilibrium import EquilibriumResult, solve_one_sided
from .reduced_forms import ReducedFormBundle, driver_objects
from .types import DutchExp, EntryPrimitives, MarketPrimitives, PostedImmediate

DOMINATES_ALL_S = "DominatesForAllS"
DOMINATES_ABOVE_S = "DominatesAboveThreshold"
DOMINATES_BELOW_S = "DominatesBelowThreshold"
DOMINANCE_FAILS = "DominanceFails"


def revenue(alpha: float, m: float, pbarM: float) -> float:
    """Platform take per session: commission on the value of matches."""
    if m < 0.0:
        raise ValueError(f"match volume must be nonnegative, got {m}")
    return alpha * m * pbarM


@dataclass(frozen=True)
class RevenueReport:
    """Revenue under two mechanisms and its multiplicative split.

    The ratio factors into who shows up (entry), how often they match
    (match rate), and what they pay (price); the product reproduces the
    ratio to float precision.
    """

    revenueA: float
    revenueB: float
    ratio: float
    entryGain: float
    matchRateRatio: float
    priceGain: float

    def __post_init__(self):
        if math.isfinite(self.ratio):
            prod = self.entryGain * self.matchRateRatio * self.priceGain
            if abs(prod - self.ratio) > 1e-9 * max(1.0, abs(self.ratio)):
                raise ValueError(
                    f"factor product {prod:.12g} disagrees with ratio {self.ratio:.12g}"
                )


def revenue_report(
    alpha: float, rfA: ReducedFormBundle, rfB: ReducedFormBundle
) -> RevenueReport:
    """Compare per-session revenue of two evaluated markets.

    Entry masses are recovered from each bundle as m/q; with both bundles
    at the same driver mass the entry factor is exactly one.
    """
    revA = revenue(alpha, rfA.m, rfA.pbarM)
    revB = revenue(alpha, rfB.m, rfB.pbarM)
    if revB <= 0.0 or rfA.q <= 0.0 or rfB.q <= 0.0:
        nan = math.nan
        return RevenueReport(revA, revB, nan, nan, nan, nan)
    entry = (rfA.m / rfA.q) / (rfB.m / rfB.q)
    rate = rfA.q / rfB.q
    price = rfA.pbarM / rfB.pbarM
    return RevenueReport(revA, revB, revA / revB, entry, rate, price)


def slow_clock_bound(p0: float, pbar: float, T: float) -> float:
    """Largest decay rate under which the Dutch average price stays at or
    above the posted benchmark: the clock must not fall below pbar by T."""
    if not (p0 > 0.0 and pbar > 0.0 and T > 0.0):
        raise ValueError("price levels and horizon must be positive")
    if p0 < pbar:
        raise ValueError(
            f"start price {p0} sits below the benchmark {pbar}: "
            "no decay rate preserves price dominance"
        )
    return math.log(p0 / pbar) / T


@dataclass(frozen=True)
class WelfareReport:
    """Welfare at a pair of markets, with the difference split into a
    volume term and the two waiting-cost terms.

    sStar is the break-even match surplus at fixed thickness, sStarStar
    its equilibrium counterpart; whichever does not apply is NaN.
    """

    welfareA: float
    welfareB: float
    volumeTerm: float
    driverWaitTerm: float
    riderWaitTerm: float
    deltaWait: float
    sStar: float
    sStarStar: float
    verdict: str

    @property
    def delta(self) -> float:
        return self.welfareA - self.welfareB

    def __post_init__(self):
        decomp = self.volumeTerm + self.driverWaitTerm + self.riderWaitTerm
        # delta subtracts two W levels, so the identity only holds to
        # roundoff in their magnitude, not in the (possibly tiny) difference
        scale = max(1.0, abs(self.welfareA), abs(self.welfareB))
        if abs(decomp - self.delta) > 1e-9 * scale:
            raise ValueError(
                f"decomposition {decomp:.12g} disagrees with "
                f"welfare difference {self.delta:.12g}"
            )


def _verdict(dm: float, dwait: float) -> str:
    if dwait <= 0.0 and dm >= 0.0:
        return DOMINATES_ALL_S
    if dm > 0.0 and dwait > 0.0:
        return DOMINATES_ABOVE_S
    if dm < 0.0 and dwait <= 0.0:
        return DOMINATES_BELOW_S
    return DOMINANCE_FAILS


def _welfare_report(
    mA, DA, RA, tauA, tauRA, mB, DB, RB, tauB, tauRB, lam, kappa, s, equilibrium
):
    wA = s * mA - lam * DA * tauA - kappa * RA * tauRA
    wB = s * mB - lam * DB * tauB - kappa * RB * tauRB
    dm = mA - mB
    dwait = lam * (DA * tauA - DB * tauB) + kappa * (RA * tauRA - RB * tauRB)
    verdict = _verdict(dm, dwait)
    threshold = dwait / dm if dm != 0.0 else math.nan
    return WelfareReport(
        welfareA=wA,
        welfareB=wB,
        volumeTerm=s * dm,
        driverWaitTerm=-lam * (DA * tauA - DB * tauB),
        riderWaitTerm=-kappa * (RA * tauRA - RB * tauRB),
        deltaWait=dwait,
        sStar=math.nan if equilibrium else threshold,
        sStarStar=threshold if equilibrium else math.nan,
        verdict=verdict,
    )


def welfare_fixed(
    rfA: ReducedFormBundle,
    rfB: ReducedFormBundle,
    prim: MarketPrimitives,
    lam: float,
    kappa: float,
    s: float,
) -> WelfareReport:
    """Welfare comparison holding both sides' masses at prim.D, prim.R.

    W = m s - lam D tau - kappa R tauR for each mechanism; the bundles
    must have been evaluated at the same market.
    """
    return _welfare_report(
        rfA.m, prim.D, prim.R, rfA.tau, rfA.tauR,
        rfB.m, prim.D, prim.R, rfB.tau, rfB.tauR,
        lam, kappa, s, equilibrium=False,
    )


def welfare_equilibrium(
    eqA: EquilibriumResult,
    eqB: EquilibriumResult,
    rfA: ReducedFormBundle,
    rfB: ReducedFormBundle,
    lam: float,
    kappa: float,
    s: float,
) -> WelfareReport:
    """Welfare comparison at each mechanism's own entry equilibrium.

    The bundles must be evaluated at the corresponding equilibrium
    masses. A positive waiting-cost change can only be offset by volume,
    so the verdict is a threshold in s when volume moves the right way
    and an outright failure when it does not.
    """
    return _welfare_report(
        rfA.m, eqA.Dstar, eqA.Rstar, rfA.tau, rfA.tauR,
        rfB.m, eqB.Dstar, eqB.Rstar, rfB.tau, rfB.tauR,
        lam, kappa, s, equilibrium=True,
    )


def revenue_frontier(
    prim: MarketPrimitives,
    entry: EntryPrimitives,
    pbar: float,
    delta: float,
    phi: float = 0.0,
    lo: float = 0.90,
    hi: float = 1.40,
    tol: float = 1e-4,
) -> float:
    """Start-price ratio p0/pbar at which Dutch revenue overtakes the
    posted benchmark, with driver entry solved one-sided at each point.

    Bisection over the ratio; raises if revenue does not cross inside
    [lo, hi], since then no frontier exists in the scanned band.
    """

    def rev_gap(ratio: float) -> float:
        da = DutchExp(p0=ratio * pbar, delta=delta)
        fp = PostedImmediate(pbar=pbar, phi=phi)
        gap = []
        for mech in (da, fp):
            eq = solve_one_sided(prim, mech, entry)
            q, pi, _ = driver_objects(prim.at(D=eq.Dstar), mech, entry.valueDist)
            # net payment is (1 - alpha) of the mean accepted price
            gap.append(revenue(prim.alpha, eq.Dstar * q, pi / (1.0 - prim.alpha)))
        return gap[0] - gap[1]

    g_lo, g_hi = rev_gap(lo), rev_gap(hi)
    if not (g_lo < 0.0 <= g_hi):
        raise RuntimeError(
            f"no revenue crossing for pbar={pbar} in ratio band [{lo}, {hi}]: "
            f"gap({lo})={g_lo:.4g}, gap({hi})={g_hi:.4g}"
        )
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if rev_gap(mid) < 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
