"""Dominance regime classification and break-even thresholds.

A mechanism comparison reduces to two gaps per market side. Driver side:
earnings gap deltaPi and timing gap deltaTau; the clock dominates the posted
benchmark at waiting cost lam iff lam * deltaTau >= deltaPi. Rider side is
the mirror image in (price advantage A, time-quality gap B).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .reduced_forms import ReducedFormBundle

__all__ = [
    "GapReport",
    "DominanceVerdict",
    "ALL_LAMBDA",
    "FLOOR_THRESHOLD",
    "NEVER_DOMINATES",
    "CEILING_THRESHOLD",
    "gaps_from_bundles",
    "arm_posted_price",
    "classify_driver",
    "classify_rider",
    "dominance_margin",
    "batch_margin",
    "rider_kappa0",
]

ALL_LAMBDA = "AllLambda"
FLOOR_THRESHOLD = "FloorThreshold"
NEVER_DOMINATES = "NeverDominates"
CEILING_THRESHOLD = "CeilingThreshold"

# gaps within this of zero are ties, classified toward weak dominance
_TIE = 1e-12


@dataclass(frozen=True)
class GapReport:
    """Pairwise gaps, benchmark minus clock except where noted.

    deltaPi: earnings gap q_FP pi_FP - q_DA pi_DA.
    deltaTau: timing gap tau_FP - tau_DA (friction included in tau_FP).
    riderA: price advantage pbar_FP - pbar_DA.
    riderB: time-quality gap tauR_FP/qR_FP - tauR_DA/qR_DA.
    """

    deltaPi: float
    deltaTau: float
    riderA: float
    riderB: float

    def __post_init__(self):
        for name in ("deltaPi", "deltaTau", "riderA", "riderB"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")


@dataclass(frozen=True)
class DominanceVerdict:
    case: str
    threshold: float | None
    side: str
    benchmark: str

    def __post_init__(self):
        if self.case in (FLOOR_THRESHOLD, CEILING_THRESHOLD):
            if self.threshold is None or not self.threshold > 0 or not math.isfinite(self.threshold):
                raise ValueError(f"{self.case} needs a positive finite threshold")
        elif self.threshold is not None:
            raise ValueError(f"{self.case} carries no threshold")

    def admits(self, w: float) -> bool:
        """Does the clock dominate at waiting cost w?"""
        if self.case == ALL_LAMBDA:
            return True
        if self.case == NEVER_DOMINATES:
            return False
        if self.case == FLOOR_THRESHOLD:
            return w >= self.threshold
        return w <= self.threshold


def gaps_from_bundles(rfDA: ReducedFormBundle, rfFP: ReducedFormBundle) -> GapReport:
    return GapReport(
        deltaPi=rfFP.q * rfFP.pi - rfDA.q * rfDA.pi,
        deltaTau=rfFP.tau - rfDA.tau,
        riderA=rfFP.pbarM - rfDA.pbarM,
        riderB=rfFP.tauR / rfFP.qR - rfDA.tauR / rfDA.qR,
    )


def arm_posted_price(rho, delta, T):
    """Posted price equating acceptance rates with a clock from p0 = rho:
    pbar = rho (1 - e^(-delta T)) / (delta T), continuous at delta = 0."""
    if not 0 < rho <= 1:
        raise ValueError("rho must lie in (0, 1]")
    if delta < 0 or T <= 0:
        raise ValueError("need delta >= 0 and T > 0")
    if delta * T < 1e-8:
        return rho
    return rho * -math.expm1(-delta * T) / (delta * T)


def _classify(dpi, dtau, side, benchmark):
    # gaps within the tie band count as exactly zero, so boundary rows
    # land in a weak-dominance case instead of a divergent threshold
    p = 0.0 if abs(dpi) <= _TIE else dpi
    t = 0.0 if abs(dtau) <= _TIE else dtau
    if p <= 0.0 and t >= 0.0:
        return DominanceVerdict(ALL_LAMBDA, None, side, benchmark)
    if p > 0.0 and t > 0.0:
        return DominanceVerdict(FLOOR_THRESHOLD, p / t, side, benchmark)
    if p >= 0.0 and t <= 0.0:
        return DominanceVerdict(NEVER_DOMINATES, None, side, benchmark)
    return DominanceVerdict(CEILING_THRESHOLD, p / t, side, benchmark)


def classify_values(dpi, dtau, side="driver", benchmark="immediate"):
    """Four-case verdict straight from scalar gaps; used where only the
    driver-side pair is available (empirical estimates)."""
    return _classify(float(dpi), float(dtau), side, benchmark)


def classify_driver(gaps: GapReport, benchmark: str = "immediate") -> DominanceVerdict:
    """Four-case driver verdict; thresholds in value per minute.

    FloorThreshold: dominance for lam >= threshold. CeilingThreshold: for
    lam <= threshold. Ties within 1e-12 go to the weak-dominance case.
    """
    return _classify(gaps.deltaPi, gaps.deltaTau, "driver", benchmark)


def classify_rider(gaps: GapReport, benchmark: str = "immediate") -> DominanceVerdict:
    """Driver classification applied to (-A, B): the rider prefers the clock
    at waiting cost kappa iff A + kappa B >= 0."""
    return _classify(-gaps.riderA, gaps.riderB, "rider", benchmark)


def dominance_margin(gaps: GapReport, lam: float) -> float:
    """lam * deltaTau - deltaPi; nonnegative iff the clock dominates."""
    return lam * gaps.deltaTau - gaps.deltaPi


def batch_margin(lam, rfDA: ReducedFormBundle, rfFPb: ReducedFormBundle) -> float:
    """Driver margin against the batch benchmark,
    q (pi_DA - pi_FPb) + lam (T - tau_DA); tau_FPb equals T by construction."""
    return rfDA.q * (rfDA.pi - rfFPb.pi) + lam * (rfFPb.tau - rfDA.tau)


def rider_kappa0(rfDA: ReducedFormBundle, rfFPb: ReducedFormBundle, T: float) -> float:
    """Rider break-even waiting cost against batch under rate-matched pricing:
    kappa0 = (pbar_DA - pbar) qR / (T - tauR_DA)."""
    if rfDA.tauR >= T:
        raise ValueError("degenerate: rider wait reaches the horizon")
    return max(0.0, (rfDA.pbarM - rfFPb.pbarM) * rfDA.qR / (T - rfDA.tauR))
