"""Entry margins and fixed points of the two-sided participation map.

Masses live in the box [0, Dbar] x [0, Rbar]. Evaluations clamp each
coordinate to a relative floor of 1e-9 so the reduced forms never see a
degenerate market; the solvers report residuals in the clamped metric.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .reduced_forms import ReducedFormBundle, bundle, driver_objects
from .types import EntryPrimitives, MarketPrimitives, Mechanism

_MASS_FLOOR = 1e-9  # relative to the population bound


class ConvergenceError(RuntimeError):
    """Fixed-point iteration exhausted its budget.

    Carries the last iterate and the residual history so a caller can tell
    a limit cycle from slow geometric decay.
    """

    def __init__(self, message: str, last, history: Sequence[float]):
        super().__init__(message)
        self.last = tuple(float(v) for v in last)
        self.history = [float(r) for r in history]


def driver_cutoff(rf: ReducedFormBundle, lam: float) -> float:
    """Cost level at which entry breaks even: expected net pay minus the
    value of time spent waiting.

    An empty match set carries an undefined per-match payment; its
    match-weighted contribution is still exactly zero.
    """
    pay = 0.0 if (rf.q <= 0.0 or math.isnan(rf.pi)) else rf.q * rf.pi
    return pay - lam * rf.tau


def rider_cutoff(rf: ReducedFormBundle, kappa: float) -> float:
    """Value level at which requesting breaks even.

    Infinite when riders never match: no finite value justifies entry.
    """
    if rf.qR <= 0.0 or math.isnan(rf.pbarM):
        return math.inf
    return rf.pbarM + kappa * rf.tauR / rf.qR


@dataclass(frozen=True)
class EntryMapEvaluation:
    """One evaluation of the participation best-response map."""

    cutoffD: float
    cutoffR: float
    phiD: float
    phiR: float


def entry_map(
    prim: MarketPrimitives, mech: Mechanism, entry: EntryPrimitives
) -> EntryMapEvaluation:
    """Best-response masses given the market at prim.D, prim.R.

    Drivers with cost below the cutoff enter, riders with value above
    theirs request; populations are scaled by Dbar and Rbar.
    """
    rf = bundle(prim, mech, entry.valueDist)
    cbar = driver_cutoff(rf, entry.lam)
    vbar = rider_cutoff(rf, entry.kappa)
    phiD = entry.Dbar * float(entry.costDist.cdf(cbar))
    phiR = entry.Rbar * float(entry.valueDist.survival(vbar))
    return EntryMapEvaluation(cutoffD=cbar, cutoffR=vbar, phiD=phiD, phiR=phiR)


def _clamped_map(
    prim: MarketPrimitives,
    mech: Mechanism,
    entry: EntryPrimitives,
    D: float,
    R: float,
) -> EntryMapEvaluation:
    epsD = _MASS_FLOOR * entry.Dbar
    epsR = _MASS_FLOOR * entry.Rbar
    Dc = min(max(D, epsD), entry.Dbar)
    Rc = min(max(R, epsR), entry.Rbar)
    return entry_map(prim.at(D=Dc, R=Rc), mech, entry)


def _driver_phi(
    prim: MarketPrimitives,
    mech: Mechanism,
    entry: EntryPrimitives,
    D: float,
    R: float,
) -> float:
    """Driver best response without the rider-side integrals, which the
    one-sided solver never needs."""
    epsD = _MASS_FLOOR * entry.Dbar
    Dc = min(max(D, epsD), entry.Dbar)
    q, pi, tau = driver_objects(prim.at(D=Dc, R=R), mech, entry.valueDist)
    pay = 0.0 if (q <= 0.0 or math.isnan(pi)) else q * pi
    return entry.Dbar * float(entry.costDist.cdf(pay - entry.lam * tau))


@dataclass(frozen=True)
class EquilibriumResult:
    """A fixed point of the entry map, with solver bookkeeping."""

    Dstar: float
    Rstar: float
    iterations: int
    residual: float
    contractionK: Optional[float] = None


def solve_one_sided(
    prim: MarketPrimitives,
    mech: Mechanism,
    entry: EntryPrimitives,
    grid: int = 33,
) -> EquilibriumResult:
    """Driver-entry equilibrium with the rider mass held at prim.R.

    The driver response phi(D) is decreasing (more drivers thin the
    per-driver market), so phi(D) - D has a single sign change; we verify
    the monotonicity on a coarse grid and then bisect. Corner solutions
    (no entry, full entry) are returned as the clamped endpoints.
    """
    Dbar = entry.Dbar
    eps = _MASS_FLOOR * Dbar

    def phiD(D: float) -> float:
        return _driver_phi(prim, mech, entry, D, prim.R)

    Ds = np.linspace(eps, Dbar, grid)
    vals = np.array([phiD(D) for D in Ds])
    rises = np.diff(vals)
    if np.any(rises > 1e-10 * Dbar):
        i = int(np.argmax(rises))
        raise RuntimeError(
            "driver entry response is not decreasing in the driver mass: "
            f"phi({Ds[i]:.6g})={vals[i]:.6g} rises to "
            f"phi({Ds[i + 1]:.6g})={vals[i + 1]:.6g}; "
            "the bisection bracket is unreliable here"
        )

    iters = 0
    if vals[0] - Ds[0] <= 0.0:
        Dstar = float(Ds[0])  # map points below the floor: no-entry corner
    elif vals[-1] - Ds[-1] >= 0.0:
        Dstar = Dbar  # map points above the cap: full-entry corner
    else:
        lo, hi = float(Ds[0]), Dbar
        while hi - lo > 1e-13 * Dbar and iters < 200:
            mid = 0.5 * (lo + hi)
            if phiD(mid) - mid > 0.0:
                lo = mid
            else:
                hi = mid
            iters += 1
        Dstar = 0.5 * (lo + hi)

    residual = abs(phiD(Dstar) - Dstar)
    interior = Ds[0] < Dstar < Dbar
    if interior and residual > 1e-9 * Dbar:
        raise RuntimeError(
            f"bisection stalled at D={Dstar:.9g} with residual {residual:.3e} "
            f"(tolerance {1e-9 * Dbar:.3e})"
        )
    return EquilibriumResult(Dstar, float(prim.R), iters, float(residual))


def solve_two_sided(
    prim: MarketPrimitives,
    mech: Mechanism,
    entry: EntryPrimitives,
    omega: float = 0.5,
    tol: Optional[float] = None,
    max_iter: int = 100_000,
    start: Optional[Sequence[float]] = None,
    with_contraction: bool = False,
    gridN: int = 6,
) -> EquilibriumResult:
    """Joint driver and rider equilibrium by damped fixed-point iteration.

    x <- (1 - omega) x + omega Phi(x) from the box midpoint, stopping when
    the l1 residual |Phi(x) - x| falls below tol (default 1e-9 of the
    total population). Non-convergence raises ConvergenceError carrying
    the trajectory tail.
    """
    if not 0.0 < omega <= 1.0:
        raise ValueError(f"damping weight must be in (0, 1], got {omega}")
    if tol is None:
        tol = 1e-9 * (entry.Dbar + entry.Rbar)
    x = np.array(
        [0.5 * entry.Dbar, 0.5 * entry.Rbar] if start is None else start, float
    )
    history: list[float] = []
    for it in range(int(max_iter)):
        ev = _clamped_map(prim, mech, entry, x[0], x[1])
        f = np.array([ev.phiD, ev.phiR])
        residual = float(np.abs(f - x).sum())
        history.append(residual)
        if residual <= tol:
            k = contraction_check(prim, mech, entry, gridN) if with_contraction else None
            return EquilibriumResult(float(x[0]), float(x[1]), it, residual, k)
        x = (1.0 - omega) * x + omega * f
    raise ConvergenceError(
        f"no fixed point within {max_iter} damped iterations "
        f"(last residual {history[-1]:.3e}, tolerance {tol:.3e})",
        last=x,
        history=history,
    )


def contraction_check(
    prim: MarketPrimitives,
    mech: Mechanism,
    entry: EntryPrimitives,
    gridN: int = 6,
) -> float:
    """Sup over an interior grid of the l1 operator norm of the map Jacobian.

    Central differences with a 1e-5 relative step at gridN x gridN nodes
    bound * i / (gridN + 1). A value below one certifies the damped
    iteration contracts on the whole box in the l1 metric.
    """

    def F(D: float, R: float) -> np.ndarray:
        ev = _clamped_map(prim, mech, entry, D, R)
        return np.array([ev.phiD, ev.phiR])

    worst = -math.inf
    for i in range(1, gridN + 1):
        for j in range(1, gridN + 1):
            D = entry.Dbar * i / (gridN + 1)
            R = entry.Rbar * j / (gridN + 1)
            hD, hR = 1e-5 * D, 1e-5 * R
            colD = np.abs(F(D + hD, R) - F(D - hD, R)) / (2.0 * hD)
            colR = np.abs(F(D, R + hR) - F(D, R - hR)) / (2.0 * hR)
            worst = max(worst, float(colD.sum()), float(colR.sum()))
    return worst


@dataclass(frozen=True)
class MonotoneIterationResult:
    """Raw (undamped) iteration trace with subsequence diagnostics."""

    points: tuple
    firstStepUp: bool
    evenMonotone: bool
    oddMonotone: bool
    limitD: float
    limitR: float
    iterations: int
    residual: float
    diagnostics: tuple


def _subsequence_monotone(pts: np.ndarray) -> bool:
    """True when the coordinatewise direction never reverses (1e-12 slack)."""
    if len(pts) < 3:
        return True
    steps = np.diff(pts, axis=0)
    slack = 1e-12 * np.maximum(1.0, np.abs(pts[:-1]))
    up = np.all(steps >= -slack)
    down = np.all(steps <= slack)
    return bool(up or down)


def monotone_iteration(
    prim: MarketPrimitives,
    mech: Mechanism,
    entry: EntryPrimitives,
    start: Sequence[float],
    tol: Optional[float] = None,
    max_iter: int = 10_000,
) -> MonotoneIterationResult:
    """Iterate the raw map from a given point, recording every iterate.

    Intended start: a benchmark equilibrium, so the trace shows how the
    alternative mechanism's entry incentives pull both masses. The even
    and odd subsequences of a (locally) monotone map are each monotone;
    a violated flag is reported as a diagnostic, not an error, since a
    decaying oscillation around the limit breaks strict monotonicity in
    its last few steps without invalidating the limit itself.
    """
    if tol is None:
        tol = 1e-12 * (entry.Dbar + entry.Rbar)
    x = np.array(start, float)
    pts = [x.copy()]
    residual = math.inf
    for it in range(int(max_iter)):
        ev = _clamped_map(prim, mech, entry, x[0], x[1])
        f = np.array([ev.phiD, ev.phiR])
        residual = float(np.abs(f - x).sum())
        if residual <= tol:
            break
        x = f
        pts.append(x.copy())
    else:
        raise ConvergenceError(
            f"raw iteration did not settle within {max_iter} steps "
            f"(last residual {residual:.3e})",
            last=x,
            history=[float(np.abs(b - a).sum()) for a, b in zip(pts[:-1], pts[1:])],
        )

    arr = np.array(pts)
    slack = 1e-12 * np.maximum(1.0, np.abs(arr[0]))
    first_up = bool(np.all(arr[1] >= arr[0] - slack)) if len(arr) > 1 else True
    even_ok = _subsequence_monotone(arr[0::2])
    odd_ok = _subsequence_monotone(arr[1::2])
    notes = []
    if not even_ok:
        notes.append("even-index subsequence reverses direction")
    if not odd_ok:
        notes.append("odd-index subsequence reverses direction")
    return MonotoneIterationResult(
        points=tuple(map(tuple, arr)),
        firstStepUp=first_up,
        evenMonotone=even_ok,
        oddMonotone=odd_ok,
        limitD=float(x[0]),
        limitR=float(x[1]),
        iterations=len(pts) - 1,
        residual=residual,
        diagnostics=tuple(notes),
    )


def propagation_check(
    prim: MarketPrimitives,
    mechA: Mechanism,
    mechB: Mechanism,
    entry: EntryPrimitives,
    Rgrid: Optional[Sequence[float]] = None,
) -> bool:
    """Whether mechA's rider cutoff sits below mechB's across rider masses.

    Each mechanism is first solved one-sided at prim.R; the cutoffs are
    then compared at the respective driver equilibria over an R grid
    (default: eight points from Rbar/8 to Rbar). A lower cutoff means
    entry looks weakly better to every marginal rider.
    """
    if Rgrid is None:
        Rgrid = np.linspace(entry.Rbar / 8.0, entry.Rbar, 8)
    eqA = solve_one_sided(prim, mechA, entry)
    eqB = solve_one_sided(prim, mechB, entry)
    for R in Rgrid:
        rfA = bundle(prim.at(D=eqA.Dstar, R=float(R)), mechA, entry.valueDist)
        rfB = bundle(prim.at(D=eqB.Dstar, R=float(R)), mechB, entry.valueDist)
        vA = rider_cutoff(rfA, entry.kappa)
        vB = rider_cutoff(rfB, entry.kappa)
        if math.isinf(vA) and math.isinf(vB):
            continue
        if not vA <= vB + 1e-9:
            return False
    return True
