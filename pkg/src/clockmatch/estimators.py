"""Measurement-protocol estimators over simulated session logs.

Everything is a ratio of session sums, so estimates recomputed from an
exported log equal the in-memory ones bit for bit. Uncertainty comes
from a session bootstrap (resampling whole sessions preserves the
within-session dependence between matches, waits, and payments).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .dominance import DominanceVerdict, classify_values
from .simulator import SessionRecord

_MECH_KEY = {"DA": 0, "FPimm": 1, "FPbatch": 2}

FLAG_ZERO_MATCHED = "zero-matched-denominator"
FLAG_BOOT_DEGENERATE = "bootstrap-degenerate-resamples"


@dataclass(frozen=True)
class ThicknessBin:
    """Sessions grouped at a target market size.

    Exact-rule bins admit only sessions at precisely (D, R); window-rule
    bins admit the nearest target within +-window relative in each
    coordinate, which keeps bins disjoint.
    """

    D: float
    R: float
    rule: str = "exact"
    window: float = 0.10
    members: tuple = ()  # (mechTag, sessionId) pairs

    def ids(self, mechTag: str) -> tuple:
        return tuple(sid for tag, sid in self.members if tag == mechTag)


def make_bins(
    records: Sequence[SessionRecord],
    targets: Sequence[tuple],
    rule: str = "exact",
    window: float = 0.10,
) -> list:
    """Assign sessions to target cells.

    With the window rule each session goes to its nearest target (in
    relative max-coordinate distance) and must fall inside the declared
    window; sessions matching no target are dropped.
    """
    if rule not in ("exact", "window"):
        raise ValueError(f"unknown binning rule {rule!r}")
    assigned = {t: [] for t in targets}
    for rec in records:
        if rule == "exact":
            key = (rec.D, rec.R)
            if key in assigned:
                assigned[key].append((rec.mechTag, rec.sessionId))
            continue
        dist = [
            max(abs(rec.D - tD) / tD, abs(rec.R - tR) / tR) for tD, tR in targets
        ]
        best = int(np.argmin(dist))
        if dist[best] <= window:
            assigned[targets[best]].append((rec.mechTag, rec.sessionId))
    return [
        ThicknessBin(D=tD, R=tR, rule=rule, window=window, members=tuple(assigned[(tD, tR)]))
        for tD, tR in targets
    ]


@dataclass(frozen=True)
class EstimatedBundle:
    """Ratio estimates for one (bin, mechanism) with bootstrap SEs."""

    mechTag: str
    D: float
    R: float
    q: float
    q_se: float
    pi: float
    pi_se: float
    tau: float
    tau_se: float
    tauR: float
    tauR_se: float
    qR: float
    qR_se: float
    m: float
    m_se: float
    pbar: float
    pbar_se: float
    drivers: int
    riders: int
    matches: int
    nSessions: int
    flags: tuple = ()

    @property
    def pay(self) -> float:
        """Expected driver payoff q*pi, zero when nothing matched."""
        return 0.0 if self.matches == 0 else self.q * self.pi


def _session_sums(rec: SessionRecord):
    return (
        rec.D,
        rec.R,
        rec.m,
        float(rec.driverTau.sum()),
        float(rec.riderTau.sum()),
        float(rec.driverPay.sum()),
        float(rec.riderPrice.sum()),
    )


def _ratios(cols):
    drv, rid, m, tauD, tauR, pay, price = cols
    with np.errstate(invalid="ignore", divide="ignore"):
        q = m / drv
        tau = tauD / drv
        qR = m / rid
        tr = tauR / rid
        pi = np.where(m > 0, pay / np.where(m > 0, m, 1), np.nan)
        pbar = np.where(m > 0, price / np.where(m > 0, m, 1), np.nan)
    return q, pi, tau, tr, qR, pbar


def estimate_bundle(
    records: Sequence[SessionRecord],
    bin: ThicknessBin,
    mechanism: Optional[str] = None,
    nboot: int = 1000,
    bootSeed: int = 2718,
) -> EstimatedBundle:
    """Ratio estimators over the bin's sessions of one mechanism.

    All quantities are sums over sessions divided by the matching
    denominator sum; a bin with no matched agent gets NaN payment and
    price estimates plus an explicit flag rather than a silent 0/0.
    """
    tags = {tag for tag, _ in bin.members}
    if mechanism is None:
        if len(tags) != 1:
            raise ValueError(f"bin holds mechanisms {sorted(tags)}; pick one")
        mechanism = tags.pop()
    wanted = set(bin.ids(mechanism))
    if not wanted:
        raise ValueError(f"bin at ({bin.D}, {bin.R}) has no {mechanism} sessions")
    sessions = [r for r in records if r.mechTag == mechanism and r.sessionId in wanted]
    if len(sessions) != len(wanted):
        raise ValueError("bin refers to session ids missing from the records")

    per = np.array([_session_sums(r) for r in sessions], float)  # (n, 7)
    totals = per.sum(axis=0)
    q, pi, tau, tauR, qR, pbar = (float(v) for v in _ratios(totals))
    n = len(sessions)
    matches = int(totals[2])

    key = _MECH_KEY.get(mechanism, 9)
    rng = np.random.default_rng(
        np.random.SeedSequence(bootSeed, spawn_key=(int(bin.D), int(bin.R), key))
    )
    idx = rng.integers(0, n, size=(nboot, n))
    boot = per[idx].sum(axis=1)  # (nboot, 7)
    bq, bpi, btau, btauR, bqR, bpbar = _ratios(boot.T)
    bm = per[idx, 2].mean(axis=1)

    flags = []
    if matches == 0:
        flags.append(FLAG_ZERO_MATCHED)
    degenerate = bool(np.isnan(bpi).any())
    if degenerate and matches > 0:
        flags.append(FLAG_BOOT_DEGENERATE)

    def se(arr):
        arr = np.asarray(arr, float)
        good = arr[~np.isnan(arr)]
        if len(good) < 2:
            return math.nan
        return float(np.std(good, ddof=1))

    return EstimatedBundle(
        mechTag=mechanism, D=bin.D, R=bin.R,
        q=q, q_se=se(bq), pi=pi, pi_se=se(bpi),
        tau=tau, tau_se=se(btau), tauR=tauR, tauR_se=se(btauR),
        qR=qR, qR_se=se(bqR), m=matches / n, m_se=se(bm),
        pbar=pbar, pbar_se=se(bpbar),
        drivers=int(totals[0]), riders=int(totals[1]),
        matches=matches, nSessions=n, flags=tuple(flags),
    )


@dataclass(frozen=True)
class DominanceTestReport:
    """Empirical clock-vs-posted margins over a waiting-cost grid."""

    lams: tuple
    margins: tuple
    dominates: tuple
    deltaPi: float
    deltaTau: float


def dominance_test(
    bundleDA: EstimatedBundle,
    bundleFP: EstimatedBundle,
    lam,
) -> DominanceTestReport:
    """Evaluate lam*(tau_FP - tau_DA) >= pay_FP - pay_DA per lam.

    Accepts a scalar or a grid of waiting costs; the margin is positive
    when the clock's timing advantage outweighs any payment shortfall.
    """
    lams = np.atleast_1d(np.asarray(lam, float))
    dpi = bundleFP.pay - bundleDA.pay
    dtau = bundleFP.tau - bundleDA.tau
    margins = lams * dtau - dpi
    return DominanceTestReport(
        lams=tuple(float(v) for v in lams),
        margins=tuple(float(v) for v in margins),
        dominates=tuple(bool(v >= 0.0) for v in margins),
        deltaPi=float(dpi),
        deltaTau=float(dtau),
    )


@dataclass(frozen=True)
class LambdaStarReport:
    """Empirical break-even waiting cost with its four-case verdict."""

    deltaPi: float
    deltaTau: float
    verdict: DominanceVerdict

    @property
    def display(self) -> str:
        case = self.verdict.case
        if case == "AllLambda":
            return "<0"
        if case == "NeverDominates":
            return "---"
        if case == "FloorThreshold":
            return f"{self.verdict.threshold:.6g}"
        return f"<={self.verdict.threshold:.6g}"


def lambda_star_hat(
    bundleDA: EstimatedBundle, bundleFP: EstimatedBundle
) -> LambdaStarReport:
    """Four-case classification of the estimated payment and timing gaps."""
    dpi = bundleFP.pay - bundleDA.pay
    dtau = bundleFP.tau - bundleDA.tau
    return LambdaStarReport(
        deltaPi=dpi, deltaTau=dtau, verdict=classify_values(dpi, dtau)
    )


@dataclass(frozen=True)
class MonotonicityReport:
    """Sign tests on entry payoff and match volume across a driver grid."""

    Ds: tuple
    cbars: tuple
    ms: tuple
    cbarDiffs: tuple
    mDiffs: tuple
    cbarCIs: tuple
    mCIs: tuple
    cbarVerdict: str  # decreasing expected
    mVerdict: str     # increasing expected


def _overall(diffs, want_sign, scale):
    tie = 1e-12 * max(1.0, scale)
    signs = [0 if abs(d) <= tie else (1 if d > 0 else -1) for d in diffs]
    if any(s == -want_sign for s in signs):
        return "fail"
    if all(s == want_sign for s in signs):
        return "pass"
    return "inconclusive"


def monotonicity_test(
    records: Sequence[SessionRecord],
    bins: Sequence[ThicknessBin],
    mechanism: str,
    lam: float,
    nboot: int = 200,
    bootSeed: int = 31415,
) -> MonotonicityReport:
    """Check the estimated entry payoff falls and volume rises in D.

    Bins must share the rider target and differ in the driver target;
    confidence intervals for the successive differences come from
    resampling sessions independently within each bin. Records, not
    bundles, are required because the payoff is a nonlinear function of
    several ratios and its uncertainty is only available by resampling.
    """
    ordered = sorted(bins, key=lambda b: b.D)
    if len(ordered) < 3:
        raise ValueError("need at least three driver bins")
    if len({b.R for b in ordered}) != 1:
        raise ValueError("driver-grid test requires a common rider target")

    per_bin = []
    for b in ordered:
        wanted = set(b.ids(mechanism))
        sess = [r for r in records if r.mechTag == mechanism and r.sessionId in wanted]
        if not sess:
            raise ValueError(f"bin at ({b.D}, {b.R}) has no {mechanism} sessions")
        per_bin.append(np.array([_session_sums(r) for r in sess], float))

    def stats(per):
        tot = per.sum(axis=0)
        q, pi, tau, _, _, _ = _ratios(tot)
        pay = 0.0 if tot[2] == 0 else float(q) * float(pi)
        return pay - lam * float(tau), float(tot[2]) / len(per)

    points = [stats(p) for p in per_bin]
    cbars = [c for c, _ in points]
    ms = [m for _, m in points]
    cdiffs = list(np.diff(cbars))
    mdiffs = list(np.diff(ms))

    rng = np.random.default_rng(
        np.random.SeedSequence(bootSeed, spawn_key=(_MECH_KEY.get(mechanism, 9),))
    )
    boot_c = np.empty((nboot, len(ordered)))
    boot_m = np.empty((nboot, len(ordered)))
    for bi, per in enumerate(per_bin):
        n = len(per)
        idx = rng.integers(0, n, size=(nboot, n))
        for r in range(nboot):
            boot_c[r, bi], boot_m[r, bi] = stats(per[idx[r]])
    c_ci = [
        tuple(np.percentile(boot_c[:, i + 1] - boot_c[:, i], [2.5, 97.5]))
        for i in range(len(ordered) - 1)
    ]
    m_ci = [
        tuple(np.percentile(boot_m[:, i + 1] - boot_m[:, i], [2.5, 97.5]))
        for i in range(len(ordered) - 1)
    ]

    scale_c = max(abs(c) for c in cbars)
    scale_m = max(ms)
    return MonotonicityReport(
        Ds=tuple(b.D for b in ordered),
        cbars=tuple(cbars), ms=tuple(ms),
        cbarDiffs=tuple(cdiffs), mDiffs=tuple(mdiffs),
        cbarCIs=tuple(c_ci), mCIs=tuple(m_ci),
        cbarVerdict=_overall(cdiffs, -1, scale_c),
        mVerdict=_overall(mdiffs, 1, scale_m),
    )


# -- estimate CSV -------------------------------------------------------

ESTIMATE_HEADER = [
    "mechanism", "D", "R", "q", "q_se", "pi", "pi_se",
    "tau", "tau_se", "tauR", "tauR_se", "m", "pbar", "flags",
]


def write_estimates_csv(bundles: Iterable[EstimatedBundle], path, fmt: str = "%.6g") -> None:
    def f(x):
        return "nan" if math.isnan(x) else fmt % x

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(ESTIMATE_HEADER)
        for b in bundles:
            w.writerow([
                b.mechTag, f(b.D), f(b.R), f(b.q), f(b.q_se), f(b.pi), f(b.pi_se),
                f(b.tau), f(b.tau_se), f(b.tauR), f(b.tauR_se), f(b.m), f(b.pbar),
                ";".join(b.flags),
            ])
