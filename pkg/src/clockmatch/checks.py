"""Self-contained invariant suites behind the verify command.

Each check exercises one cross-module identity on randomized inputs and
reports its worst observed error against a per-check default tolerance.
A caller-supplied tolerance replaces the default; a passing check that
needed the looser tolerance says so rather than passing silently.
"""

from __future__ import annotations

import math
import tempfile
import zlib
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Optional, Tuple

import numpy as np
from scipy.integrate import quad

from .dominance import arm_posted_price, classify_values, gaps_from_bundles
from .estimators import ThicknessBin, estimate_bundle
from .outcomes import revenue_report, welfare_fixed
from .reduced_forms import bundle, hazard_DA, hazard_profile
from .simulator import SimConfig, read_session_csv, run_session, write_session_csv
from .types import (
    DutchExp,
    DutchLinear,
    Lognormal,
    MarketPrimitives,
    PostedBatch,
    PostedImmediate,
    Uniform,
    price_path,
)

__all__ = ["CheckResult", "CHECK_NAMES", "run_checks", "format_report"]

_U01 = Uniform(0.0, 1.0)


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    maxErr: float
    tol: float
    defaultTol: float
    detail: str

    @property
    def slackNoted(self) -> bool:
        return self.passed and self.tol > self.defaultTol

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        out = f"{status}  {self.name:32s} max err {self.maxErr:.3e}  tol {self.tol:.1e}"
        if self.slackNoted:
            out += f"  [slack noted: default tol {self.defaultTol:.1e}]"
        if self.detail:
            out += f"  ({self.detail})"
        return out


def _rand_market(rng) -> MarketPrimitives:
    return MarketPrimitives(
        A=rng.uniform(0.3, 0.8),
        beta=rng.uniform(0.3, 0.7),
        T=rng.uniform(10.0, 40.0),
        alpha=rng.uniform(0.0, 0.3),
        D=1.0,
        R=rng.uniform(0.3, 3.0),
    )


def _rand_clock(rng):
    if rng.random() < 0.5:
        return DutchExp(p0=rng.uniform(0.3, 0.95), delta=rng.uniform(0.005, 0.1))
    p0 = rng.uniform(0.4, 0.95)
    floor = rng.uniform(0.05, 0.9) * p0
    slope = (p0 - floor) / rng.uniform(0.3, 2.0) / 10.0
    return DutchLinear(p0=p0, slope=slope, floor=floor)


def _small_sim(mech, sessions: int = 3, D: int = 15, R: int = 15) -> SimConfig:
    return SimConfig(
        D=D, R=R, horizon=10.0, mu=6.0,
        mechanism=mech,
        valueDist=Lognormal(2.5, 0.35), costDist=Lognormal(1.8, 0.40),
        alpha=0.20, phi=0.0, sessionsPerCell=sessions, baseSeed=77,
    )


def _check_price_path_bounds(rng) -> Tuple[float, str]:
    """Clock paths never rise, respect their floor, and sandwich the
    average transaction price between the final and starting price."""
    err = 0.0
    for _ in range(300):
        mech = _rand_clock(rng)
        tt = np.linspace(0.0, 40.0, 200)
        pp = price_path(mech, tt)
        err = max(err, float(np.max(np.diff(pp))), 0.0)
        if isinstance(mech, DutchLinear):
            err = max(err, float(mech.floor - pp.min()))
    for _ in range(40):
        prim = _rand_market(rng)
        mech = _rand_clock(rng)
        rf = bundle(prim, mech, _U01)
        if not math.isfinite(rf.pbarM):
            continue
        pT = float(price_path(mech, prim.T))
        p0 = float(price_path(mech, 0.0))
        err = max(err, pT - rf.pbarM, rf.pbarM - p0)
    return err, "300 paths, 40 price sandwiches"


def _check_match_hazard_identity(rng) -> Tuple[float, str]:
    """Closed-form cumulative hazard agrees with direct integration of
    the instantaneous hazard, hence q = 1 - exp(-H(T))."""
    err = 0.0
    for _ in range(30):
        prim = _rand_market(rng)
        mech = DutchExp(p0=rng.uniform(0.3, 0.95), delta=rng.uniform(0.005, 0.1))
        prof = hazard_profile(prim, mech, _U01)
        Hq, _ = quad(lambda t: float(prof.h(t)), 0.0, prim.T,
                     points=list(prof.knots) or None, limit=200)
        Hc = float(hazard_DA(prim, mech, _U01, prim.T))
        err = max(err, abs(Hq - Hc) / max(1.0, abs(Hc)))
        rf = bundle(prim, mech, _U01)
        err = max(err, abs(rf.q - -math.expm1(-Hc)))
    return err, "30 hazard integrations"


def _check_earnings_price_identity(rng) -> Tuple[float, str]:
    """Driver earnings per match and the rider-paid price differ by
    exactly the commission factor."""
    err = 0.0
    n = 0
    for _ in range(25):
        prim = _rand_market(rng)
        mech = _rand_clock(rng)
        rf = bundle(prim, mech, _U01)
        if not math.isfinite(rf.pbarM):
            continue
        err = max(err, abs(rf.pi - (1.0 - prim.alpha) * rf.pbarM))
        n += 1
    return err, f"{n} mechanism evaluations"


def _check_payment_reconciliation(rng, flipSign: bool = False) -> Tuple[float, str]:
    """Every executed contract pays the driver (1 - alpha) times the
    rider-paid price; checked pairwise on simulated sessions."""
    factorSign = 1.0 if flipSign else -1.0
    err = 0.0
    matches = 0
    for mech in (DutchLinear(20.0, 1.5, 2.0), PostedImmediate(10.0, 1.0), PostedBatch(10.0)):
        cfg = _small_sim(mech)
        for k in range(cfg.sessionsPerCell):
            rec = run_session(cfg, mech, k, sessionId=k)
            pays = np.sort(rec.driverPay[rec.driverMatched])
            prices = np.sort(rec.riderPrice[rec.riderMatched])
            factor = 1.0 + factorSign * cfg.alpha
            if len(pays):
                err = max(err, float(np.max(np.abs(pays - factor * prices))))
            matches += len(pays)
    return err, f"{matches} contracts across 9 sessions"


def _check_batch_timing(rng) -> Tuple[float, str]:
    """Deferred clearing pins every contract time to the horizon, both in
    the reduced forms and in simulation; clock contracts never exceed it."""
    err = 0.0
    for _ in range(20):
        prim = _rand_market(rng)
        rf = bundle(prim, PostedBatch(pbar=rng.uniform(0.2, 0.8)), _U01)
        err = max(err, abs(rf.tau - prim.T), abs(rf.tauR - prim.T))
    cfgB = _small_sim(PostedBatch(10.0))
    recB = run_session(cfgB, cfgB.mechanism, 0)
    if recB.m:
        err = max(err, float(np.max(np.abs(recB.driverTau[recB.driverMatched] - cfgB.horizon))))
    da = DutchLinear(20.0, 1.5, 2.0)
    cfgD = _small_sim(da)
    recD = run_session(cfgD, da, 0)
    if recD.m:
        err = max(err, float(np.max(recD.driverTau[recD.driverMatched]) - cfgD.horizon))
    return err, "20 reduced forms + 2 sessions"


def _check_crn_replay(rng) -> Tuple[float, str]:
    """Identical seed keys replay identical exogenous draws, and the
    draws do not depend on the mechanism being simulated."""
    mismatches = 0.0
    da = DutchLinear(20.0, 1.5, 2.0)
    cfg = _small_sim(da)
    a = run_session(cfg, da, 3)
    b = run_session(cfg, da, 3)
    fp = run_session(replace(cfg, mechanism=PostedBatch(10.0)), PostedBatch(10.0), 3)
    for x, y in ((a.values, b.values), (a.costs, b.costs)):
        if not np.array_equal(x, y):
            mismatches += 1.0
    for x, y in ((a.values, fp.values), (a.costs, fp.costs)):
        if not np.array_equal(x, y):
            mismatches += 1.0
    c = run_session(cfg, da, 4)
    if np.array_equal(a.values, c.values):
        mismatches += 1.0
    return mismatches, "replay, cross-mechanism, distinct-key"


def _check_classifier_margin(rng) -> Tuple[float, str]:
    """The four-case verdict admits a waiting cost exactly when the
    linear margin is nonnegative."""
    bad = 0.0
    tested = 0
    for _ in range(400):
        dpi = rng.normal()
        dtau = rng.normal()
        if abs(dpi) < 1e-10 or abs(dtau) < 1e-10:
            continue
        v = classify_values(dpi, dtau)
        for lam in np.linspace(0.001, 5.0, 23):
            if v.threshold is not None and abs(lam - v.threshold) < 1e-6:
                continue
            if v.admits(lam) != (lam * dtau - dpi >= 0.0):
                bad += 1.0
            tested += 1
    return bad, f"{tested} (gap, lam) points"


def _check_arm_parity(rng) -> Tuple[float, str]:
    """Rate-matched posted pricing equalizes match probability with the
    clock it was tuned to."""
    err = 0.0
    for _ in range(40):
        prim = _rand_market(rng)
        rho = rng.uniform(0.3, 0.95)
        delta = rng.uniform(0.005, 0.1)
        rfDA = bundle(prim, DutchExp(p0=rho, delta=delta), _U01)
        pb = arm_posted_price(rho, delta, prim.T)
        rfB = bundle(prim, PostedBatch(pbar=pb), _U01)
        err = max(err, abs(rfDA.q - rfB.q))
    return err, "40 rate-matched pairs"


def _check_revenue_decomposition(rng) -> Tuple[float, str]:
    """Revenue ratio factors exactly into entry, match-rate, and price
    gains."""
    err = 0.0
    n = 0
    for _ in range(20):
        prim = _rand_market(rng)
        rfA = bundle(prim, _rand_clock(rng), _U01)
        rfB = bundle(prim, PostedImmediate(pbar=rng.uniform(0.3, 0.7), phi=0.0), _U01)
        rep = revenue_report(prim.alpha, rfA, rfB)
        if not math.isfinite(rep.ratio):
            continue
        prod = rep.entryGain * rep.matchRateRatio * rep.priceGain
        err = max(err, abs(prod - rep.ratio) / max(1.0, abs(rep.ratio)))
        n += 1
    return err, f"{n} mechanism pairs"


def _check_welfare_decomposition(rng) -> Tuple[float, str]:
    """Welfare difference equals volume term plus both waiting terms, and
    the stored break-even surplus zeroes it."""
    err = 0.0
    for _ in range(20):
        prim = _rand_market(rng).at(D=80.0, R=80.0 * rng.uniform(0.5, 2.0))
        rfA = bundle(prim, _rand_clock(rng), _U01)
        rfB = bundle(prim, PostedImmediate(pbar=rng.uniform(0.3, 0.7), phi=0.0), _U01)
        lam, kappa, s = rng.uniform(0.0, 0.1, size=3)
        rep = welfare_fixed(rfA, rfB, prim, lam, kappa, s)
        decomp = rep.volumeTerm + rep.driverWaitTerm + rep.riderWaitTerm
        wscale = max(1.0, abs(rep.welfareA), abs(rep.welfareB))
        err = max(err, abs(decomp - rep.delta) / wscale)
        if math.isfinite(rep.sStar) and rfA.m != rfB.m:
            repAt = welfare_fixed(rfA, rfB, prim, lam, kappa, rep.sStar)
            zeroAt = repAt.volumeTerm + repAt.driverWaitTerm + repAt.riderWaitTerm
            wscale = max(1.0, abs(repAt.welfareA), abs(repAt.welfareB))
            err = max(err, abs(zeroAt) / wscale)
    return err, "20 market pairs"


def _check_estimate_roundtrip(rng) -> Tuple[float, str]:
    """Estimates recomputed from an exported session log equal the
    in-memory estimates bit for bit."""
    da = DutchLinear(20.0, 1.5, 2.0)
    cfg = _small_sim(da, sessions=2, D=10, R=12)
    recs = [run_session(cfg, da, k, sessionId=k) for k in range(2)]
    bin_ = ThicknessBin(D=10, R=12, members=tuple(("DA", r.sessionId) for r in recs))
    direct = estimate_bundle(recs, bin_, mechanism="DA", nboot=60)
    with tempfile.TemporaryDirectory() as td:
        path = Path(td) / "sessions.csv"
        write_session_csv(recs, path)
        loaded = read_session_csv(path)
    fromCsv = estimate_bundle(loaded, bin_, mechanism="DA", nboot=60)
    bad = 0.0
    for field in (
        "q", "q_se", "pi", "pi_se", "tau", "tau_se", "tauR", "tauR_se",
        "qR", "qR_se", "m", "m_se", "pbar", "pbar_se",
        "drivers", "riders", "matches", "nSessions",
    ):
        x, y = getattr(direct, field), getattr(fromCsv, field)
        same = (x == y) or (isinstance(x, float) and math.isnan(x) and math.isnan(y))
        if not same:
            bad += 1.0
    return bad, "18 estimate fields compared exactly"


@dataclass(frozen=True)
class _Spec:
    name: str
    defaultTol: float
    fn: Callable


_SPECS = (
    _Spec("price-path-bounds", 1e-9, _check_price_path_bounds),
    _Spec("match-hazard-identity", 1e-6, _check_match_hazard_identity),
    _Spec("earnings-price-identity", 1e-12, _check_earnings_price_identity),
    _Spec("payment-reconciliation", 1e-9, _check_payment_reconciliation),
    _Spec("batch-timing", 1e-9, _check_batch_timing),
    _Spec("crn-replay", 0.0, _check_crn_replay),
    _Spec("classifier-margin-consistency", 0.0, _check_classifier_margin),
    _Spec("arm-match-parity", 1e-8, _check_arm_parity),
    _Spec("revenue-decomposition", 1e-9, _check_revenue_decomposition),
    _Spec("welfare-decomposition", 1e-8, _check_welfare_decomposition),
    _Spec("estimate-roundtrip", 0.0, _check_estimate_roundtrip),
)

CHECK_NAMES = tuple(s.name for s in _SPECS)


def run_checks(
    seed: int = 0,
    tol: Optional[float] = None,
    flipPaymentSign: bool = False,
) -> list:
    """Run every suite; a tol argument overrides each suite's default."""
    results = []
    for spec in _SPECS:
        rng = np.random.default_rng([seed, zlib.crc32(spec.name.encode())])
        if spec.name == "payment-reconciliation":
            err, detail = spec.fn(rng, flipSign=flipPaymentSign)
        else:
            err, detail = spec.fn(rng)
        effective = spec.defaultTol if tol is None else tol
        results.append(CheckResult(
            name=spec.name,
            passed=err <= effective,
            maxErr=err,
            tol=effective,
            defaultTol=spec.defaultTol,
            detail=detail,
        ))
    return results


def format_report(results) -> str:
    lines = [r.line() for r in results]
    nfail = sum(not r.passed for r in results)
    lines.append(
        f"{len(results) - nfail}/{len(results)} suites passed"
        + (f", {nfail} FAILED" if nfail else "")
    )
    return "\n".join(lines)
