"""Event-driven session simulator with common random numbers.

Sessions run in raw price units on a tick clock. All exogenous draw
streams derive from (config, cell, session index) and never from the
mechanism, so mechanisms can be compared on identical randomness.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

import numpy as np

from .types import (
    Distribution,
    DutchExp,
    DutchLinear,
    EntryPrimitives,
    Mechanism,
    PostedBatch,
    PostedImmediate,
    price_path,
)

MU_AGGREGATE = "aggregate"
MU_PER_DRIVER = "per-driver"


def mech_tag(mech: Mechanism) -> str:
    if isinstance(mech, (DutchExp, DutchLinear)):
        return "DA"
    if isinstance(mech, PostedImmediate):
        return "FPimm"
    if isinstance(mech, PostedBatch):
        return "FPbatch"
    raise TypeError(f"unknown mechanism {type(mech).__name__}")


@dataclass(frozen=True)
class SimConfig:
    """One simulated market cell.

    mu is the session meeting rate in meetings per tick, flat over the
    horizon regardless of how many agents remain active. Under
    muPolicy="aggregate" (the default) mu is the total rate; under
    "per-driver" the total rate is mu * D, which holds per-driver
    contact rates constant across a thickness grid instead of diluting
    them in the larger cells.
    """

    D: int
    R: int
    horizon: float
    mu: float
    mechanism: Mechanism
    valueDist: Distribution
    costDist: Distribution
    alpha: float
    phi: float = 0.0
    sessionsPerCell: int = 5
    baseSeed: int = 0
    muPolicy: str = MU_AGGREGATE

    def __post_init__(self):
        if self.D < 1 or self.R < 1:
            raise ValueError(f"pool sizes must be at least 1, got D={self.D}, R={self.R}")
        if not self.mu > 0.0:
            raise ValueError(f"meeting rate must be positive, got {self.mu}")
        if not self.horizon > 0.0:
            raise ValueError(f"horizon must be positive, got {self.horizon}")
        if not 0.0 <= self.alpha < 1.0:
            raise ValueError(f"commission must lie in [0, 1), got {self.alpha}")
        if self.phi < 0.0:
            raise ValueError(f"mean friction delay must be nonnegative, got {self.phi}")
        if self.sessionsPerCell < 1:
            raise ValueError("need at least one session per cell")
        if self.muPolicy not in (MU_AGGREGATE, MU_PER_DRIVER):
            raise ValueError(f"unknown mu policy {self.muPolicy!r}")

    @property
    def sessionRate(self) -> float:
        return self.mu * self.D if self.muPolicy == MU_PER_DRIVER else self.mu


def _friction_mean(cfg: SimConfig, mech: Mechanism) -> float:
    # an immediate posted mechanism carries its own friction; everyone
    # else inherits the config-level delay
    if isinstance(mech, PostedImmediate):
        return mech.phi
    return cfg.phi


def draw_streams(cfg: SimConfig, D: int, R: int, k: int):
    """Exogenous randomness for session k of cell (D, R).

    Five independent child streams in fixed order: rider values, driver
    costs, meeting times, pair-selection uniforms, friction draws (unit
    mean, scaled by the mechanism's delay at use). Mechanism identity
    never enters, which is the whole common-random-numbers contract.
    """
    ss = np.random.SeedSequence(cfg.baseSeed, spawn_key=(D, R, k))
    sv, sc, sa, sp, sf = [np.random.Generator(np.random.PCG64(c)) for c in ss.spawn(5)]
    values = np.asarray(cfg.valueDist.sample(sv, size=R), float)
    costs = np.asarray(cfg.costDist.sample(sc, size=D), float)
    rate = cfg.mu * D if cfg.muPolicy == MU_PER_DRIVER else cfg.mu
    # block-drawn inter-meeting gaps; block sizing depends on cfg alone
    block = max(32, int(1.25 * rate * cfg.horizon))
    gaps = sa.exponential(1.0 / rate, size=block)
    while gaps.sum() <= cfg.horizon:
        gaps = np.concatenate([gaps, sa.exponential(1.0 / rate, size=block)])
    times = np.cumsum(gaps)
    times = times[times <= cfg.horizon]
    n = len(times)
    pair_u = sp.random(size=(n, 2))
    frictions = sf.exponential(1.0, size=n)
    return values, costs, times, pair_u, frictions


def _price_fn(mech: Mechanism):
    # scalar fast path for the event loop; price_path stays the public API
    if isinstance(mech, DutchExp):
        p0, d = mech.p0, mech.delta
        return lambda t: p0 * math.exp(-d * t)
    if isinstance(mech, DutchLinear):
        p0, s, lo = mech.p0, mech.slope, mech.floor
        return lambda t: max(p0 - s * t, lo)
    pbar = mech.pbar
    return lambda t: pbar


@dataclass(frozen=True)
class SessionRecord:
    """Everything observable from one simulated session."""

    sessionId: int
    mechTag: str
    D: int
    R: int
    seedKey: tuple
    alpha: float
    phiEff: float
    values: np.ndarray
    costs: np.ndarray
    driverMatched: np.ndarray
    driverTau: np.ndarray
    driverPay: np.ndarray
    riderMatched: np.ndarray
    riderTau: np.ndarray
    riderPrice: np.ndarray
    m: int

    def __post_init__(self):
        nd = int(self.driverMatched.sum())
        nr = int(self.riderMatched.sum())
        if not (self.m == nd == nr):
            raise ValueError(f"match accounting broken: m={self.m}, drivers={nd}, riders={nr}")
        pays = self.driverPay[self.driverMatched]
        prices = np.sort(self.riderPrice[self.riderMatched])
        if not np.allclose(np.sort(pays), (1.0 - self.alpha) * prices, rtol=0.0, atol=1e-12):
            raise ValueError("payments do not reconcile with prices at the commission rate")
        horizon = float(np.max(self.driverTau, initial=0.0))  # unmatched sit at the horizon
        if self.mechTag == "FPbatch" and self.m > 0:
            matched = self.driverTau[self.driverMatched]
            if np.any(matched < horizon - 1e-9) and self.phiEff == 0.0:
                raise ValueError("batch execution before the horizon")


def run_session(cfg: SimConfig, mech: Mechanism, k: int, sessionId: int = 0) -> SessionRecord:
    """Simulate one session of cfg's cell under the given mechanism.

    Meetings arrive at the session rate; each proposes a uniformly drawn
    active rider-driver pair at the current mechanism price. The match
    forms when the rider's value covers the price and the driver's cost
    is covered net of commission; both agents then leave the pool.
    Execution lags acceptance by an exponential friction delay when the
    mechanism carries one, and batch contracts execute at the horizon.
    Unmatched agents exit at the horizon.
    """
    values, costs, times, pair_u, frictions = draw_streams(cfg, cfg.D, cfg.R, k)
    T = cfg.horizon
    phi = _friction_mean(cfg, mech)
    batch = isinstance(mech, PostedBatch)
    price = _price_fn(mech)
    keep = 1.0 - cfg.alpha

    vals = values.tolist()
    csts = costs.tolist()
    tms = times.tolist()
    pu = pair_u.tolist()
    fr = frictions.tolist()

    act_r = list(range(cfg.R))
    act_d = list(range(cfg.D))
    d_tau = np.full(cfg.D, T)
    r_tau = np.full(cfg.R, T)
    d_pay = np.zeros(cfg.D)
    r_price = np.zeros(cfg.R)
    d_hit = np.zeros(cfg.D, bool)
    r_hit = np.zeros(cfg.R, bool)

    for idx, t in enumerate(tms):
        if not act_r or not act_d:
            break
        u = pu[idx]
        i = act_r[int(u[0] * len(act_r))]
        j = act_d[int(u[1] * len(act_d))]
        p = price(t)
        if vals[i] >= p and keep * p >= csts[j]:
            xi = phi * fr[idx] if phi > 0.0 else 0.0
            texec = (T + xi) if batch else (t + xi)
            d_hit[j] = r_hit[i] = True
            d_tau[j] = r_tau[i] = texec
            d_pay[j] = keep * p
            r_price[i] = p
            act_r.remove(i)
            act_d.remove(j)

    return SessionRecord(
        sessionId=sessionId,
        mechTag=mech_tag(mech),
        D=cfg.D,
        R=cfg.R,
        seedKey=(cfg.baseSeed, cfg.D, cfg.R, k),
        alpha=cfg.alpha,
        phiEff=phi,
        values=values,
        costs=costs,
        driverMatched=d_hit,
        driverTau=d_tau,
        driverPay=d_pay,
        riderMatched=r_hit,
        riderTau=r_tau,
        riderPrice=r_price,
        m=int(d_hit.sum()),
    )


def run_grid(
    cfg: SimConfig,
    thicknessGrid: Sequence[tuple],
    mechanisms: Sequence[Mechanism],
) -> list:
    """All sessions for a thickness grid, every mechanism on shared draws.

    Session ids are assigned in (cell, session, mechanism) order and are
    unique across the run; the exogenous streams for a given (cell,
    session) pair are identical across mechanisms.
    """
    if not thicknessGrid:
        raise ValueError("thickness grid must be non-empty")
    records = []
    sid = 0
    for D, R in thicknessGrid:
        cell = replace(cfg, D=int(D), R=int(R))
        for k in range(cfg.sessionsPerCell):
            for mech in mechanisms:
                records.append(run_session(cell, mech, k, sessionId=sid))
                sid += 1
    return records


@dataclass(frozen=True)
class EmpiricalEquilibrium:
    """Outer-loop fixed point of simulated entry, in agents."""

    Dstar: float
    Rstar: float
    iterations: int
    converged: bool
    trajectory: tuple


def simulate_equilibrium(
    cfg: SimConfig,
    entry: EntryPrimitives,
    omega: float = 0.5,
    max_outer: int = 50,
) -> EmpiricalEquilibrium:
    """Damped outer loop mapping simulated entry payoffs back to masses.

    Each iterate simulates cfg.sessionsPerCell sessions at the rounded
    current masses, estimates the entry cutoffs from pooled session
    ratios, and updates both masses toward the implied best responses.
    Draws are keyed by (cell, session) as everywhere else, so revisiting
    a cell reuses identical randomness and the loop iterates a
    deterministic map. Stops once both masses move by less than one
    agent; a run that exhausts max_outer is reported, not raised.
    """
    D = 0.5 * entry.Dbar
    R = 0.5 * entry.Rbar
    traj = [(D, R)]
    converged = False
    it = 0
    for it in range(1, max_outer + 1):
        Di, Ri = max(1, round(D)), max(1, round(R))
        cell = replace(cfg, D=Di, R=Ri)
        drivers = matches = riders = 0
        tau_d = tau_r = pay = price = 0.0
        for k in range(cfg.sessionsPerCell):
            rec = run_session(cell, cfg.mechanism, k, sessionId=k)
            drivers += rec.D
            riders += rec.R
            matches += rec.m
            tau_d += float(rec.driverTau.sum())
            tau_r += float(rec.riderTau.sum())
            pay += float(rec.driverPay.sum())
            price += float(rec.riderPrice.sum())
        q = matches / drivers
        qR = matches / riders
        tau = tau_d / drivers
        tauR = tau_r / riders
        pay_per_match = pay / matches if matches else 0.0
        cbar = q * pay_per_match - entry.lam * tau
        if matches and qR > 0.0:
            vbar = price / matches + entry.kappa * tauR / qR
        else:
            vbar = math.inf
        newD = entry.Dbar * float(entry.costDist.cdf(cbar))
        newR = entry.Rbar * float(entry.valueDist.survival(vbar))
        nextD = (1.0 - omega) * D + omega * newD
        nextR = (1.0 - omega) * R + omega * newR
        stepD, stepR = abs(nextD - D), abs(nextR - R)
        D, R = nextD, nextR
        traj.append((D, R))
        if stepD < 1.0 and stepR < 1.0:
            converged = True
            break
    return EmpiricalEquilibrium(
        Dstar=D, Rstar=R, iterations=it, converged=converged, trajectory=tuple(traj)
    )


# -- CSV logs -----------------------------------------------------------

_AGENT_HEADER = [
    "session_id", "mechanism", "side", "agent_id",
    "value_or_cost", "matched", "tau", "price_or_payment",
]
_SUMMARY_HEADER = [
    "session_id", "mechanism", "D", "R", "m",
    "tau_driver_total", "tau_rider_total", "payment_total", "price_total",
]


def write_session_csv(records: Iterable[SessionRecord], path) -> None:
    """One row per agent per session; floats via repr so a round-trip
    reproduces estimates bit for bit."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(_AGENT_HEADER)
        for rec in records:
            for i in range(rec.R):
                w.writerow([
                    rec.sessionId, rec.mechTag, "rider", i,
                    repr(float(rec.values[i])), int(rec.riderMatched[i]),
                    repr(float(rec.riderTau[i])), repr(float(rec.riderPrice[i])),
                ])
            for j in range(rec.D):
                w.writerow([
                    rec.sessionId, rec.mechTag, "driver", j,
                    repr(float(rec.costs[j])), int(rec.driverMatched[j]),
                    repr(float(rec.driverTau[j])), repr(float(rec.driverPay[j])),
                ])


def write_summary_csv(records: Iterable[SessionRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(_SUMMARY_HEADER)
        for rec in records:
            w.writerow([
                rec.sessionId, rec.mechTag, rec.D, rec.R, rec.m,
                repr(float(rec.driverTau.sum())), repr(float(rec.riderTau.sum())),
                repr(float(rec.driverPay.sum())), repr(float(rec.riderPrice.sum())),
            ])


def read_session_csv(path) -> list:
    """Rebuild session records from an agent-level log.

    The seed key is not recoverable from the log; reconstructed records
    carry an empty one. Alpha is inferred from the first matched pair
    and defaults to zero for all-unmatched logs.
    """
    rows = {}
    order = []
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        if header != _AGENT_HEADER:
            raise ValueError(f"unexpected session log header: {header}")
        for row in rd:
            key = (int(row[0]), row[1])
            if key not in rows:
                rows[key] = {"rider": [], "driver": []}
                order.append(key)
            rows[key][row[2]].append(row)

    records = []
    for key in order:
        sid, tag = key
        riders = sorted(rows[key]["rider"], key=lambda r: int(r[3]))
        drivers = sorted(rows[key]["driver"], key=lambda r: int(r[3]))
        values = np.array([float(r[4]) for r in riders])
        r_hit = np.array([bool(int(r[5])) for r in riders])
        r_tau = np.array([float(r[6]) for r in riders])
        r_price = np.array([float(r[7]) for r in riders])
        costs = np.array([float(r[4]) for r in drivers])
        d_hit = np.array([bool(int(r[5])) for r in drivers])
        d_tau = np.array([float(r[6]) for r in drivers])
        d_pay = np.array([float(r[7]) for r in drivers])
        alpha = 0.0
        if d_hit.any():
            pay = float(np.sort(d_pay[d_hit])[0])
            prc = float(np.sort(r_price[r_hit])[0])
            alpha = 0.0 if prc == 0.0 else 1.0 - pay / prc
        records.append(SessionRecord(
            sessionId=sid, mechTag=tag, D=len(drivers), R=len(riders),
            seedKey=(), alpha=alpha, phiEff=math.nan,
            values=values, costs=costs,
            driverMatched=d_hit, driverTau=d_tau, driverPay=d_pay,
            riderMatched=r_hit, riderTau=r_tau, riderPrice=r_price,
            m=int(d_hit.sum()),
        ))
    return records
