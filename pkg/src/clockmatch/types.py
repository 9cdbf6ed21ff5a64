"""Shared primitives: distributions, market parameters, mechanism descriptions.

Everything here is immutable and pure. Prices and values on the analytic side
are in units of the top rider value (normalized to 1 by the default uniform
value distribution); the simulator keeps its own raw units.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr, ndtri

__all__ = [
    "Uniform",
    "Lognormal",
    "PointMass",
    "Distribution",
    "MarketPrimitives",
    "DutchExp",
    "DutchLinear",
    "PostedImmediate",
    "PostedBatch",
    "Mechanism",
    "price_path",
    "eligibility_time",
    "contact_rates",
    "EntryPrimitives",
]


# ---------------------------------------------------------------------------
# distributions


@dataclass(frozen=True)
class Uniform:
    """Uniform law on [lo, hi]."""

    lo: float
    hi: float

    def __post_init__(self):
        if not self.hi > self.lo:
            raise ValueError(f"need hi > lo, got [{self.lo}, {self.hi}]")

    def cdf(self, x):
        return np.clip((np.asarray(x, float) - self.lo) / (self.hi - self.lo), 0.0, 1.0)

    def survival(self, x):
        return 1.0 - self.cdf(x)

    def density(self, x):
        x = np.asarray(x, float)
        inside = (x >= self.lo) & (x <= self.hi)
        return np.where(inside, 1.0 / (self.hi - self.lo), 0.0)

    def quantile(self, u):
        u = np.asarray(u, float)
        if np.any((u < 0) | (u > 1)):
            raise ValueError("quantile argument outside [0, 1]")
        return self.lo + u * (self.hi - self.lo)

    def mean(self):
        return 0.5 * (self.lo + self.hi)

    def mean_above(self, x):
        """E[X | X >= x]; x above the support returns the endpoint hi."""
        x = min(max(x, self.lo), self.hi)
        return 0.5 * (x + self.hi)

    def mean_below(self, x):
        x = min(max(x, self.lo), self.hi)
        return 0.5 * (self.lo + x)

    def sample(self, rng, size=None):
        return rng.uniform(self.lo, self.hi, size=size)

    @property
    def support(self):
        return (self.lo, self.hi)


@dataclass(frozen=True)
class Lognormal:
    """Lognormal law, mu/sigma on the log scale."""

    mu: float
    sigma: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")

    def _z(self, x):
        x = np.asarray(x, float)
        with np.errstate(divide="ignore"):
            return np.where(x > 0, (np.log(np.maximum(x, 1e-300)) - self.mu) / self.sigma, -np.inf)

    def cdf(self, x):
        return np.where(np.asarray(x, float) > 0, ndtr(self._z(x)), 0.0)

    def survival(self, x):
        return 1.0 - self.cdf(x)

    def density(self, x):
        x = np.asarray(x, float)
        z = self._z(x)
        out = np.zeros_like(x, dtype=float)
        pos = x > 0
        out = np.where(
            pos,
            np.exp(-0.5 * np.where(pos, z, 0.0) ** 2)
            / (np.maximum(x, 1e-300) * self.sigma * math.sqrt(2 * math.pi)),
            0.0,
        )
        return out

    def quantile(self, u):
        u = np.asarray(u, float)
        if np.any((u < 0) | (u > 1)):
            raise ValueError("quantile argument outside [0, 1]")
        return np.exp(self.mu + self.sigma * ndtri(u))

    def mean(self):
        return math.exp(self.mu + 0.5 * self.sigma**2)

    def mean_above(self, x):
        if x <= 0:
            return self.mean()
        z = (math.log(x) - self.mu) / self.sigma
        tail = ndtr(-z)
        if tail < 1e-300:
            return x
        return self.mean() * ndtr(self.sigma - z) / tail

    def mean_below(self, x):
        if x <= 0:
            return 0.0
        z = (math.log(x) - self.mu) / self.sigma
        head = ndtr(z)
        if head < 1e-300:
            return 0.0
        return self.mean() * (1.0 - ndtr(self.sigma - z)) / head

    def sample(self, rng, size=None):
        return rng.lognormal(self.mu, self.sigma, size=size)

    @property
    def support(self):
        return (0.0, math.inf)


@dataclass(frozen=True)
class PointMass:
    """Degenerate law at a single atom."""

    x: float

    def cdf(self, t):
        return np.where(np.asarray(t, float) >= self.x, 1.0, 0.0)

    def survival(self, t):
        return 1.0 - self.cdf(t)

    def density(self, t):
        raise ValueError("point mass has no Lebesgue density")

    def quantile(self, u):
        u = np.asarray(u, float)
        if np.any((u < 0) | (u > 1)):
            raise ValueError("quantile argument outside [0, 1]")
        return np.full_like(u, self.x, dtype=float)

    def mean(self):
        return self.x

    def mean_above(self, t):
        return self.x

    def mean_below(self, t):
        return self.x

    def sample(self, rng, size=None):
        if size is None:
            return self.x
        return np.full(size, self.x, dtype=float)

    @property
    def support(self):
        return (self.x, self.x)


Distribution = Uniform | Lognormal | PointMass


# ---------------------------------------------------------------------------
# market primitives


@dataclass(frozen=True)
class MarketPrimitives:
    """Meeting technology and session parameters.

    A: matching efficiency, beta: meeting elasticity in (0,1), T: session
    length in minutes, alpha: commission in (0,1), D/R: active masses.
    """

    A: float
    beta: float
    T: float
    alpha: float
    D: float
    R: float

    def __post_init__(self):
        if self.A <= 0:
            raise ValueError("A must be positive")
        if not 0 < self.beta < 1:
            raise ValueError("beta must lie in (0, 1)")
        if self.T <= 0:
            raise ValueError("T must be positive")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if self.D <= 0 or self.R <= 0:
            raise ValueError("masses must be positive")

    @property
    def theta(self):
        return self.R / self.D

    def at(self, D=None, R=None):
        """Same primitives at a different thickness."""
        return MarketPrimitives(
            self.A, self.beta, self.T, self.alpha,
            self.D if D is None else D,
            self.R if R is None else R,
        )


def contact_rates(prim: MarketPrimitives):
    """Per-driver and per-rider meeting rates (muD, muR).

    muD = A theta^beta, muR = A theta^(beta-1); muD*D == muR*R exactly.
    """
    th = prim.theta
    muD = prim.A * th**prim.beta
    muR = prim.A * th ** (prim.beta - 1.0)
    return muD, muR


# ---------------------------------------------------------------------------
# mechanisms


@dataclass(frozen=True)
class DutchExp:
    """Descending clock p(t) = p0 exp(-delta t)."""

    p0: float
    delta: float

    def __post_init__(self):
        if self.p0 <= 0:
            raise ValueError("p0 must be positive")
        if self.delta < 0:
            raise ValueError("delta must be nonnegative")


@dataclass(frozen=True)
class DutchLinear:
    """Descending clock p(t) = max(floor, p0 - slope t)."""

    p0: float
    slope: float
    floor: float = 0.0

    def __post_init__(self):
        if self.p0 <= 0:
            raise ValueError("p0 must be positive")
        if self.slope < 0:
            raise ValueError("slope must be nonnegative")
        if self.floor > self.p0:
            raise ValueError("floor cannot exceed p0")


@dataclass(frozen=True)
class PostedImmediate:
    """Posted price with immediate contracting, optional friction delay phi."""

    pbar: float
    phi: float = 0.0

    def __post_init__(self):
        if self.pbar <= 0:
            raise ValueError("pbar must be positive")
        if self.phi < 0:
            raise ValueError("phi must be nonnegative")


@dataclass(frozen=True)
class PostedBatch:
    """Posted price with execution at the batch-clearing time (the horizon)."""

    pbar: float

    def __post_init__(self):
        if self.pbar <= 0:
            raise ValueError("pbar must be positive")


Mechanism = DutchExp | DutchLinear | PostedImmediate | PostedBatch


def price_path(mech: Mechanism, t):
    """Clock price at time t (vectorized in t); non-increasing by construction."""
    t = np.asarray(t, float)
    if np.any(t < 0):
        raise ValueError("negative time")
    if isinstance(mech, DutchExp):
        return mech.p0 * np.exp(-mech.delta * t)
    if isinstance(mech, DutchLinear):
        return np.maximum(mech.floor, mech.p0 - mech.slope * t)
    return np.full_like(t, mech.pbar, dtype=float)


def eligibility_time(mech: Mechanism, v: float) -> float:
    """First time the clock reaches v, inf if it never does.

    Posted variants: 0 if v >= pbar else inf (the price never moves).
    """
    if isinstance(mech, DutchExp):
        if v >= mech.p0:
            return 0.0
        if v <= 0 or mech.delta == 0:
            return math.inf
        return math.log(mech.p0 / v) / mech.delta
    if isinstance(mech, DutchLinear):
        if v >= mech.p0:
            return 0.0
        if v < mech.floor or mech.slope == 0:
            return math.inf
        return (mech.p0 - v) / mech.slope
    return 0.0 if v >= mech.pbar else math.inf


# ---------------------------------------------------------------------------
# entry primitives


@dataclass(frozen=True)
class EntryPrimitives:
    """Potential masses, entry-cost and value laws, and waiting costs."""

    Dbar: float
    Rbar: float
    costDist: Distribution = field(default_factory=lambda: Uniform(0.0, 1.0))
    valueDist: Distribution = field(default_factory=lambda: Uniform(0.0, 1.0))
    lam: float = 0.0
    kappa: float = 0.0

    def __post_init__(self):
        if self.Dbar <= 0 or self.Rbar <= 0:
            raise ValueError("potential masses must be positive")
        if self.lam < 0 or self.kappa < 0:
            raise ValueError("waiting costs must be nonnegative")
        if self.costDist.support[0] < 0:
            raise ValueError("cost support must be nonnegative")
