"""Cluster-size laws and compound Poisson specifications."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import DomainError, NumericError


@dataclass(frozen=True)
class Degenerate:
    """All clusters have size ``k``."""

    k: int = 1

    def __post_init__(self):
        if self.k < 1:
            raise DomainError("cluster size must be positive")

    def pmf(self, kappa):
        return (np.asarray(kappa) == self.k).astype(float)[()]

    def sf(self, kappa):
        """P(D > kappa)."""
        return (np.asarray(kappa) < self.k).astype(float)[()]

    @property
    def mean(self):
        return float(self.k)

    def sample(self, size, rng):
        return np.full(size, self.k, dtype=np.int64)

    def to_dict(self):
        return {"family": "degenerate", "k": self.k}


@dataclass(frozen=True)
class Geometric:
    """``P(D = k) = p (1 - p)^(k - 1)``, k >= 1."""

    p: float

    def __post_init__(self):
        if not 0.0 < self.p <= 1.0:
            raise DomainError("success probability must lie in (0, 1]")

    def pmf(self, kappa):
        k = np.asarray(kappa, dtype=float)
        with np.errstate(invalid="ignore"):
            out = np.where(k >= 1, self.p * (1.0 - self.p) ** (k - 1), 0.0)
        return out[()]

    def sf(self, kappa):
        k = np.asarray(kappa, dtype=float)
        return np.where(k >= 1, (1.0 - self.p) ** np.maximum(k, 0), 1.0)[()]

    @property
    def mean(self):
        return 1.0 / self.p

    def sample(self, size, rng):
        return rng.geometric(self.p, size=size).astype(np.int64)

    def to_dict(self):
        return {"family": "geometric", "p": self.p}


@dataclass(frozen=True)
class MixGeometric:
    """Finite mixture of geometric laws."""

    weights: tuple
    ps: tuple

    def __post_init__(self):
        if len(self.weights) != len(self.ps) or not self.weights:
            raise DomainError("weights and ps must have the same nonzero length")
        if abs(sum(self.weights) - 1.0) > 1e-12 or min(self.weights) < 0:
            raise DomainError("mixture weights must be a probability vector")
        for p in self.ps:
            Geometric(p)

    def pmf(self, kappa):
        return sum(w * Geometric(p).pmf(kappa) for w, p in zip(self.weights, self.ps))

    def sf(self, kappa):
        return sum(w * Geometric(p).sf(kappa) for w, p in zip(self.weights, self.ps))

    @property
    def mean(self):
        return sum(w / p for w, p in zip(self.weights, self.ps))

    def sample(self, size, rng):
        comp = rng.choice(len(self.weights), size=size, p=np.asarray(self.weights))
        ps = np.asarray(self.ps)[comp]
        return rng.geometric(ps).astype(np.int64)

    def to_dict(self):
        return {"family": "mix_geometric", "weights": list(self.weights), "ps": list(self.ps)}


Multiplicity = Degenerate | Geometric | MixGeometric


def multiplicity_from_dict(d) -> Multiplicity:
    fam = d["family"]
    if fam == "degenerate":
        return Degenerate(int(d.get("k", 1)))
    if fam == "geometric":
        return Geometric(float(d["p"]))
    if fam == "mix_geometric":
        return MixGeometric(tuple(d["weights"]), tuple(d["ps"]))
    raise DomainError(f"unknown multiplicity family {fam!r}")


@dataclass(frozen=True)
class CompoundPoissonSpec:
    """Poisson event times of rate ``theta * tau`` with iid multiplicities."""

    theta: float
    tau: float
    multiplicity: Multiplicity

    def __post_init__(self):
        if not 0.0 < self.theta <= 1.0:
            raise DomainError("theta must lie in (0, 1]")
        if not self.tau > 0:
            raise DomainError("tau must be positive")

    @property
    def intensity(self) -> float:
        return self.theta * self.tau

    def count_law(self, tol: float = 1e-9, max_support: int = 100_000) -> np.ndarray:
        """Law of the total mass on a unit interval, ``P(N = m)`` for m = 0..M.

        Sums Poisson weights times convolution powers of the multiplicity law,
        growing the support M until the captured mass reaches ``1 - tol``.
        """
        lam = self.intensity
        m_cap = 16
        while m_cap <= max_support:
            law = self._law_upto(lam, m_cap, tol)
            if law.sum() >= 1.0 - tol:
                last = int(np.flatnonzero(np.cumsum(law) >= 1.0 - tol)[0])
                return law[:last + 1]
            m_cap *= 2
        raise NumericError("compound Poisson count law did not reach the mass tolerance")

    def _law_upto(self, lam, m_cap, tol):
        d = np.asarray(self.multiplicity.pmf(np.arange(m_cap + 1)), dtype=float)
        d[0] = 0.0
        # every event carries mass >= 1, so at most m_cap events matter
        j_max = m_cap
        law = np.zeros(m_cap + 1)
        power = np.zeros(m_cap + 1)
        power[0] = 1.0
        for j in range(j_max + 1):
            w = stats.poisson.pmf(j, lam)
            law += w * power
            if j > lam and stats.poisson.sf(j, lam) < tol * 1e-3:
                break
            power = np.convolve(power, d)[:m_cap + 1]
        return law

    def zero_probability(self) -> float:
        return math.exp(-self.intensity)

    def to_dict(self):
        return {"theta": self.theta, "tau": self.tau, "multiplicity": self.multiplicity.to_dict()}


def panjer_count_law(spec: CompoundPoissonSpec, m_max: int) -> np.ndarray:
    """Compound Poisson law by the Panjer recursion (reference route)."""
    lam = spec.intensity
    d = np.asarray(spec.multiplicity.pmf(np.arange(m_max + 1)), dtype=float)
    f = np.zeros(m_max + 1)
    f[0] = math.exp(-lam)
    k = np.arange(m_max + 1)
    for m in range(1, m_max + 1):
        f[m] = lam / m * np.dot(k[1:m + 1] * d[1:m + 1], f[m - 1::-1][:m])
    return f
