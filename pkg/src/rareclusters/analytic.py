"""Closed-form extremal index and cluster-size laws of the worked examples.

Rational constants are kept as :class:`~fractions.Fraction` internally so that
the comparison between the extremal index and the reciprocal mean cluster
size is an exact test.
"""
from __future__ import annotations

import contextlib
from dataclasses import dataclass
from fractions import Fraction
from typing import NamedTuple

import numpy as np

from .catalog import DOUBLING13, DOUBLING_MIX, MMA, ExampleId, all_examples  # noqa: F401
from .dynamics import LSVMap, iterate_exact, lsv_periodic_point
from .errors import GeometryError, NumericError, UnsupportedExampleError
from .multiplicity import CompoundPoissonSpec, Degenerate, Geometric, MixGeometric

# Oracle overrides used by the self-test mutation check: kind -> theta.
_THETA_OVERRIDES: dict[str, float] = {}


@contextlib.contextmanager
def corrupted_oracle(kind: str, theta: float):
    """Temporarily replace the extremal index of one example."""
    _THETA_OVERRIDES[kind] = theta
    try:
        yield
    finally:
        _THETA_OVERRIDES.pop(kind, None)


# ---------------------------------------------------------------------------
# periodic derivative
# ---------------------------------------------------------------------------

def gamma_of(map_spec: LSVMap, zeta2: float, p: int, tol: float = 1e-10) -> float:
    """Derivative of ``T^p`` at a period-p point: product of branch slopes."""
    back = iterate_exact(map_spec, zeta2, p)
    if abs(back - zeta2) > tol:
        raise NumericError(f"point is not {p}-periodic (|T^p z - z| = {abs(back - zeta2):.3g})")
    x, gamma = zeta2, 1.0
    for _ in range(p):
        gamma *= float(map_spec.derivative(x))
        x = float(map_spec.step(x))
    return gamma


def gamma_for(example: ExampleId) -> float:
    if example.kind != "periodic_lsv":
        raise UnsupportedExampleError("gamma is defined for the periodic LSV example")
    lsv = LSVMap(example.alpha)
    return gamma_of(lsv, lsv_periodic_point(lsv, example.p), example.p)


# ---------------------------------------------------------------------------
# exact constants
# ---------------------------------------------------------------------------

def _exact(example: ExampleId, gamma=None):
    """(theta, mean cluster size) as Fractions."""
    kind = example.kind
    if kind == "mma":
        return Fraction(1, 2), Fraction(2)
    if kind == "doubling13":
        return Fraction(3, 4), Fraction(4, 3)
    if kind == "doubling_mix":
        return Fraction(13, 16), Fraction(6, 13) * Fraction(4, 3) + Fraction(7, 13) * Fraction(8, 7)
    if kind == "smith_lsv":
        return Fraction(1, 2), Fraction(1)
    g = Fraction(gamma_for(example) if gamma is None else gamma)
    s = 1 - 1 / g
    return s / 2, 1 / s


def theta(example: ExampleId) -> float:
    """Extremal index."""
    if example.kind in _THETA_OVERRIDES:
        return _THETA_OVERRIDES[example.kind]
    return float(_exact(example)[0])


def multiplicity(example: ExampleId, gamma=None):
    """Limiting cluster-size law as a multiplicity object."""
    kind = example.kind
    if kind == "mma":
        return Degenerate(2)
    if kind == "doubling13":
        return Geometric(0.75)
    if kind == "doubling_mix":
        return MixGeometric((6 / 13, 7 / 13), (0.75, 0.875))
    if kind == "smith_lsv":
        return Degenerate(1)
    g = gamma_for(example) if gamma is None else gamma
    return Geometric(1.0 - 1.0 / g)


def pi(example: ExampleId, kappa: int) -> float:
    """Limiting probability that a cluster has size ``kappa``."""
    if kappa < 1:
        raise ValueError("cluster sizes start at 1")
    return float(multiplicity(example).pmf(kappa))


def mean_cluster_size(example: ExampleId) -> float:
    return float(_exact(example)[1])


class EIDiscrepancy(NamedTuple):
    theta_inverse: float
    mean_pi: float
    equal: bool


def ei_discrepancy(example: ExampleId) -> EIDiscrepancy:
    th, mean = _exact(example)
    if example.kind in _THETA_OVERRIDES:
        th = Fraction(_THETA_OVERRIDES[example.kind])
    return EIDiscrepancy(float(1 / th), float(mean), th * mean == 1)


def limit_family(example: ExampleId, tau: float = 1.0) -> CompoundPoissonSpec:
    return CompoundPoissonSpec(theta(example), tau, multiplicity(example))


# ---------------------------------------------------------------------------
# doubling map interval measures
# ---------------------------------------------------------------------------

def _doubling_radius(example, n, tau):
    if example.kind == "doubling13":
        return tau / (2.0 * n)
    if example.kind == "doubling_mix":
        return tau / (4.0 * n)
    raise UnsupportedExampleError("interval measures exist for the doubling examples only")


def Qk_measure_doubling(example: ExampleId, n: int, tau: float, kappa: int) -> float:
    """Lebesgue measure of the set of points with exactly ``kappa`` chained returns.

    Valid while the exceedance intervals are small enough that the only
    short returns are those of the periodic orbits through the maxima; we
    require a radius below 1/64.
    """
    r = _doubling_radius(example, n, tau)
    if r >= 1 / 64:
        raise GeometryError(f"radius {r:g} too large for the interval formulas")
    if kappa < 0:
        raise ValueError("kappa must be nonnegative")
    if example.kind == "doubling13":
        return 4.0 ** -kappa * 0.75 * tau / n
    return (4.0 ** -kappa * 0.75 + 8.0 ** -kappa * 0.875) * tau / (2.0 * n)


def exceedance_measure_doubling(example: ExampleId, n: int, tau: float) -> float:
    r = _doubling_radius(example, n, tau)
    return 2 * r * (1 if example.kind == "doubling13" else 2)


# ---------------------------------------------------------------------------
# LSV finite-n behaviour
# ---------------------------------------------------------------------------

class FiniteTheta(NamedTuple):
    theta: float
    correction_exponent: float
    form: str


def finite_theta_asymptotics(example: ExampleId, n: int, tau: float = 1.0) -> FiniteTheta:
    """Leading term and decay exponent of the finite-n extremal index.

    The constant in front of ``n^(-alpha/(1-alpha))`` is not known and is not
    reported.
    """
    if not example.is_lsv:
        raise UnsupportedExampleError("finite-n asymptotics are given for the LSV examples")
    a = example.alpha
    return FiniteTheta(theta(example), a / (1.0 - a), "theta + K * n**(-exponent)")


# ---------------------------------------------------------------------------
# summaries
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AnalyticSummary:
    example: ExampleId
    theta: float
    pi: dict
    mean_pi: float
    limit_family: CompoundPoissonSpec
    ei_equals_inverse_mean: bool
    gamma: float | None = None

    def to_dict(self):
        d = {"example": self.example.label(), "theta": self.theta,
             "pi": {str(k): v for k, v in self.pi.items()}, "mean_pi": self.mean_pi,
             "inverse_theta": 1.0 / self.theta,
             "ei_equals_inverse_mean": self.ei_equals_inverse_mean,
             "limit_family": self.limit_family.to_dict()}
        if self.gamma is not None:
            d["gamma"] = self.gamma
        return d


def summary(example: ExampleId, kappa_max: int = 10, tau: float = 1.0) -> AnalyticSummary:
    gamma = gamma_for(example) if example.kind == "periodic_lsv" else None
    mult = multiplicity(example, gamma)
    pis = {k: float(mult.pmf(k)) for k in range(1, kappa_max + 1)}
    return AnalyticSummary(example, theta(example), pis, mean_cluster_size(example),
                           CompoundPoissonSpec(theta(example), tau, mult),
                           ei_discrepancy(example).equal, gamma)


def table(kappa_max: int = 10, alpha: float = 0.2, p: int = 2) -> list[dict]:
    return [summary(ex, kappa_max).to_dict() for ex in all_examples(alpha, p)]


def pi_normalisation(example: ExampleId, kappa_max: int = 10_000) -> float:
    k = np.arange(1, kappa_max + 1)
    return float(np.sum(multiplicity(example).pmf(k)))


def mean_from_pmf(example: ExampleId, kappa_max: int = 10_000) -> float:
    k = np.arange(1, kappa_max + 1)
    return float(np.sum(k * multiplicity(example).pmf(k)))
