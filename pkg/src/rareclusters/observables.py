"""Observables, thresholds and exceedance sets.

An observable maps a point of [0, 1] to an extended real and is maximal on a
finite set. Outside the neighbourhoods where it has a local form it returns
``FLOOR`` (-inf), which never exceeds a threshold.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .catalog import ExampleId
from .errors import (CalibrationError, ConfigError, DomainError, GeometryError,
                     UnsupportedExampleError)

FLOOR = -np.inf

SOURCE_OTHER, SOURCE_ZETA1, SOURCE_ZETA2 = 0, 1, 2
SOURCE_NAMES = ("other", "zeta1", "zeta2")


# ---------------------------------------------------------------------------
# g-functions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NegLog:
    """g(s) = -log s."""

    def __call__(self, s):
        with np.errstate(divide="ignore"):
            return -np.log(s)

    def inverse(self, z):
        return np.exp(-np.asarray(z, dtype=float))[()]

    def to_dict(self):
        return {"kind": "neglog"}


@dataclass(frozen=True)
class Pareto:
    """g(s) = s^(-1/a)."""

    a: float

    def __post_init__(self):
        if self.a <= 0:
            raise DomainError("Pareto index must be positive")

    def __call__(self, s):
        with np.errstate(divide="ignore"):
            return np.asarray(s, dtype=float) ** (-1.0 / self.a)

    def inverse(self, z):
        return (np.asarray(z, dtype=float) ** (-self.a))[()]

    def to_dict(self):
        return {"kind": "pareto", "a": self.a}


@dataclass(frozen=True)
class Bounded:
    """g(s) = c - s^(1/a), bounded above by c."""

    c: float
    a: float

    def __post_init__(self):
        if self.a <= 0:
            raise DomainError("shape must be positive")

    def __call__(self, s):
        return self.c - np.asarray(s, dtype=float) ** (1.0 / self.a)

    def inverse(self, z):
        return ((self.c - np.asarray(z, dtype=float)) ** self.a)[()]

    def to_dict(self):
        return {"kind": "bounded", "c": self.c, "a": self.a}


GSpec = NegLog | Pareto | Bounded


def g_from_dict(d) -> GSpec:
    if d is None:
        return NegLog()
    kind = d.get("kind", "neglog")
    if kind == "neglog":
        return NegLog()
    if kind == "pareto":
        return Pareto(float(d["a"]))
    if kind == "bounded":
        return Bounded(float(d["c"]), float(d["a"]))
    raise ConfigError(f"unknown g kind {kind!r}")


# ---------------------------------------------------------------------------
# observables
# ---------------------------------------------------------------------------

def _check_points(x):
    x = np.asarray(x, dtype=float)
    if np.any((x < 0.0) | (x > 1.0)):
        raise DomainError("observable evaluated outside [0, 1]")
    return x


@dataclass(frozen=True)
class LogDistSingle:
    """phi(x) = g(scale * |x - zeta|), maximal at the single point zeta."""

    zeta: float = 1.0 / 3.0
    g: GSpec = field(default_factory=NegLog)
    scale: float = 1.0

    def __call__(self, x):
        x = _check_points(x)
        return self.g(self.scale * np.abs(x - self.zeta))[()]

    @property
    def maximal_set(self):
        return (self.zeta,)

    def exceedance_intervals(self, u):
        r = float(self.g.inverse(u)) / self.scale
        return [(max(0.0, self.zeta - r), min(1.0, self.zeta + r))]

    def source_of(self, x):
        return np.full(np.shape(x), SOURCE_ZETA1, dtype=np.int8)

    def to_dict(self):
        return {"kind": "logdist_single", "zeta": self.zeta, "scale": self.scale,
                "g": self.g.to_dict()}


@dataclass(frozen=True)
class LogDistPiecewise:
    """-log|x - zeta1| on [0, cut], -log|x - zeta2| on (cut, 1]."""

    zeta1: float = 1.0 / 3.0
    zeta2: float = 5.0 / 7.0
    cut: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.zeta1 <= self.cut < self.zeta2 <= 1.0:
            raise DomainError("need zeta1 <= cut < zeta2 inside [0, 1]")

    def __call__(self, x):
        x = _check_points(x)
        d = np.where(x <= self.cut, np.abs(x - self.zeta1), np.abs(x - self.zeta2))
        with np.errstate(divide="ignore"):
            return (-np.log(d))[()]

    @property
    def maximal_set(self):
        return (self.zeta1, self.zeta2)

    def exceedance_intervals(self, u):
        r = math.exp(-u)
        return [(max(0.0, self.zeta1 - r), min(self.cut, self.zeta1 + r)),
                (max(self.cut, self.zeta2 - r), min(1.0, self.zeta2 + r))]

    def source_of(self, x):
        return np.where(np.asarray(x) <= self.cut, SOURCE_ZETA1, SOURCE_ZETA2).astype(np.int8)

    def to_dict(self):
        return {"kind": "logdist_piecewise", "zeta1": self.zeta1, "zeta2": self.zeta2,
                "cut": self.cut}


@dataclass(frozen=True)
class MixIndifferent:
    """Observable maximal at the indifferent point 0 and at a second point.

    ``g(c1 x^(1-alpha))`` on [0, delta) and ``g(2 h2 |x - zeta2|)`` on the
    delta-ball around ``zeta2``; both local forms are normalised so that the
    invariant measure of ``{phi > g(s)}`` is about ``s`` near each maximum.
    ``zeta2_kind`` records how zeta2 was built: ``"nonperiodic_preimage"``
    or ``"periodic"`` (with period ``p``).
    """

    alpha: float
    c1: float
    h2: float
    zeta2: float
    zeta2_kind: str = "nonperiodic_preimage"
    p: int | None = None
    delta: float = 0.05
    g: GSpec = field(default_factory=NegLog)

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise DomainError("alpha must lie in (0, 1)")
        if self.c1 <= 0 or self.h2 <= 0:
            raise DomainError("c1 and h2 must be positive")
        if self.delta <= 0:
            raise DomainError("delta must be positive")
        if not 0.5 <= self.zeta2 <= 1.0:
            raise DomainError("zeta2 must lie in [1/2, 1]")
        if self.zeta2 - self.delta < self.delta:
            raise GeometryError("delta-neighbourhoods of 0 and zeta2 overlap")
        if self.zeta2 - self.delta < 0.5 or self.zeta2 + self.delta > 1.0:
            raise GeometryError("delta-ball around zeta2 must stay inside (1/2, 1)")
        if self.zeta2_kind not in ("nonperiodic_preimage", "periodic"):
            raise ConfigError(f"unknown zeta2 kind {self.zeta2_kind!r}")
        if self.zeta2_kind == "periodic" and (self.p is None or self.p < 2):
            raise ConfigError("periodic zeta2 needs p >= 2")

    def __call__(self, x):
        x = _check_points(x)
        out = np.full(x.shape, FLOOR)
        near0 = x < self.delta
        near2 = np.abs(x - self.zeta2) < self.delta
        out[near0] = self.g(self.c1 * x[near0] ** (1.0 - self.alpha))
        out[near2] = self.g(2.0 * self.h2 * np.abs(x[near2] - self.zeta2))
        return out[()]

    @property
    def maximal_set(self):
        return (0.0, self.zeta2)

    def exceedance_intervals(self, u):
        s = float(self.g.inverse(u))
        r0 = min(self.delta, (s / self.c1) ** (1.0 / (1.0 - self.alpha)))
        r2 = min(self.delta, s / (2.0 * self.h2))
        return [(0.0, r0), (self.zeta2 - r2, self.zeta2 + r2)]

    def source_of(self, x):
        x = np.asarray(x, dtype=float)
        src = np.full(x.shape, SOURCE_OTHER, dtype=np.int8)
        src[x < self.delta] = SOURCE_ZETA1
        src[np.abs(x - self.zeta2) < self.delta] = SOURCE_ZETA2
        return src

    def to_dict(self):
        return {"kind": "mix_indifferent", "alpha": self.alpha, "c1": self.c1, "h2": self.h2,
                "zeta2": self.zeta2, "zeta2_kind": self.zeta2_kind, "p": self.p,
                "delta": self.delta, "g": self.g.to_dict()}


@dataclass(frozen=True)
class MMAIdentity:
    """The MMA process is observed directly."""

    def __call__(self, x):
        return np.asarray(x, dtype=float)[()]

    def to_dict(self):
        return {"kind": "mma_identity"}


ObservableSpec = LogDistSingle | LogDistPiecewise | MixIndifferent | MMAIdentity


def observable_from_dict(d) -> ObservableSpec:
    kind = d.get("kind")
    if kind == "logdist_single":
        return LogDistSingle(float(d.get("zeta", 1 / 3)), g_from_dict(d.get("g")),
                             float(d.get("scale", 1.0)))
    if kind == "logdist_piecewise":
        return LogDistPiecewise(float(d.get("zeta1", 1 / 3)), float(d.get("zeta2", 5 / 7)),
                                float(d.get("cut", 0.5)))
    if kind == "mix_indifferent":
        return MixIndifferent(float(d["alpha"]), float(d["c1"]), float(d["h2"]),
                              float(d["zeta2"]), d.get("zeta2_kind", "nonperiodic_preimage"),
                              d.get("p"), float(d.get("delta", 0.05)), g_from_dict(d.get("g")))
    if kind == "mma_identity":
        return MMAIdentity()
    raise ConfigError(f"unknown observable kind {kind!r}")


def evaluate(obs: ObservableSpec, x):
    """phi(x); points outside every local neighbourhood give ``FLOOR``."""
    return obs(x)


# ---------------------------------------------------------------------------
# thresholds
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EmpiricalTail:
    """Top order statistics of a calibration run.

    ``values`` is sorted in decreasing order; ``length`` is the calibration
    orbit length, so ``P(X > values[k]) ~ k / length``.
    """

    values: np.ndarray
    length: int

    def survival(self, z):
        """Empirical P(X > z), linearly interpolated between order statistics."""
        z = np.asarray(z, dtype=float)
        v = self.values[::-1]  # increasing
        ranks = np.arange(len(v), 0, -1) - 1.0  # number strictly above v[i]
        if np.any(z < v[0]):
            raise DomainError("value below the calibrated tail")
        out = np.interp(z, v, ranks, right=0.0) / self.length
        return out[()]


@dataclass(frozen=True)
class ThresholdSchedule:
    n: int
    tau: float
    u_n: float
    kind: str  # "analytic" or "empirical"
    source: str = ""  # example label or calibration size
    calib_len: int | None = None
    tail: EmpiricalTail | None = field(default=None, compare=False, repr=False)

    def to_dict(self):
        d = {"n": self.n, "tau": self.tau, "u_n": self.u_n, "kind": self.kind,
             "source": self.source}
        if self.calib_len is not None:
            d["calib_len"] = self.calib_len
        return d


def _check_frequency(n, tau):
    if n < 1:
        raise DomainError("n must be positive")
    if not tau > 0:
        raise DomainError("tau must be positive")
    if tau / n >= 1.0:
        raise DomainError("need tau / n < 1")


def threshold_analytic(target, n: int, tau: float, G=None) -> float:
    """Closed-form threshold with ``n P(X_0 > u_n) = tau``.

    ``target`` is an :class:`ExampleId` or an observable with a known local
    form. ``G`` is the MMA marginal (default uniform).
    """
    _check_frequency(n, tau)
    if isinstance(target, ExampleId):
        kind = target.kind
        if kind == "mma":
            G = stats.uniform() if G is None else G
            # P(X > u) = 1 - G(u)^2
            return float(G.ppf(math.sqrt(1.0 - tau / n)))
        if kind == "doubling13":
            return math.log(2.0 * n / tau)
        if kind == "doubling_mix":
            return math.log(4.0 * n / tau)
        return float(NegLog()(tau / (2.0 * n)))
    if isinstance(target, MixIndifferent):
        return float(target.g(tau / (2.0 * n)))
    if isinstance(target, LogDistSingle):
        # Lebesgue-invariant map: measure of the ball is 2 g^{-1}(u) / scale
        return float(target.g(target.scale * tau / (2.0 * n)))
    if isinstance(target, LogDistPiecewise):
        return math.log(4.0 * n / tau)
    raise UnsupportedExampleError(f"no closed-form threshold for {target!r}")


def analytic_schedule(target, n: int, tau: float, G=None) -> ThresholdSchedule:
    label = target.label() if isinstance(target, ExampleId) else type(target).__name__
    return ThresholdSchedule(n, float(tau), threshold_analytic(target, n, tau, G), "analytic", label)


def threshold_empirical(process, n: int, tau: float, calib_len: int | None = None,
                        rng: np.random.Generator | None = None) -> ThresholdSchedule:
    """Empirical (1 - tau/n)-quantile of one calibration orbit.

    The returned level is the (k+1)-th largest value with
    ``k = round(calib_len * tau / n)``, so exactly k calibration values exceed
    it. Only values above a pilot-based floor are collected.
    """
    _check_frequency(n, tau)
    if calib_len is None:
        calib_len = int(math.ceil(100 * n / tau))
    k = int(round(calib_len * tau / n))
    if k < 50:
        raise CalibrationError(
            f"calibration orbit of {calib_len} gives only {k} expected exceedances (< 50)")
    rng = np.random.default_rng() if rng is None else rng
    pilot_ss, main_ss = np.random.SeedSequence(int(rng.integers(2 ** 63))).spawn(2)
    m = min(calib_len, 2 ** 20)
    pilot = process.values(m, np.random.default_rng(pilot_ss))
    p_low = min(0.5, max(10.0 * tau / n, 200.0 / m))
    for _ in range(6):
        u_low = float(np.quantile(pilot, 1.0 - p_low))
        cand = process.scan(calib_len, u_low, np.random.default_rng(main_ss))
        if len(cand.values) >= k + 1:
            break
        p_low = min(1.0, 10.0 * p_low)
    else:
        raise CalibrationError("could not bracket the calibration quantile")
    top = -np.sort(-cand.values)[:max(k + 1, 4 * k)]
    tail = EmpiricalTail(top, calib_len)
    return ThresholdSchedule(n, float(tau), float(top[k]), "empirical",
                             f"calib_len={calib_len}", calib_len, tail)


def exceedance_geometry(example: ExampleId, u: float):
    """The exceedance set ``{phi > u}`` as explicit open intervals."""
    if not isinstance(example, ExampleId) or not example.is_doubling:
        raise UnsupportedExampleError("interval geometry is available for the doubling examples")
    r = math.exp(-u)
    if example.kind == "doubling13":
        ivs = [(1 / 3 - r, 1 / 3 + r)]
        if r >= 1 / 3:
            raise GeometryError("exceedance interval leaves [0, 1]")
        return ivs
    ivs = [(1 / 3 - r, 1 / 3 + r), (5 / 7 - r, 5 / 7 + r)]
    if 1 / 3 + r > 0.5 or 5 / 7 - r < 0.5 or 1 / 3 - r < 0 or 5 / 7 + r > 1:
        raise GeometryError("exceedance intervals cross the cut at 1/2")
    return ivs


def observable_for(example: ExampleId, density=None, delta: float = 0.05,
                   g: GSpec | None = None) -> ObservableSpec:
    """Observable of a worked example.

    The LSV examples need an :class:`~rareclusters.dynamics.InvariantDensityModel`
    for the constants of their local forms.
    """
    from . import dynamics

    g = NegLog() if g is None else g
    if example.kind == "mma":
        return MMAIdentity()
    if example.kind == "doubling13":
        return LogDistSingle(1 / 3, g)
    if example.kind == "doubling_mix":
        return LogDistPiecewise()
    if density is None:
        raise ConfigError("LSV observables need a calibrated density model")
    lsv = dynamics.LSVMap(example.alpha)
    if example.kind == "smith_lsv":
        z2 = dynamics.lsv_preperiodic_point(lsv)
        kind, p = "nonperiodic_preimage", None
    else:
        z2 = dynamics.lsv_periodic_point(lsv, example.p)
        kind, p = "periodic", example.p
    return MixIndifferent(example.alpha, density.c1_hat, density.h_at(z2), z2, kind, p, delta, g)
