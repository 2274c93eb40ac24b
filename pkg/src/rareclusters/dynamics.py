"""Orbit generation for the doubling map, the LSV intermittent family and the
maximum-moving-average process.

The doubling map is simulated on 64-bit integer windows of a fair random bit
stream: one step shifts the window left by one bit and appends a fresh bit.
This keeps every iterate distributed exactly as a Lebesgue-random point,
where floating point 2x mod 1 would collapse to 0 after ~53 steps.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy import optimize, stats

from . import _kernels
from .errors import DomainError, NumericError

#: Upper end of the LSV parameter range in which the mixing conditions are known.
ALPHA_MIXING_BOUND = math.sqrt(5.0) - 2.0
#: Default number of LSV iterates discarded from a uniform start.
DEFAULT_BURN_IN = 10_000

_TWO64 = 2 ** 64
_MASK64 = _TWO64 - 1


# ---------------------------------------------------------------------------
# maps
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DoublingMap:
    """T(x) = 2x mod 1."""

    kind = "doubling"

    def step(self, x):
        return step(self, x)

    def derivative(self, x):
        return 2.0 * np.ones_like(np.asarray(x, dtype=float))

    def to_dict(self):
        return {"kind": "doubling"}


@dataclass(frozen=True)
class LSVMap:
    """Liverani-Saussol-Vaienti map with parameter ``alpha``.

    Left branch ``x (1 + 2^alpha x^alpha)`` on [0, 1/2), right branch
    ``2x - 1`` on [1/2, 1]. The fixed point 0 is indifferent.
    """

    alpha: float
    kind = "lsv"

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise DomainError(f"LSV parameter must lie in (0, 1), got {self.alpha}")

    @property
    def d_conditions_valid(self) -> bool:
        return self.alpha < ALPHA_MIXING_BOUND

    def left(self, x):
        return x * (1.0 + 2.0 ** self.alpha * x ** self.alpha)

    def step(self, x):
        return step(self, x)

    def derivative(self, x):
        x = np.asarray(x, dtype=float)
        a = self.alpha
        return np.where(x < 0.5, 1.0 + 2.0 ** a * (1.0 + a) * x ** a, 2.0)

    def to_dict(self):
        return {"kind": "lsv", "alpha": self.alpha}


MapSpec = DoublingMap | LSVMap


def map_from_dict(d) -> MapSpec:
    kind = d.get("kind")
    if kind == "doubling":
        return DoublingMap()
    if kind == "lsv":
        return LSVMap(float(d["alpha"]))
    raise DomainError(f"unknown map kind {kind!r}")


# ---------------------------------------------------------------------------
# doubling map state
# ---------------------------------------------------------------------------

class BitReservoir:
    """Fair bits drawn lazily, 64 at a time, most significant bit first."""

    def __init__(self, rng: np.random.Generator):
        self._bitgen = rng.bit_generator
        self._word = 0
        self._left = 0

    def next_bit(self) -> int:
        if self._left == 0:
            self._word = int(self._bitgen.random_raw())
            self._left = 64
        self._left -= 1
        return (self._word >> self._left) & 1

    def take_words(self, k: int) -> np.ndarray:
        """Next ``k`` whole words. Only valid on a word boundary."""
        if self._left:
            raise NumericError("reservoir is not aligned to a word boundary")
        return np.asarray(self._bitgen.random_raw(k), dtype=np.uint64)

    def push_partial(self, word: int, left: int):
        """Put back the ``left`` unread low bits of ``word``."""
        self._word, self._left = int(word), int(left)


class DoublingState:
    """Point of [0,1) held as a 64-bit binary fraction plus a bit reservoir.

    Not a value type: :meth:`step` consumes one reservoir bit.
    """

    def __init__(self, frac: int, reservoir: BitReservoir | None = None):
        if not 0 <= frac < _TWO64:
            raise DomainError("fraction must fit in 64 bits")
        self.frac = int(frac)
        self.reservoir = reservoir

    @classmethod
    def from_value(cls, x, reservoir=None):
        """Exact for dyadic floats; other rationals are truncated to 64 bits."""
        x = Fraction(x)
        if not 0 <= x < 1:
            raise DomainError("x must lie in [0, 1)")
        return cls(int(x * _TWO64), reservoir)

    @property
    def value(self) -> float:
        """Top 53 bits, truncated (same convention as :func:`windows_to_float`)."""
        return (self.frac >> 11) * 2.0 ** -53

    def top_bits(self, k: int) -> int:
        return self.frac >> (64 - k)

    def step(self) -> "DoublingState":
        bit = self.reservoir.next_bit() if self.reservoir is not None else 0
        self.frac = ((self.frac << 1) & _MASK64) | bit
        return self

    def __repr__(self):
        return f"DoublingState(0x{self.frac:016x})"


def doubling_windows(frac0: int, words: np.ndarray, n: int) -> np.ndarray:
    """The first ``n`` 64-bit states of the stream ``frac0 || words``."""
    stream = np.empty(len(words) + 2, dtype=np.uint64)
    stream[0] = np.uint64(frac0)
    stream[1:-1] = words
    stream[-1] = 0
    i = np.arange(n, dtype=np.int64)
    w = i >> 6
    r = (i & 63).astype(np.uint64)
    hi = stream[w] << r
    lo = stream[w + 1] >> ((np.uint64(64) - r) & np.uint64(63))
    return np.where(r == 0, hi, hi | lo)


def windows_to_float(s: np.ndarray) -> np.ndarray:
    """Truncate 64-bit states to their top 53 bits; exact, and always below 1."""
    return (np.asarray(s, dtype=np.uint64) >> np.uint64(11)).astype(np.float64) * 2.0 ** -53


# ---------------------------------------------------------------------------
# one step and orbits
# ---------------------------------------------------------------------------

def step(map_spec: MapSpec, x):
    """Apply the map once.

    For the doubling map a :class:`DoublingState` is advanced in place (bit
    shift), a :class:`~fractions.Fraction` is mapped exactly and floats use
    ``2x mod 1``. LSV accepts scalars or arrays.
    """
    if isinstance(map_spec, DoublingMap):
        if isinstance(x, DoublingState):
            return x.step()
        if isinstance(x, Fraction):
            return (2 * x) % 1
        return np.mod(2.0 * np.asarray(x, dtype=float), 1.0)[()]
    x = np.asarray(x, dtype=float)
    a = map_spec.alpha
    with np.errstate(invalid="ignore"):
        y = np.where(x < 0.5, x * (1.0 + 2.0 ** a * np.abs(x) ** a), 2.0 * x - 1.0)
    return y[()]


def orbit(map_spec: MapSpec, x0, n: int, rng: np.random.Generator | None = None):
    """Return the first ``n`` iterates ``x0, T x0, ..., T^{n-1} x0`` as floats.

    For the doubling map ``x0`` may be a :class:`DoublingState` (its reservoir
    is used), a Fraction or a float (then ``rng`` supplies the bits below the
    64-bit truncation of ``x0``). Exactly ``n`` reservoir bits are consumed.
    LSV orbits draw one seed from ``rng`` for the low-bit refill of the
    right branch (see ``_kernels``).
    """
    if n < 1:
        raise DomainError("orbit length must be positive")
    if isinstance(map_spec, DoublingMap):
        if isinstance(x0, DoublingState):
            state = x0
        else:
            if rng is None:
                raise DomainError("doubling orbits need an rng for fresh bits")
            state = DoublingState.from_value(x0, BitReservoir(rng))
        if state.reservoir is None:
            if rng is None:
                raise DomainError("doubling orbits need an rng for fresh bits")
            state.reservoir = BitReservoir(rng)
        return _doubling_orbit(state, n)
    x0 = float(x0)
    if not 0.0 <= x0 <= 1.0:
        raise DomainError("x0 must lie in [0, 1]")
    if rng is None:
        raise DomainError("LSV orbits need an rng for the low-bit refill")
    return _kernels.lsv_orbit(x0, n, map_spec.alpha, lsv_noise_state(rng))


def _doubling_orbit(state: DoublingState, n: int) -> np.ndarray:
    # drain the partially used word bit by bit, then go word-aligned
    res = state.reservoir
    head = []
    while res._left and len(head) < n:
        head.append(state.value)
        state.step()
    if len(head) == n:
        return np.array(head)
    m = n - len(head)
    nwords = -(-m // 64)
    words = res.take_words(nwords)
    s = doubling_windows(state.frac, words, m + 1)
    out = np.concatenate([np.array(head, dtype=float), windows_to_float(s[:m])])
    state.frac = int(s[m])
    used = m % 64
    if used:
        res.push_partial(int(words[-1]), 64 - used)
    return out


def sample_invariant(map_spec: MapSpec, rng: np.random.Generator,
                     burn_in: int = DEFAULT_BURN_IN):
    """Draw an (approximate) sample of the invariant measure.

    Doubling: a uniform 64-bit :class:`DoublingState` (Lebesgue is invariant,
    ``burn_in`` is not needed). LSV: a uniform start pushed through
    ``burn_in`` iterates, returned as a float.
    """
    if burn_in < 0:
        raise DomainError("burn_in must be nonnegative")
    if isinstance(map_spec, DoublingMap):
        frac = int(rng.bit_generator.random_raw())
        return DoublingState(frac, BitReservoir(rng))
    xs = np.array([rng.random()])
    _kernels.lsv_advance(xs, burn_in, map_spec.alpha, lsv_noise_state(rng))
    return float(xs[0])


def lsv_noise_state(rng: np.random.Generator, chains: int = 1) -> np.ndarray:
    """Per-chain xorshift states feeding the low-bit refill of LSV orbits."""
    return rng.integers(1, 2 ** 64, size=chains, dtype=np.uint64)


# ---------------------------------------------------------------------------
# LSV inverse branches and special orbits
# ---------------------------------------------------------------------------

def lsv_preimage_left(map_spec: LSVMap, y, polish: bool = True):
    """Solve ``x + 2^alpha x^(1+alpha) = y`` for x in [0, 1/2).

    Bisection on [0, min(y, 1/2)] (the branch lies above the diagonal, so the
    root never exceeds y), 60 halvings, then two Newton steps. Works on arrays.
    """
    y_arr = np.asarray(y, dtype=float)
    if np.any((y_arr < 0.0) | (y_arr > 1.0)) or np.any(np.isnan(y_arr)):
        raise DomainError("preimage target must lie in [0, 1]")
    a = map_spec.alpha
    c = 2.0 ** a
    lo = np.zeros_like(y_arr)
    hi = np.minimum(y_arr, 0.5)
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        below = mid * (1.0 + c * mid ** a) < y_arr
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    x = 0.5 * (lo + hi)
    if polish:
        for _ in range(2):
            pos = x > 0
            f = x * (1.0 + c * x ** a) - y_arr
            df = 1.0 + c * (1.0 + a) * np.where(pos, x, 1.0) ** a
            cand = x - f / df
            ok = pos & (cand >= 0.0) & (cand < 0.5)
            x = np.where(ok, cand, x)
    return x[()]


def lsv_period2_left_point(map_spec: LSVMap) -> float:
    """The left-branch point xi of the period-2 orbit {xi, (1+xi)/2}."""
    a = map_spec.alpha

    def f(x):
        return x * (1.0 + 2.0 ** a * x ** a) - 0.5 * (1.0 + x)

    return optimize.brentq(f, 1e-12, 0.5 - 1e-15, xtol=1e-16, rtol=1e-15, maxiter=200)


def lsv_periodic_point(map_spec: LSVMap, p: int = 2) -> float:
    """Point of [1/2, 1) of period ``p`` with itinerary right^(p-1), left.

    The point zeta satisfies ``T_left(2^(p-1) (zeta - 1) + 1) = zeta`` with
    ``2^(p-1)(zeta - 1) + 1`` in [0, 1/2).
    """
    if p < 2:
        raise DomainError("the only right-branch fixed point is 1; use p >= 2")
    a = map_spec.alpha
    scale = 2.0 ** (p - 1)

    def f(z):
        x = scale * (z - 1.0) + 1.0
        return x * (1.0 + 2.0 ** a * x ** a) - z

    lo = 1.0 - 2.0 ** -(p - 1)
    hi = 1.0 - 2.0 ** -p
    return optimize.brentq(f, lo + 1e-15, hi - 1e-15, xtol=1e-16, rtol=1e-15, maxiter=200)


def lsv_preperiodic_point(map_spec: LSVMap) -> float:
    """Right-branch point whose orbit enters the period-2 orbit after 2 steps.

    The right-branch preimage of the period-2 point xi is itself periodic, so
    we go one step further back: ``zeta -> w -> xi`` with ``w`` the left
    preimage of xi, giving ``zeta = (1 + w)/2``. Its forward orbit never
    returns to zeta and never visits 0.
    """
    xi = lsv_period2_left_point(map_spec)
    w = float(lsv_preimage_left(map_spec, xi))
    return 0.5 * (1.0 + w)


def iterate_exact(map_spec: MapSpec, x: float, k: int) -> float:
    for _ in range(k):
        x = float(step(map_spec, x))
    return x


# ---------------------------------------------------------------------------
# maximum moving average process
# ---------------------------------------------------------------------------

def _marginal(G):
    return stats.uniform() if G is None else G


def mma_generate(G, n: int, rng: np.random.Generator) -> np.ndarray:
    """``X_i = max(Y_{i-2}, Y_i)`` for iid ``Y ~ G``, i = 0..n-1.

    ``G`` is a frozen scipy distribution (default uniform(0, 1)).
    """
    if n < 1:
        raise DomainError("n must be positive")
    y = _marginal(G).rvs(size=n + 2, random_state=rng)
    return np.maximum(y[:-2], y[2:])


def mma_exceedances(G, length: int, u: float, rng: np.random.Generator):
    """Positions and values of ``X_i > u`` for an MMA path of given length.

    Samples only the Y's above ``u``: gaps between them are geometric and
    their values are drawn from G conditioned on exceeding ``u``. The joint
    law of the returned exceedances is the same as thresholding
    :func:`mma_generate` output.
    """
    G = _marginal(G)
    p = float(G.sf(u))
    slots = length + 2
    if p <= 0.0:
        return np.empty(0, np.int64), np.empty(0)
    chunks = []
    last = -1
    expected = int(p * slots * 1.1) + 64
    while True:
        gaps = rng.geometric(p, size=expected)
        idx = last + np.cumsum(gaps)
        chunks.append(idx[idx < slots])
        if idx[-1] >= slots:
            break
        last = int(idx[-1])
    yidx = np.concatenate(chunks) - 2  # Y index in -2..length-1
    yval = G.isf(p * rng.random(len(yidx)))
    # X_i takes Y_i (i >= 0) and Y_{i-2} (i <= length-1)
    pos = np.concatenate([yidx[yidx >= 0], yidx[yidx + 2 <= length - 1] + 2])
    val = np.concatenate([yval[yidx >= 0], yval[yidx + 2 <= length - 1]])
    if len(pos) == 0:
        return pos.astype(np.int64), val
    order = np.lexsort((-val, pos))
    pos, val = pos[order], val[order]
    keep = np.ones(len(pos), dtype=bool)
    keep[1:] = pos[1:] != pos[:-1]  # max of the two Y's
    return pos[keep].astype(np.int64), val[keep]


# ---------------------------------------------------------------------------
# invariant density of the LSV map
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class InvariantDensityModel:
    """Empirical description of the LSV invariant density.

    ``c1_hat`` is the constant in ``mu([0, s)) ~ c1 s^(1-alpha)``. It is
    derived from the density at 1/2 via the invariance relation
    ``mu([0, y)) = sum_k mu([1/2, (1 + x_k)/2))`` over the left-branch
    backward orbit ``x_0 = y, x_{k+1} = T_left^{-1}(x_k)``, which avoids
    fitting a power law in a range where it is still far from asymptotic.
    """

    alpha: float
    c1_hat: float
    h_half: float
    samples: int
    bin_edges: np.ndarray = field(repr=False)
    density: np.ndarray = field(repr=False)
    window: float = 0.004

    def __post_init__(self):
        if not self.c1_hat > 0:
            raise NumericError("calibrated C1 must be positive")

    def h_at(self, x: float, window: float | None = None) -> float:
        """Mean histogram density over ``[x - w, x + w]``; x away from 0."""
        w = self.window if window is None else window
        if x - w < 0.01 or x + w > 1.0:
            raise DomainError("density lookup needs a point away from 0 and 1")
        nb = len(self.density)
        i0 = int(round((x - w) * nb))
        i1 = int(round((x + w) * nb))
        return float(self.density[i0:i1].mean())

    def measure_below(self, s):
        """Asymptotic prediction ``c1_hat s^(1 - alpha)``."""
        return self.c1_hat * np.asarray(s, dtype=float) ** (1.0 - self.alpha)

    def measure_below_telescoped(self, s):
        """Finite-s prediction from the backward-orbit sum (see class doc)."""
        return 0.5 * self.h_half * backward_orbit_sum(LSVMap(self.alpha), s)

    def to_dict(self):
        return {"alpha": self.alpha, "c1_hat": self.c1_hat,
                "h_half": self.h_half, "samples": self.samples}


def backward_orbit_sum(map_spec: LSVMap, y, rel_tol: float = 1e-10, max_terms: int = 2_000_000):
    """``sum_k x_k`` with ``x_0 = y`` and ``x_{k+1}`` the left preimage of ``x_k``.

    Far out, ``x_k^(-alpha)`` grows linearly in k with slope
    ``alpha 2^alpha``; the remaining tail is added in closed form once the
    error of that closed form drops below ``rel_tol``.
    """
    a = map_spec.alpha
    y = np.atleast_1d(np.asarray(y, dtype=float))
    total = y.copy()
    x = y.copy()
    b = a * 2.0 ** a
    for k in range(max_terms):
        x = np.asarray(lsv_preimage_left(map_spec, x))
        total += x
        live = x > 0
        if not np.any(live):
            break
        # tail of (x^-a + b j)^(-1/a), j >= 1, by the integral from 1/2
        base = np.where(live, x, 1.0) ** -a
        tail = np.where(live, (base + 0.5 * b) ** (1.0 - 1.0 / a) / (b * (1.0 / a - 1.0)), 0.0)
        # the linear growth of x^-a holds to relative order 1/base, and so does the tail
        err = tail / base
        if k > 20 and np.all(err <= rel_tol * total):
            total += tail
            break
    else:
        raise NumericError("backward orbit sum did not converge")
    return total if total.size > 1 else float(total[0])


def calibrate_density(map_spec: LSVMap, rng: np.random.Generator, steps: int = 2 ** 27,
                      chains: int = 8, burn_in: int = DEFAULT_BURN_IN,
                      nbins: int = 2 ** 14) -> InvariantDensityModel:
    """Histogram the invariant density from ``chains`` long orbits."""
    xs = rng.random(chains)
    rs = lsv_noise_state(rng, chains)
    _kernels.lsv_advance(xs, burn_in, map_spec.alpha, rs)
    counts = np.zeros(nbins, dtype=np.int64)
    per_chain = -(-steps // chains)
    _kernels.lsv_histogram(xs, per_chain, map_spec.alpha, nbins, counts, rs)
    total = per_chain * chains
    edges = np.linspace(0.0, 1.0, nbins + 1)
    density = counts * nbins / total
    # local linear fit of the density around 1/2 (h is smooth there)
    w = 0.01
    centers = 0.5 * (edges[:-1] + edges[1:])
    sel = np.abs(centers - 0.5) < w
    slope, intercept = np.polyfit(centers[sel] - 0.5, density[sel], 1)
    h_half = float(intercept)
    a = map_spec.alpha
    c1 = h_half / (2.0 ** (1.0 + a) * (1.0 - a))
    return InvariantDensityModel(a, c1, h_half, total, edges, density)


def fit_measure_exponent(points: np.ndarray, s_grid) -> tuple[float, float]:
    """Regress log of the empirical measure of [0, s) on log s.

    Returns (exponent, prefactor).
    """
    pts = np.sort(np.asarray(points, dtype=float))
    s_grid = np.asarray(s_grid, dtype=float)
    m = np.searchsorted(pts, s_grid, side="left") / len(pts)
    if np.any(m <= 0):
        raise NumericError("empirical measure vanishes on part of the grid")
    slope, icept = np.polyfit(np.log(s_grid), np.log(m), 1)
    return float(slope), float(math.exp(icept))
