"""Exceedance series, declustering and cluster statistics.

Series are stored sparsely (sorted exceedance positions plus the series
length) because the orbits behind them are far too long to keep as bits.

Boundary conventions, chosen so that finite-string identities are exact:

* the start of the series acts like a run of q zeros, so a leading group
  of exceedances is a cluster start;
* a cluster is complete only when followed by at least q zeros inside the
  series. The last cluster can be truncated; its exceedances are
  *censored* and left out of every cluster statistic.

With these rules the number of complete clusters of size k equals
``Q(k-1) - Q(k)``, where ``Q(k)`` counts exceedances followed by exactly k
chained exceedances and then q zeros.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import NamedTuple

import numpy as np

from . import _kernels
from .errors import DomainError, InsufficientDataError, SelectionError

KAPPA_CAP = 64
NO_RETURN = math.inf


# ---------------------------------------------------------------------------
# series
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BinarySeries:
    """A 0/1 series of ``length`` symbols, stored as the positions of the 1s."""

    positions: np.ndarray
    length: int

    def __post_init__(self):
        pos = np.ascontiguousarray(self.positions, dtype=np.int64)
        if pos.ndim != 1:
            raise DomainError("positions must be one-dimensional")
        if len(pos) and (pos[0] < 0 or pos[-1] >= self.length or np.any(np.diff(pos) <= 0)):
            raise DomainError("positions must be strictly increasing inside [0, length)")
        object.__setattr__(self, "positions", pos)

    @classmethod
    def from_bits(cls, bits) -> "BinarySeries":
        arr = np.asarray(bits)
        if arr.ndim != 1:
            raise DomainError("bits must be one-dimensional")
        if not np.all((arr == 0) | (arr == 1)):
            raise DomainError("bits must be 0 or 1")
        return cls(np.flatnonzero(arr), len(arr))

    @classmethod
    def from_string(cls, s: str) -> "BinarySeries":
        s = s.replace(" ", "")
        if set(s) - {"0", "1"}:
            raise DomainError("string may only contain 0 and 1")
        return cls.from_bits(np.frombuffer(s.encode(), dtype=np.uint8) - ord("0"))

    @property
    def bits(self) -> np.ndarray:
        out = np.zeros(self.length, dtype=np.uint8)
        out[self.positions] = 1
        return out

    @property
    def n_exceed(self) -> int:
        return len(self.positions)

    def __len__(self):
        return self.length

    def __str__(self):
        return "".join(map(str, self.bits))


def binarize(values, u: float) -> BinarySeries:
    """Bit i is 1 iff ``values[i] > u``."""
    v = np.asarray(values, dtype=float)
    return BinarySeries(np.flatnonzero(v > u), len(v))


# ---------------------------------------------------------------------------
# declustering
# ---------------------------------------------------------------------------

class Cluster(NamedTuple):
    start: int
    size: int
    gaps: tuple
    complete: bool


@dataclass(frozen=True)
class ClusterPartition:
    """Clusters of one series.

    ``first`` indexes into ``positions`` where each cluster begins; sizes and
    completeness flags are parallel arrays. ``block_counts`` is set for the
    blocks scheme (one entry per block, empty blocks included).
    """

    scheme: str
    param: int
    positions: np.ndarray
    first: np.ndarray
    sizes: np.ndarray
    complete: np.ndarray
    block_counts: np.ndarray | None = None

    @property
    def starts(self) -> np.ndarray:
        return self.positions[self.first]

    @property
    def n_clusters(self) -> int:
        return len(self.sizes)

    @property
    def n_complete(self) -> int:
        return int(self.complete.sum())

    @property
    def truncated(self) -> int:
        return int((~self.complete).sum())

    def clusters(self) -> list[Cluster]:
        out = []
        for f, s, c in zip(self.first, self.sizes, self.complete):
            members = self.positions[f:f + s]
            out.append(Cluster(int(members[0]), int(s), tuple(int(g) for g in np.diff(members)), bool(c)))
        return out

    def complete_sizes(self) -> np.ndarray:
        return self.sizes[self.complete]


def runs_decluster(b: BinarySeries, q: int) -> ClusterPartition:
    """Group exceedances whose consecutive gaps leave at most q-1 zeros."""
    if q < 1:
        raise DomainError("run length q must be at least 1")
    pos = b.positions
    if len(pos) == 0:
        e = np.empty(0, dtype=np.int64)
        return ClusterPartition("runs", q, pos, e, e, np.empty(0, dtype=bool))
    new = np.ones(len(pos), dtype=bool)
    new[1:] = np.diff(pos) > q
    first = np.flatnonzero(new)
    sizes = np.diff(np.append(first, len(pos)))
    last = pos[first + sizes - 1]
    complete = (b.length - 1 - last) >= q
    return ClusterPartition("runs", q, pos, first, sizes, complete)


def blocks_decluster(b: BinarySeries, k_n: int) -> ClusterPartition:
    """One cluster per nonempty block of length ``length // k_n``.

    A trailing partial block, when present, is block number ``k_n + 1``.
    """
    if not 1 <= k_n <= b.length:
        raise DomainError("need 1 <= k_n <= length")
    ell = b.length // k_n
    nblocks = k_n + (1 if b.length % k_n else 0)
    pos = b.positions
    block = pos // ell
    counts = np.bincount(block, minlength=nblocks).astype(np.int64)
    new = np.ones(len(pos), dtype=bool)
    new[1:] = block[1:] != block[:-1]
    first = np.flatnonzero(new)
    sizes = np.diff(np.append(first, len(pos))).astype(np.int64)
    return ClusterPartition("blocks", k_n, pos, first, sizes,
                            np.ones(len(first), dtype=bool), counts)


# ---------------------------------------------------------------------------
# Q counts and the cluster-size distribution
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QCounts:
    """``counts[k]`` = number of exceedances followed by exactly k chained ones.

    ``overflow`` pools k > kappa_max, ``censored`` counts exceedances whose
    chain is not closed by q zeros before the series ends.
    """

    q: int
    counts: np.ndarray
    overflow: int
    censored: int

    def __getitem__(self, k):
        if k < len(self.counts):
            return int(self.counts[k])
        raise KeyError(k)

    @property
    def total(self) -> int:
        return int(self.counts.sum()) + self.overflow + self.censored

    def as_dict(self):
        return {int(k): int(c) for k, c in enumerate(self.counts)}


def _chains(b: BinarySeries, q: int):
    if q < 1:
        raise DomainError("run length q must be at least 1")
    chain, last = _kernels.runs_reverse_chain(b.positions, q)
    censored = (b.length - 1 - b.positions[last]) < q if len(chain) else np.empty(0, bool)
    return chain, censored


def count_Q(b: BinarySeries, q: int, kappa_max: int = KAPPA_CAP) -> QCounts:
    """Classify every exceedance by its number of chained successors."""
    chain, censored = _chains(b, q)
    ok = chain[~censored]
    counts = np.bincount(np.minimum(ok, kappa_max + 1), minlength=kappa_max + 2)
    return QCounts(q, counts[:kappa_max + 1].astype(np.int64), int(counts[kappa_max + 1]),
                   int(censored.sum()))


def size_histogram(b: BinarySeries, q: int) -> dict[int, int]:
    """Number of complete runs clusters of each size."""
    part = runs_decluster(b, q)
    sizes, counts = np.unique(part.complete_sizes(), return_counts=True)
    return {int(s): int(c) for s, c in zip(sizes, counts)}


def empirical_pi(b: BinarySeries, q: int, exact: bool = False) -> dict:
    """Relative frequency of complete cluster sizes.

    With ``exact=True`` the values are :class:`~fractions.Fraction`.
    """
    hist = size_histogram(b, q)
    total = sum(hist.values())
    if total == 0:
        raise InsufficientDataError("no complete cluster in the series")
    if exact:
        return {k: Fraction(c, total) for k, c in hist.items()}
    return {k: c / total for k, c in hist.items()}


def pi_from_q_counts(qc: QCounts, exact: bool = False) -> dict:
    """``(Q(k-1) - Q(k)) / Q(0)`` for every k with a nonzero value."""
    full = np.append(qc.counts, qc.overflow)
    q0 = int(full[0])
    if q0 == 0:
        raise InsufficientDataError("no complete cluster in the series")
    diffs = full[:len(qc.counts) - 1] - full[1:len(qc.counts)]
    ks = np.flatnonzero(diffs) + 1
    if exact:
        return {int(k): Fraction(int(diffs[k - 1]), q0) for k in ks}
    return {int(k): int(diffs[k - 1]) / q0 for k in ks}


def empirical_theta(b: BinarySeries, q: int, exact: bool = False):
    """``Q(0) / #exceedances``, censored exceedances dropped from both."""
    if b.n_exceed == 0:
        raise InsufficientDataError("no exceedances")
    chain, censored = _chains(b, q)
    ok = chain[~censored]
    if len(ok) == 0:
        raise InsufficientDataError("every exceedance is censored")
    q0 = int((ok == 0).sum())
    return Fraction(q0, len(ok)) if exact else q0 / len(ok)


class MeanIdentity(NamedTuple):
    mean_size: Fraction
    inverse_theta: Fraction
    discrepancy: Fraction


def mean_identity_check(b: BinarySeries, q: int) -> MeanIdentity:
    """Mean complete-cluster size against ``1 / theta_hat``, as exact fractions."""
    pi = empirical_pi(b, q, exact=True)
    mean = sum((k * p for k, p in pi.items()), Fraction(0))
    inv = 1 / empirical_theta(b, q, exact=True)
    return MeanIdentity(mean, inv, mean - inv)


# ---------------------------------------------------------------------------
# summary record
# ---------------------------------------------------------------------------

@dataclass
class ClusterStats:
    """Cluster statistics of one series at one threshold."""

    n: int
    tau: float
    q: int
    length: int
    n_exceed: int
    censored: int
    q_counts: list
    q_overflow: int
    h_counts: dict
    theta_hat: float
    pi_hat: dict
    mean_size: float
    longest_cluster: int
    truncated: int
    extra: dict = field(default_factory=dict)

    @property
    def n_clusters(self) -> int:
        return sum(self.h_counts.values())

    def to_json(self) -> str:
        d = asdict(self)
        d["h_counts"] = {str(k): v for k, v in self.h_counts.items()}
        d["pi_hat"] = {str(k): v for k, v in self.pi_hat.items()}
        for k, v in d.items():
            if isinstance(v, float) and math.isnan(v):
                d[k] = None  # keep the output strict JSON
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ClusterStats":
        d = json.loads(text)
        d["h_counts"] = {int(k): v for k, v in d["h_counts"].items()}
        d["pi_hat"] = {(k if k == "tail" else int(k)): v for k, v in d["pi_hat"].items()}
        for k in ("tau", "theta_hat", "mean_size"):
            if d[k] is None:
                d[k] = float("nan")
        return cls(**d)


def cluster_stats(b: BinarySeries, q: int, n: int = 0, tau: float = float("nan"),
                  kappa_cap: int = KAPPA_CAP) -> ClusterStats:
    """All runs-scheme statistics of a series; empty data gives NaN estimates."""
    part = runs_decluster(b, q)
    qc = count_Q(b, q, kappa_cap)
    sizes = part.complete_sizes()
    hist = {int(s): int(c) for s, c in zip(*np.unique(sizes, return_counts=True))}
    ncl = int(len(sizes))
    n_ok = b.n_exceed - qc.censored
    theta = qc[0] / n_ok if n_ok else float("nan")
    pi = {}
    if ncl:
        for k, c in hist.items():
            if k <= kappa_cap:
                pi[k] = c / ncl
        tail = sum(c for k, c in hist.items() if k > kappa_cap)
        if tail:
            pi["tail"] = tail / ncl
    mean = float(sizes.sum() / ncl) if ncl else float("nan")
    longest = int(part.sizes.max()) if part.n_clusters else 0
    return ClusterStats(n=int(n), tau=float(tau), q=int(q), length=int(b.length),
                        n_exceed=int(b.n_exceed), censored=qc.censored,
                        q_counts=[int(c) for c in qc.counts], q_overflow=qc.overflow,
                        h_counts=hist, theta_hat=float(theta), pi_hat=pi, mean_size=mean,
                        longest_cluster=longest, truncated=part.truncated)


# ---------------------------------------------------------------------------
# return times and q selection
# ---------------------------------------------------------------------------

def first_return_time(b: BinarySeries, positions) -> float:
    """Smallest gap from a marked position to the next marked position."""
    p = np.unique(np.asarray(positions, dtype=np.int64))
    if len(p) == 0:
        raise DomainError("need at least one marked position")
    if len(p) == 1:
        return NO_RETURN
    return int(np.diff(p).min())


def q0_return_time(b: BinarySeries, q: int) -> float:
    """Smallest gap from an uncensored Q(0) position to the next exceedance."""
    chain, censored = _chains(b, q)
    idx = np.flatnonzero((chain == 0) & ~censored)
    idx = idx[idx + 1 < len(b.positions)]
    if len(idx) == 0:
        return NO_RETURN
    return int((b.positions[idx + 1] - b.positions[idx]).min())


def _replica_series(process, n, tau, threshold, length, rng):
    u = threshold(n, tau)
    return process.scan(length, u, rng).series(u)


def return_time_table(process, tau, n_grid, q_max, rng, threshold, blocks=2000):
    """``table[q][n]`` = minimal Q(0)-to-exceedance gap on one long orbit."""
    table = {q: {} for q in range(1, q_max + 1)}
    for n in n_grid:
        b = _replica_series(process, n, tau, threshold, blocks * n, rng)
        for q in table:
            table[q][n] = q0_return_time(b, q)
    return table


def select_q(process, tau: float, n_grid, q_max: int, rng: np.random.Generator,
             threshold=None, growth: float = 2.0, blocks: int = 2000) -> int:
    """Smallest run length whose minimal return time grows with n.

    For each q, R(n) is the smallest gap between a Q(0) exceedance and the
    next exceedance on an orbit of ``blocks * n`` steps. q is accepted when
    ``R(n_max) >= growth * R(n_min)`` and ``R(n_max) > q_max``.
    ``threshold(n, tau)`` defaults to an empirical quantile.
    """
    if q_max < 1:
        raise DomainError("q_max must be at least 1")
    n_grid = sorted(int(n) for n in n_grid)
    if len(n_grid) < 2:
        raise DomainError("q selection needs at least two values of n")
    if threshold is None:
        from .observables import threshold_empirical

        def threshold(n, tau):
            return threshold_empirical(process, n, tau, rng=rng).u_n
    table = return_time_table(process, tau, n_grid, q_max, rng, threshold, blocks)
    return choose_q(table, growth)


def choose_q(table: dict, growth: float = 2.0) -> int:
    """Apply the growth rule of :func:`select_q` to a return-time table."""
    q_max = max(table)
    for q in sorted(table):
        ns = sorted(table[q])
        r_small, r_large = table[q][ns[0]], table[q][ns[-1]]
        if r_large >= growth * r_small and r_large > q_max:
            return q
    raise SelectionError(f"no q <= {q_max} passed the return-time growth test",
                         {"return_times": table})


# ---------------------------------------------------------------------------
# anti-clustering diagnostic
# ---------------------------------------------------------------------------

class DPrime(NamedTuple):
    value: float
    se: float
    replicas: int
    q0_hits: int


def dprime_from_series(series, n: int, q: int, k_n: int) -> DPrime:
    """Estimate ``n * sum_{j=q+1}^{n//k_n - 1} P(Q(0) at 0, exceedance at j)``.

    Each series contributes the average, over starts whose lag window fits,
    of (start is an uncensored Q(0) position) times (exceedances in the lag
    window). The spread across series gives the standard error.
    """
    if not 1 <= k_n <= n:
        raise DomainError("need 1 <= k_n <= n")
    hi = n // k_n - 1
    lo = q + 1
    vals, hits = [], 0
    for b in series:
        valid = b.length - hi
        if valid <= 0:
            raise DomainError("series shorter than the lag window")
        if hi < lo or b.n_exceed == 0:
            vals.append(0.0)
            continue
        chain, censored = _chains(b, q)
        starts = b.positions[(chain == 0) & ~censored]
        starts = starts[starts < valid]
        hits += len(starts)
        w = _kernels.window_hits(starts, b.positions, lo, hi)
        vals.append(n * w.sum() / valid)
    vals = np.asarray(vals)
    if hits == 0 and np.all(vals == 0) and any(b.n_exceed for b in series):
        raise InsufficientDataError("no Q(0) position in any replica")
    se = float(vals.std(ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else float("nan")
    return DPrime(float(vals.mean()), se, len(vals), hits)


def dprime_diagnostic(process, n: int, tau: float, q: int, k_n: int, replicas: int,
                      rng: np.random.Generator, threshold=None, blocks: int = 1) -> DPrime:
    """Monte Carlo version of the anti-clustering sum on fresh replicas.

    Each replica is an orbit of ``blocks * n`` steps (at least n) thresholded at
    ``threshold(n, tau)``; ``tau == 0`` gives exactly 0.
    """
    if not 1 <= k_n <= n:
        raise DomainError("need 1 <= k_n <= n")
    if tau == 0:
        return DPrime(0.0, 0.0, replicas, 0)
    if threshold is None:
        from .observables import threshold_empirical

        def threshold(n, tau):
            return threshold_empirical(process, n, tau, rng=rng).u_n
    u = threshold(n, tau)
    seeds = np.random.SeedSequence(int(rng.integers(2 ** 63))).spawn(replicas)
    series = [process.scan(blocks * n, u, np.random.default_rng(s)).series(u) for s in seeds]
    return dprime_from_series(series, n, q, k_n)
