"""Rare-event point processes, their limits and goodness of fit.

The one-dimensional process puts a unit mass at ``i/n`` for every exceedance
(or one mass per cluster, carrying the cluster size). The two-dimensional
process keeps the severity of each value on the frequency scale
``y = u_n^{-1}(X_j)``, so that points below ``y = tau`` are exactly the
exceedances of ``u_n(tau)``; projecting those onto the time axis and merging
vertically aligned points gives back a one-dimensional process.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from .catalog import ExampleId
from .clustering import BinarySeries, runs_decluster
from .errors import DomainError, InsufficientDataError, UnsupportedExampleError
from .multiplicity import CompoundPoissonSpec, Degenerate, Geometric, MixGeometric  # noqa: F401
from .observables import SOURCE_NAMES, SOURCE_ZETA1, SOURCE_ZETA2, EmpiricalTail, NegLog

SCHEMA_HEADER = "# schema-version: 1"


# ---------------------------------------------------------------------------
# containers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PointProcess1D:
    """Event times in [0, horizon] with positive integer multiplicities."""

    times: np.ndarray
    mult: np.ndarray
    horizon: float

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        m = np.asarray(self.mult, dtype=np.int64)
        if t.shape != m.shape:
            raise DomainError("times and multiplicities differ in length")
        if len(t) and (np.any(np.diff(t) <= 0) or t[0] < 0 or t[-1] > self.horizon):
            raise DomainError("event times must be strictly increasing inside [0, horizon]")
        if np.any(m < 1):
            raise DomainError("multiplicities must be at least 1")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "mult", m)

    @property
    def total_mass(self) -> int:
        return int(self.mult.sum())

    def __len__(self):
        return len(self.times)

    def mass_in(self, a: float, b: float) -> int:
        i, j = np.searchsorted(self.times, [a, b], side="left")
        return int(self.mult[i:j].sum())

    def unit_window_counts(self, width: float = 1.0) -> np.ndarray:
        """Mass in [k w, (k+1) w) for every complete window inside the horizon."""
        k = int(math.floor(self.horizon / width + 1e-12))
        idx = np.floor(self.times / width).astype(np.int64)
        keep = idx < k
        return np.bincount(idx[keep], weights=self.mult[keep], minlength=k).astype(np.int64)


@dataclass(frozen=True)
class MarkedPointSet2D:
    """Points ``(t, y)`` with ``0 <= y <= y_max``, optionally labelled.

    ``index`` holds the integer orbit positions when the points come from
    data on the grid ``t = index / n``.
    """

    t: np.ndarray
    y: np.ndarray
    horizon: float
    y_max: float
    source: np.ndarray | None = field(default=None, repr=False)
    index: np.ndarray | None = field(default=None, repr=False)
    n: int | None = None

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if t.shape != y.shape:
            raise DomainError("t and y differ in length")
        if np.any(t < 0) or np.any(y < 0):
            raise DomainError("coordinates must be nonnegative")
        if not math.isfinite(self.y_max) or np.any(y > self.y_max):
            raise DomainError("heights must lie below a finite y_max")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "y", y)

    def __len__(self):
        return len(self.t)


# ---------------------------------------------------------------------------
# building processes from data
# ---------------------------------------------------------------------------

def _as_series(data, u):
    if isinstance(data, BinarySeries):
        return data
    if hasattr(data, "series"):
        return data.series(u)
    v = np.asarray(data, dtype=float)
    return BinarySeries(np.flatnonzero(v > u), len(v))


def build_N_n(data, u_n: float, n: int, q: int | None = None,
              declustered: bool = False) -> PointProcess1D:
    """Rare-event process on the time scale ``i / n``.

    ``data`` is a dense value array, scan candidates or a
    :class:`BinarySeries` (then ``u_n`` is ignored). The declustered variant
    places each runs(q) cluster at its first exceedance with the cluster
    size as multiplicity.
    """
    b = _as_series(data, u_n)
    if b.length < n:
        raise DomainError("series shorter than n")
    horizon = b.length / n
    if not declustered:
        return PointProcess1D(b.positions / n, np.ones(b.n_exceed, np.int64), horizon)
    if q is None:
        raise DomainError("declustering needs q")
    part = runs_decluster(b, q)
    return PointProcess1D(part.starts / n, part.sizes, horizon)


def build_N2_n(data, inv_threshold, n: int, y_max: float, sources=None) -> MarkedPointSet2D:
    """Points ``(j / n, u_n^{-1}(X_j))`` kept when the height is at most ``y_max``.

    ``data`` is a dense value array or scan candidates (whose labels are
    used unless ``sources`` is given). ``inv_threshold`` maps values to
    heights and must be nonincreasing.
    """
    if hasattr(data, "positions") and hasattr(data, "values"):
        idx = np.asarray(data.positions, dtype=np.int64)
        vals = np.asarray(data.values, dtype=float)
        length = data.length
        if sources is None:
            sources = data.sources
    else:
        vals = np.asarray(data, dtype=float)
        idx = np.arange(len(vals), dtype=np.int64)
        length = len(vals)
    y = np.asarray(inv_threshold(vals), dtype=float)
    keep = y <= y_max
    src = None if sources is None else np.asarray(sources)[keep]
    return MarkedPointSet2D(idx[keep] / n, y[keep], length / n, float(y_max), src, idx[keep], n)


def inverse_threshold(example: ExampleId | None, z, n: int, g=None,
                      tail: EmpiricalTail | None = None, G=None):
    """Frequency attached to a value: the tau with ``u_n(tau) = z``.

    Analytic for the worked examples; with ``example=None`` the empirical
    tail of a calibration run is interpolated instead.
    """
    z = np.asarray(z, dtype=float)
    if example is None:
        if tail is None:
            raise UnsupportedExampleError("the empirical inverse needs a calibration tail")
        return (n * tail.survival(z))[()]
    kind = example.kind
    if kind == "doubling13":
        return (2.0 * n * np.exp(-z))[()]
    if kind == "doubling_mix":
        return (4.0 * n * np.exp(-z))[()]
    if kind == "mma":
        if G is None:
            return (n * (1.0 - np.clip(z, 0.0, 1.0) ** 2))[()]
        return (n * (1.0 - G.cdf(z) ** 2))[()]
    g = NegLog() if g is None else g
    return (2.0 * n * np.asarray(g.inverse(z)))[()]


# ---------------------------------------------------------------------------
# limit processes
# ---------------------------------------------------------------------------

def simulate_compound_poisson(spec: CompoundPoissonSpec, horizon: float,
                              rng: np.random.Generator) -> PointProcess1D:
    """Exponential gaps of mean ``1 / (theta tau)``, iid multiplicities."""
    if not horizon > 0:
        raise DomainError("horizon must be positive")
    rate = spec.intensity
    times = []
    t = rng.exponential(1.0 / rate)
    while t < horizon:
        times.append(t)
        t += rng.exponential(1.0 / rate)
    return PointProcess1D(np.array(times), spec.multiplicity.sample(len(times), rng), horizon)


def compound_poisson_window_counts(spec: CompoundPoissonSpec, replicas: int,
                                   rng: np.random.Generator) -> np.ndarray:
    """Total mass on [0, 1) for many independent copies (vectorised)."""
    k = rng.poisson(spec.intensity, size=replicas)
    sizes = spec.multiplicity.sample(int(k.sum()), rng)
    owner = np.repeat(np.arange(replicas), k)
    return np.bincount(owner, weights=sizes, minlength=replicas).astype(np.int64)


def _poisson_strip_points(theta, horizon, i, rng):
    """Base points in the strip (i-1, i] x [0, horizon)."""
    t = []
    s = rng.exponential(1.0 / theta)
    while s < horizon:
        t.append(s)
        s += rng.exponential(1.0 / theta)
    t = np.array(t)
    return t, (i - 1) + rng.random(len(t))


def simulate_limit_N2_poisson(theta: float, horizon: float, y_max: float,
                              rng: np.random.Generator) -> MarkedPointSet2D:
    """Two-dimensional Poisson process with intensity ``theta`` times Lebesgue."""
    ts, ys = [], []
    for i in range(1, int(math.ceil(y_max)) + 1):
        t, y = _poisson_strip_points(theta, horizon, i, rng)
        keep = y <= y_max
        ts.append(t[keep])
        ys.append(y[keep])
    t, y = np.concatenate(ts), np.concatenate(ys)
    order = np.argsort(t, kind="stable")
    return MarkedPointSet2D(t[order], y[order], horizon, y_max)


def simulate_limit_N2_periodic(theta: float, gamma: float, horizon: float, y_max: float,
                               rng: np.random.Generator) -> MarkedPointSet2D:
    """Base points of intensity ``theta`` with vertical piles ``gamma^l * U``.

    Every point of a pile shares the base point's time coordinate exactly.
    """
    if not gamma > 1:
        raise DomainError("gamma must exceed 1")
    if not 0.0 < theta < 1.0:
        raise DomainError("theta must lie in (0, 1)")
    ts, ys = [], []
    for i in range(1, int(math.ceil(y_max)) + 1):
        t, u = _poisson_strip_points(theta, horizon, i, rng)
        keep = u <= y_max
        t, u = t[keep], u[keep]
        # number of pile levels gamma^l u <= y_max, l = 0..L
        levels = np.floor(np.log(y_max / u) / math.log(gamma)).astype(np.int64) + 1
        rep_t = np.repeat(t, levels)
        base = np.repeat(u, levels)
        ell = np.arange(levels.sum()) - np.repeat(np.cumsum(levels) - levels, levels)
        y = base * gamma ** ell
        ok = y <= y_max  # guards rounding at the top level
        ts.append(rep_t[ok])
        ys.append(y[ok])
    t, y = np.concatenate(ts), np.concatenate(ys)
    order = np.lexsort((y, t))
    return MarkedPointSet2D(t[order], y[order], horizon, y_max)


def project_H_tau(pts: MarkedPointSet2D, tau: float) -> PointProcess1D:
    """Keep points below ``tau`` and merge points with identical times."""
    if tau > pts.y_max:
        raise DomainError("tau above the truncation level")
    t = pts.t[pts.y < tau]
    if len(t) == 0:
        return PointProcess1D(np.empty(0), np.empty(0, np.int64), pts.horizon)
    times, mult = np.unique(t, return_counts=True)
    return PointProcess1D(times, mult, pts.horizon)


# ---------------------------------------------------------------------------
# goodness of fit
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GofReport:
    statistic: float
    dof: int
    p_value: float
    n: int
    observed: tuple
    expected: tuple
    zero_observed: float | None = None
    zero_expected: float | None = None
    zero_se: float | None = None

    def to_dict(self):
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}


def chisquare_pooled(values, pmf, support_start: int = 0, min_expected: float = 5.0) -> GofReport:
    """Pearson chi-square of integer data against a pmf on the integers.

    Cells start at ``support_start``; cells with small expected counts are
    pooled into their left neighbour and the last cell takes the whole
    upper tail.
    """
    values = np.asarray(values, dtype=np.int64)
    n = len(values)
    if n == 0:
        raise InsufficientDataError("no observations")
    pmf = np.asarray(pmf, dtype=float)
    top = max(int(values.max()), support_start + len(pmf) - 1)
    obs = np.bincount(values - support_start, minlength=top - support_start + 1).astype(float)
    p = np.zeros_like(obs)
    p[:len(pmf)] = pmf[:len(obs)]
    p[-1] += max(0.0, 1.0 - p.sum())  # upper tail goes into the last cell
    exp = n * p
    impossible = float(obs[exp == 0].sum())
    if impossible > 0:
        # data in cells the law rules out: reject outright
        return GofReport(math.inf, max(1, int((exp > 0).sum()) - 1), 0.0, n,
                         tuple(obs.tolist()), tuple(exp.tolist()))
    # pool right to left until every cell has enough expected mass
    cells_o, cells_e = [], []
    acc_o = acc_e = 0.0
    for o, e in zip(obs[::-1], exp[::-1]):
        acc_o += o
        acc_e += e
        if acc_e >= min_expected:
            cells_o.append(acc_o)
            cells_e.append(acc_e)
            acc_o = acc_e = 0.0
    if acc_e > 0 or acc_o > 0:
        if cells_o:
            cells_o[-1] += acc_o
            cells_e[-1] += acc_e
        else:
            cells_o.append(acc_o)
            cells_e.append(acc_e)
    cells_o, cells_e = np.array(cells_o[::-1]), np.array(cells_e[::-1])
    dof = len(cells_o) - 1
    if dof < 1:
        if np.count_nonzero(p) == 1:
            # a one-point law fitted by data that all sit on that point
            return GofReport(0.0, 0, 1.0, n, tuple(cells_o.tolist()), tuple(cells_e.tolist()))
        raise InsufficientDataError("too few cells for a chi-square test")
    stat = float(((cells_o - cells_e) ** 2 / cells_e).sum())
    return GofReport(stat, dof, float(stats.chi2.sf(stat, dof)), n,
                     tuple(cells_o.tolist()), tuple(cells_e.tolist()))


def gof_counts(realized_counts, spec: CompoundPoissonSpec, tol: float = 1e-9) -> GofReport:
    """Compare unit-window counts with the compound Poisson count law."""
    counts = np.asarray(realized_counts, dtype=np.int64)
    if len(counts) < 100:
        raise InsufficientDataError("need at least 100 realisations")
    law = spec.count_law(tol)
    rep = chisquare_pooled(counts, law)
    z_obs = float((counts == 0).mean())
    z_exp = spec.zero_probability()
    se = math.sqrt(z_exp * (1 - z_exp) / len(counts))
    return GofReport(rep.statistic, rep.dof, rep.p_value, rep.n, rep.observed, rep.expected,
                     z_obs, z_exp, se)


def gof_sizes(sizes, multiplicity) -> GofReport:
    """Chi-square of cluster sizes against a multiplicity law on k >= 1."""
    sizes = np.asarray(sizes, dtype=np.int64)
    if len(sizes) == 0:
        raise InsufficientDataError("no clusters")
    top = max(int(sizes.max()), 1)
    pmf = np.asarray(multiplicity.pmf(np.arange(1, top + 1)), dtype=float)
    return chisquare_pooled(sizes, pmf, support_start=1)


# ---------------------------------------------------------------------------
# escape of mass
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MassBalance:
    tau: float
    q: int
    total_mass: int
    mass: dict  # source name -> exceedances below tau
    clusters: dict  # source name -> clusters started from that source
    mean_size: dict
    split: dict  # source name -> share of the exceedance mass
    zeta1_cluster_ratio: float  # zeta1 cluster starts / all exceedances
    size_lists: dict = field(default_factory=dict, repr=False)

    def to_dict(self):
        d = dict(self.__dict__)
        d.pop("size_lists")
        return d


def mass_balance(pts: MarkedPointSet2D, tau: float, q: int) -> MassBalance:
    """Split the exceedance mass below ``tau`` by the maximum it came from.

    Clusters are runs(q) clusters of the exceedances below ``tau`` and take
    the label of their first exceedance; truncated clusters are included.
    """
    if pts.source is None or pts.index is None or pts.n is None:
        raise DomainError("mass balance needs labelled points on an integer grid")
    sel = pts.y < tau
    b = BinarySeries(pts.index[sel], int(round(pts.horizon * pts.n)))
    return source_balance(b, np.asarray(pts.source)[sel], q, tau)


def source_balance(b: BinarySeries, sources, q: int, tau: float = float("nan")) -> MassBalance:
    """Mass balance of a labelled series (one label per exceedance)."""
    src = np.asarray(sources)
    if len(src) != b.n_exceed:
        raise DomainError("need one source label per exceedance")
    part = runs_decluster(b, q)
    first_src = src[part.first] if part.n_clusters else np.empty(0, np.int8)
    total = b.n_exceed
    mass, clusters, mean, split, size_lists = {}, {}, {}, {}, {}
    for code in (SOURCE_ZETA1, SOURCE_ZETA2, 0):
        name = SOURCE_NAMES[code]
        sizes = part.sizes[first_src == code]
        mass[name] = int((src == code).sum())
        clusters[name] = int(len(sizes))
        mean[name] = float(sizes.mean()) if len(sizes) else float("nan")
        split[name] = mass[name] / total if total else float("nan")
        size_lists[name] = sizes
    ratio = clusters["zeta1"] / total if total else float("nan")
    return MassBalance(float(tau), int(q), total, mass, clusters, mean, split, ratio, size_lists)


# ---------------------------------------------------------------------------
# serialisation
# ---------------------------------------------------------------------------

def _write_rows(path, columns, rows):
    path = Path(path)
    with path.open("w", newline="") as fh:
        fh.write(SCHEMA_HEADER + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        w.writerows(rows)
    return path


def _fmt(x):
    return repr(float(x))


def write_points2d_csv(path, pts: MarkedPointSet2D):
    src = pts.source if pts.source is not None else np.zeros(len(pts), np.int8)
    rows = ((_fmt(t), _fmt(y), SOURCE_NAMES[int(s)]) for t, y, s in zip(pts.t, pts.y, src))
    return _write_rows(path, ["t", "y", "source"], rows)


def write_process1d_csv(path, pp: PointProcess1D):
    rows = ((_fmt(t), int(m)) for t, m in zip(pp.times, pp.mult))
    return _write_rows(path, ["t", "multiplicity"], rows)


def write_values_csv(path, index, values):
    rows = ((int(i), _fmt(v)) for i, v in zip(index, values))
    return _write_rows(path, ["index", "value"], rows)


def write_binary_csv(path, b: BinarySeries):
    rows = ((i, int(v)) for i, v in enumerate(b.bits))
    return _write_rows(path, ["index", "bit"], rows)


def read_csv(path):
    """Rows of a schema-tagged CSV as a dict of column lists (strings)."""
    with Path(path).open() as fh:
        header = fh.readline().rstrip("\n")
        if header != SCHEMA_HEADER:
            raise DomainError(f"{path}: missing schema header")
        r = csv.reader(fh)
        cols = next(r)
        data = {c: [] for c in cols}
        for row in r:
            for c, v in zip(cols, row):
                data[c].append(v)
    return data


def read_points2d_csv(path, horizon=None, y_max=None) -> MarkedPointSet2D:
    d = read_csv(path)
    t = np.array(d["t"], dtype=float)
    y = np.array(d["y"], dtype=float)
    src = np.array([SOURCE_NAMES.index(s) for s in d["source"]], dtype=np.int8)
    horizon = float(t.max()) if horizon is None and len(t) else (horizon or 0.0)
    y_max = float(y.max()) if y_max is None and len(y) else (y_max or 1.0)
    return MarkedPointSet2D(t, y, horizon, y_max, src)


def read_process1d_csv(path, horizon) -> PointProcess1D:
    d = read_csv(path)
    return PointProcess1D(np.array(d["t"], dtype=float), np.array(d["multiplicity"], dtype=np.int64),
                          horizon)


# ---------------------------------------------------------------------------
# standalone SVG
# ---------------------------------------------------------------------------

_SVG_W, _SVG_H = 800, 600
_COLORS = {0: "#555555", SOURCE_ZETA1: "#1f77b4", SOURCE_ZETA2: "#d62728"}


def points_svg(pts: MarkedPointSet2D, tau: float, path=None, log_y: bool = False,
               caption: dict | None = None, t_window: tuple | None = None) -> str:
    """Scatter of a marked point set with the threshold line and its projection.

    Points below ``tau`` are projected onto the time axis as crosses; merged
    events carry their multiplicity as a label. ``caption`` entries are
    embedded as XML comments.
    """
    t0, t1 = t_window if t_window else (0.0, pts.horizon)
    sel = (pts.t >= t0) & (pts.t <= t1)
    t, y = pts.t[sel], pts.y[sel]
    src = pts.source[sel] if pts.source is not None else np.zeros(len(t), np.int8)
    left, right, top, bottom = 70, 20, 20, 70
    pw, ph = _SVG_W - left - right, _SVG_H - top - bottom
    y_lo = max(min(y.min() if len(y) else tau, tau) / 2, 1e-12) if log_y else 0.0
    y_hi = pts.y_max

    def sx(v):
        return left + pw * (v - t0) / (t1 - t0 if t1 > t0 else 1.0)

    def sy(v):
        if log_y:
            v = max(v, y_lo)
            f = (math.log(v) - math.log(y_lo)) / (math.log(y_hi) - math.log(y_lo))
        else:
            f = v / y_hi
        return top + ph * (1.0 - f)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{_SVG_W}" height="{_SVG_H}" '
           f'viewBox="0 0 {_SVG_W} {_SVG_H}">']
    for k, v in (caption or {}).items():
        out.append(f"<!-- {k}: {str(v).replace('--', '-')} -->")
    out.append(f'<rect x="0" y="0" width="{_SVG_W}" height="{_SVG_H}" fill="white"/>')
    out.append(f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" stroke="black"/>')
    out.append(f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" stroke="black"/>')
    ty = sy(tau)
    out.append(f'<line x1="{left}" y1="{ty:.2f}" x2="{left + pw}" y2="{ty:.2f}" '
               f'stroke="#2ca02c" stroke-dasharray="6,4"/>')
    out.append(f'<text x="{left + pw - 4}" y="{ty - 6:.2f}" text-anchor="end" '
               f'font-size="13" fill="#2ca02c">&#964; = {tau:g}</text>')
    for ti, yi, si in zip(t, y, src):
        out.append(f'<circle cx="{sx(ti):.2f}" cy="{sy(yi):.2f}" r="2.5" '
                   f'fill="{_COLORS.get(int(si), "#555555")}"/>')
    proj_t, proj_m = np.unique(t[y < tau], return_counts=True)
    base = top + ph + 18
    for ti, m in zip(proj_t, proj_m):
        x = sx(ti)
        out.append(f'<path d="M{x - 4:.2f},{base - 4} L{x + 4:.2f},{base + 4} '
                   f'M{x - 4:.2f},{base + 4} L{x + 4:.2f},{base - 4}" stroke="black"/>')
        if m > 1:
            out.append(f'<text x="{x:.2f}" y="{base + 20}" text-anchor="middle" '
                       f'font-size="11">{m}</text>')
    out.append(f'<text x="{left + pw / 2}" y="{_SVG_H - 8}" text-anchor="middle" '
               f'font-size="13">t</text>')
    out.append(f'<text x="16" y="{top + ph / 2}" font-size="13" '
               f'transform="rotate(-90 16 {top + ph / 2})" text-anchor="middle">'
               f'{"log " if log_y else ""}y</text>')
    for v in (t0, t1):
        out.append(f'<text x="{sx(v):.2f}" y="{top + ph + 50}" text-anchor="middle" '
                   f'font-size="11">{v:g}</text>')
    for v in (y_lo, tau, y_hi) if log_y else (0.0, tau, y_hi):
        out.append(f'<text x="{left - 6}" y="{sy(v) + 4:.2f}" text-anchor="end" '
                   f'font-size="11">{v:.3g}</text>')
    out.append("</svg>")
    text = "\n".join(out) + "\n"
    if path is not None:
        Path(path).write_text(text)
    return text
