"""Stationary processes ``X_i`` and fast scans for their large values.

A process offers two views of one orbit:

``values(length, rng)``
    the dense value sequence, for short runs and calibration pilots;
``scan(length, u_floor, rng)``
    only the (position, value) pairs with value above ``u_floor``, produced
    without materialising the orbit. Same seed, same orbit: the scan and the
    dense values agree on every position above the floor.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import _kernels
from .clustering import BinarySeries
from .dynamics import (DEFAULT_BURN_IN, DoublingMap, LSVMap, doubling_windows,
                       lsv_noise_state, mma_exceedances, mma_generate, orbit,
                       sample_invariant, windows_to_float)
from .errors import DomainError
from .observables import MMAIdentity

LSV_GROUP = 8  # chains advanced together in one compiled loop
_BUFFER = 1 << 16
_WORD_CHUNK = 1 << 18


@dataclass(frozen=True)
class Candidates:
    """Exceedances of ``u_floor`` on an orbit of ``length`` steps."""

    positions: np.ndarray
    values: np.ndarray
    length: int
    u_floor: float
    points: np.ndarray | None = field(default=None, repr=False)
    sources: np.ndarray | None = field(default=None, repr=False)

    def above(self, u: float) -> "Candidates":
        if u < self.u_floor:
            raise DomainError("cannot lower the threshold below the scan floor")
        keep = self.values > u
        pick = (lambda a: None if a is None else a[keep])
        return Candidates(self.positions[keep], self.values[keep], self.length, u,
                          pick(self.points), pick(self.sources))

    def series(self, u: float) -> BinarySeries:
        if u < self.u_floor:
            raise DomainError("cannot lower the threshold below the scan floor")
        return BinarySeries(self.positions[self.values > u], self.length)

    def __len__(self):
        return len(self.positions)


def _intervals(observable, u):
    ivs = [(lo, hi) for lo, hi in observable.exceedance_intervals(u) if hi > lo]
    lo = np.array([a for a, _ in ivs], dtype=float)
    hi = np.array([b for _, b in ivs], dtype=float)
    return lo, hi


def _finish(pos, pts, length, u_floor, observable):
    pos = np.asarray(pos, dtype=np.int64)
    pts = np.asarray(pts, dtype=float)
    vals = observable(pts) if len(pts) else np.empty(0)
    keep = vals > u_floor
    pts = pts[keep]
    return Candidates(pos[keep], np.asarray(vals)[keep], length, u_floor, pts,
                      observable.source_of(pts) if hasattr(observable, "source_of") else None)


@dataclass(frozen=True)
class DynamicalProcess:
    """``X_i = phi(T^i x_0)`` with x_0 drawn from the invariant measure."""

    map: DoublingMap | LSVMap
    observable: object
    burn_in: int = DEFAULT_BURN_IN

    kind = "dynamical"

    # -- dense ----------------------------------------------------------------
    def points(self, length: int, rng: np.random.Generator) -> np.ndarray:
        x0 = sample_invariant(self.map, rng, self.burn_in)
        return orbit(self.map, x0, length, rng)

    def values(self, length: int, rng: np.random.Generator) -> np.ndarray:
        return np.asarray(self.observable(self.points(length, rng)), dtype=float)

    def iter_points(self, length: int, rng: np.random.Generator, chunk: int = 1 << 22):
        """The orbit of :meth:`points` in consecutive chunks."""
        chunk = max(64, chunk - chunk % 64)
        if isinstance(self.map, DoublingMap):
            s = int(rng.bit_generator.random_raw())
            done = 0
            while done < length:
                m = min(chunk, length - done)
                words = np.asarray(rng.bit_generator.random_raw(-(-m // 64)), dtype=np.uint64)
                win = doubling_windows(s, words, m + 1)
                s = int(win[m])
                yield windows_to_float(win[:m])
                done += m
            return
        x = sample_invariant(self.map, rng, self.burn_in)
        rs = lsv_noise_state(rng)
        done = 0
        while done < length:
            m = min(chunk, length - done)
            pts = _kernels.lsv_orbit(x, m + 1, self.map.alpha, rs)
            x = float(pts[m])
            yield pts[:m]
            done += m

    def iter_values(self, length: int, rng: np.random.Generator, chunk: int = 1 << 22):
        for pts in self.iter_points(length, rng, chunk):
            yield np.asarray(self.observable(pts), dtype=float)

    # -- sparse ---------------------------------------------------------------
    def scan(self, length: int, u_floor: float, rng: np.random.Generator) -> Candidates:
        if isinstance(self.map, DoublingMap):
            return self._scan_doubling(length, u_floor, rng)
        return self.scan_many(length, u_floor, [rng])[0]

    def scan_many(self, length: int, u_floor: float, rngs) -> list[Candidates]:
        """Independent scans, one per generator; LSV chains run in lock-step."""
        if isinstance(self.map, DoublingMap):
            return [self._scan_doubling(length, u_floor, r) for r in rngs]
        out = []
        for i in range(0, len(rngs), LSV_GROUP):
            out.extend(self._scan_lsv(length, u_floor, rngs[i:i + LSV_GROUP]))
        return out

    def _scan_doubling(self, length, u_floor, rng):
        # same draws as sample_invariant + orbit: one 64-bit start, then words
        lo, hi = _intervals(self.observable, u_floor)
        scale = float(2 ** 64)
        lo_i = np.array([max(0, int(a * scale) - 2) for a in lo], dtype=np.uint64)
        hi_i = np.array([min(2 ** 64 - 1, int(b * scale) + 2) for b in hi], dtype=np.uint64)
        bitgen = rng.bit_generator
        s = np.uint64(bitgen.random_raw())
        pos_chunks, s_chunks = [], []
        done = 0
        while done < length:
            nwords = min(_WORD_CHUNK, -(-(length - done) // 64))
            words = np.asarray(bitgen.random_raw(nwords), dtype=np.uint64)
            w = 0
            while w != -1 and w < nwords and done < length:
                # one word can record up to 64 states
                buf_pos = np.empty(max(_BUFFER, 64), dtype=np.int64)
                buf_s = np.empty(max(_BUFFER, 64), dtype=np.uint64)
                s, steps, w, cnt = _kernels.doubling_scan(words, s, w, length - done, done,
                                                          lo_i, hi_i, buf_pos, buf_s, 0)
                s = np.uint64(s)  # numba hands back a Python int
                done += steps
                pos_chunks.append(buf_pos[:cnt])
                s_chunks.append(buf_s[:cnt])
        pos = np.concatenate(pos_chunks) if pos_chunks else np.empty(0, np.int64)
        pts = windows_to_float(np.concatenate(s_chunks)) if s_chunks else np.empty(0)
        return _finish(pos, pts, length, u_floor, self.observable)

    def _scan_lsv(self, length, u_floor, rngs):
        lo, hi = _intervals(self.observable, u_floor)
        m = len(rngs)
        # same draws, in the same order, as sample_invariant followed by orbit
        xs = np.array([r.random() for r in rngs])
        burn = np.concatenate([lsv_noise_state(r) for r in rngs])
        _kernels.lsv_advance(xs, self.burn_in, self.map.alpha, burn)
        rs = np.concatenate([lsv_noise_state(r) for r in rngs])
        pos = [[] for _ in range(m)]
        pts = [[] for _ in range(m)]
        done = 0
        while done < length:
            buf_pos = np.empty((m, _BUFFER), dtype=np.int64)
            buf_x = np.empty((m, _BUFFER), dtype=np.float64)
            counts = np.zeros(m, dtype=np.int64)
            steps = _kernels.lsv_scan(xs, done, length - done, self.map.alpha, lo, hi,
                                      buf_pos, buf_x, counts, rs)
            done += steps
            for k in range(m):
                pos[k].append(buf_pos[k, :counts[k]])
                pts[k].append(buf_x[k, :counts[k]])
        return [_finish(np.concatenate(pos[k]), np.concatenate(pts[k]), length, u_floor,
                        self.observable) for k in range(m)]

    def to_dict(self):
        return {"kind": "dynamical", "map": self.map.to_dict(),
                "observable": self.observable.to_dict(), "burn_in": self.burn_in}


@dataclass(frozen=True)
class MMAProcess:
    """``X_i = max(Y_{i-2}, Y_i)`` with iid ``Y ~ G`` (default uniform)."""

    G: object = None

    kind = "mma"
    observable = MMAIdentity()

    @property
    def marginal(self):
        return stats.uniform() if self.G is None else self.G

    def values(self, length, rng):
        return mma_generate(self.marginal, length, rng)

    def iter_values(self, length, rng, chunk: int = 1 << 22):
        yield self.values(length, rng)

    def scan(self, length, u_floor, rng):
        pos, val = mma_exceedances(self.marginal, length, u_floor, rng)
        return Candidates(pos, val, length, u_floor)

    def scan_many(self, length, u_floor, rngs):
        return [self.scan(length, u_floor, r) for r in rngs]

    def to_dict(self):
        G = self.marginal
        return {"kind": "mma", "marginal": G.dist.name, "args": list(G.args),
                "kwds": dict(G.kwds)}


@dataclass(frozen=True)
class IIDProcess:
    """Independent uniform values; the clustering-free reference."""

    kind = "iid"
    observable = MMAIdentity()

    def values(self, length, rng):
        return rng.random(length)

    def iter_values(self, length, rng, chunk: int = 1 << 22):
        yield self.values(length, rng)

    def scan(self, length, u_floor, rng):
        p = 1.0 - max(u_floor, 0.0)
        if p >= 1.0:
            v = rng.random(length)
            return Candidates(np.arange(length), v, length, u_floor)
        k = rng.binomial(length, p)
        pos = np.sort(rng.choice(length, size=k, replace=False)).astype(np.int64)
        return Candidates(pos, u_floor + p * rng.random(k), length, u_floor)

    def scan_many(self, length, u_floor, rngs):
        return [self.scan(length, u_floor, r) for r in rngs]

    def to_dict(self):
        return {"kind": "iid"}


ProcessSpec = DynamicalProcess | MMAProcess | IIDProcess
