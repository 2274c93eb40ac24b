"""Release checks: the eleven acceptance criteria, runnable at two sizes.

``run_suite(profile)`` executes every criterion with fixed seeds and
returns one :class:`CriterionResult` per criterion. The ``full`` profile
uses the stated sample sizes; ``reduced`` shrinks replica counts where the
tolerances leave room, for the ``selftest`` command; ``smoke`` only
exercises the code paths.
"""
from __future__ import annotations

import math
import re
import time
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import analytic
from .catalog import DOUBLING13, DOUBLING_MIX, MMA, periodic_lsv, smith_lsv
from .clustering import BinarySeries, _chains, count_Q, mean_identity_check, pi_from_q_counts
from .dynamics import DoublingMap, LSVMap, lsv_periodic_point, lsv_preimage_left, iterate_exact
from .experiment import ExperimentConfig, run_escape_mass, run_estimate
from .multiplicity import CompoundPoissonSpec, Geometric
from .observables import LogDistSingle
from .processes import DynamicalProcess
from .repp import gof_sizes, project_H_tau, simulate_compound_poisson, simulate_limit_N2_periodic
from .scenarios import build_scenario

SEED = 20240601


@dataclass(frozen=True)
class Profile:
    name: str
    strings: int
    mma: tuple  # (n, replicas, blocks)
    doubling: tuple
    orbit_length: int
    smith_grid: tuple
    smith: tuple  # (replicas, blocks)
    periodic: tuple
    cp_replicas: int
    kernel_steps: int
    workers: int = 1


FULL = Profile("full", 10_000, (10 ** 6, 50, 100), (10 ** 6, 50, 200), 10 ** 7,
               (10 ** 4, 10 ** 5, 10 ** 6), (30, 1000), (10 ** 6, 30, 300), 10 ** 5, 10 ** 8)
REDUCED = Profile("reduced", 10_000, (10 ** 6, 20, 100), (10 ** 6, 20, 250), 10 ** 7,
                  (10 ** 4, 10 ** 5, 10 ** 6), (30, 1000), (10 ** 6, 16, 300), 10 ** 5, 10 ** 8)
# plumbing only: sizes too small for most tolerances to hold
SMOKE = Profile("smoke", 200, (10 ** 4, 4, 100), (10 ** 5, 4, 100), 10 ** 6,
                (10 ** 3, 10 ** 4), (4, 100), (10 ** 4, 4, 100), 10 ** 4, 10 ** 6)
PROFILES = {"full": FULL, "reduced": REDUCED, "smoke": SMOKE}


@dataclass
class CriterionResult:
    number: int
    title: str
    passed: bool
    summary: str
    seconds: float = 0.0
    details: dict = field(default_factory=dict)

    def line(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        return f"[{flag}] {self.number:>2} {self.title}: {self.summary} ({self.seconds:.1f} s)"


def _timed(number, title, budget):
    """Decorator: time the check and fold the runtime budget into the verdict."""
    def wrap(fn):
        def run(*args, **kw):
            t0 = time.perf_counter()
            ok, summary, details = fn(*args, **kw)
            dt = time.perf_counter() - t0
            if dt > budget:
                summary += f"; over the {budget:g} s budget"
            details["budget_s"] = budget
            return CriterionResult(number, title, bool(ok and dt <= budget), summary, dt, details)
        run.number = number
        return run
    return wrap


# ---------------------------------------------------------------------------
# 1-2: combinatorics on random strings
# ---------------------------------------------------------------------------

def random_corpus(count: int, seed: int = SEED):
    """(bits, q) pairs: lengths 50-5000, densities 0.05-0.5, q in {1, 2, 3}."""
    rng = np.random.default_rng(seed)
    for _ in range(count):
        length = int(rng.integers(50, 5001))
        density = rng.uniform(0.05, 0.5)
        q = int(rng.integers(1, 4))
        yield rng.random(length) < density, q


def h_route_sizes(bits, q: int) -> list[int]:
    """Complete cluster sizes read off the string with a regular expression.

    A cluster starts after q zeros (the series start counts as q zeros),
    chains ones separated by fewer than q zeros, and is complete when q
    zeros follow it.
    """
    s = b"0" * q + (np.asarray(bits, dtype=np.uint8) + 48).tobytes()
    pat = re.compile(rb"(?<=0{%d})(1(?:0{0,%d}1)*)(?=0{%d})" % (q, q - 1, q))
    return [m.group(1).count(b"1") for m in pat.finditer(s)]


@_timed(1, "H-counting equals Q-counting on random strings", 10.0)
def criterion_1(profile: Profile):
    bad, strings, clusters = 0, 0, 0
    for bits, q in random_corpus(profile.strings):
        strings += 1
        sizes = h_route_sizes(bits, q)
        b = BinarySeries.from_bits(bits)
        qc = count_Q(b, q, kappa_max=len(bits))
        if not sizes:
            bad += qc.counts.sum() != 0
            continue
        clusters += len(sizes)
        h = {k: Fraction(c, len(sizes)) for k, c in Counter(sizes).items()}
        bad += pi_from_q_counts(qc, exact=True) != h
    return bad == 0, f"{strings} strings, {clusters} clusters, {bad} mismatches", \
        {"strings": strings, "clusters": clusters, "mismatches": int(bad)}


@_timed(2, "mean cluster size times theta_hat equals 1 exactly", 10.0)
def criterion_2(profile: Profile):
    bad, checked = 0, 0
    for bits, q in random_corpus(profile.strings):
        b = BinarySeries.from_bits(bits)
        qc = count_Q(b, q, kappa_max=len(bits))
        if qc[0] == 0:
            continue
        checked += 1
        m = mean_identity_check(b, q)
        pi = pi_from_q_counts(qc, exact=True)
        theta = Fraction(qc[0], b.n_exceed - qc.censored)
        product = sum((k * p for k, p in pi.items()), Fraction(0)) * theta
        bad += (m.discrepancy != 0) or (product != 1)
    return bad == 0, f"{checked} strings with complete clusters, {bad} nonzero discrepancies", \
        {"checked": checked, "nonzero": int(bad)}


# ---------------------------------------------------------------------------
# 3-5: examples with a classical extremal index
# ---------------------------------------------------------------------------

def _estimate(example, n, replicas, blocks, q, tau, profile, **kw):
    cfg = ExperimentConfig(example=example, n=[n], tau=tau, q=q, replicas=replicas,
                           blocks=blocks, seed=SEED, workers=profile.workers, emit=[], **kw)
    return run_estimate(cfg, write=False)


@_timed(3, "MMA: theta = 1/2, pi(2) >= 0.95", 60.0)
def criterion_3(profile: Profile):
    n, reps, blocks = profile.mma
    rep = _estimate("mma", n, reps, blocks, 2, 2.0, profile)
    a = rep.per_n[0]
    th, pi2 = a["theta_hat"], a["pi"][1]["pi_hat"]
    target = analytic.theta(MMA)
    ok = abs(th - target) <= 0.03 and pi2 >= 0.95
    return ok, f"theta_hat={th:.4f}±{a['theta_se']:.4f} (target {target}), pi_hat(2)={pi2:.4f}", \
        {"theta_hat": th, "theta_se": a["theta_se"], "pi2": pi2}


def _classic(example, q_expected, tol_theta, profile):
    n, reps, blocks = profile.doubling
    rep = _estimate(example.key(), n, reps, blocks, "auto", 1.0, profile)
    a = rep.per_n[0]
    th, mean = a["theta_hat"], a["mean_size"]
    t_or, m_or = analytic.theta(example), analytic.mean_cluster_size(example)
    p = a["gof"]["sizes"].get("p_value", 0.0)
    ok = (rep.q == q_expected and abs(th - t_or) <= tol_theta and abs(mean - m_or) <= 0.05
          and p > 0.01)
    summary = (f"q_auto={rep.q}, theta_hat={th:.4f}±{a['theta_se']:.4f} (oracle {t_or:.4f}), "
               f"mean size={mean:.4f} (oracle {m_or:.4f}), sizes chi2 p={p:.3f}")
    return ok, summary, {"q": rep.q, "theta_hat": th, "theta_se": a["theta_se"],
                         "mean_size": mean, "p_sizes": p}


@_timed(4, "Doubling map, maximum at 1/3: theta = 3/4, geometric(3/4) sizes", 120.0)
def criterion_4(profile: Profile):
    return _classic(DOUBLING13, 2, 0.02, profile)


@_timed(5, "Doubling map, maxima at 1/3 and 5/7: theta = 13/16, mean 16/13", 120.0)
def criterion_5(profile: Profile):
    return _classic(DOUBLING_MIX, 3, 0.02, profile)


@_timed(6, "interval measures of the chained-return sets match orbit frequencies", 120.0)
def criterion_6(profile: Profile):
    n, tau, q = 1000, 1.0, 2
    length = profile.orbit_length
    proc = DynamicalProcess(DoublingMap(), LogDistSingle(1 / 3))
    u = math.log(2 * n / tau)
    b = proc.scan(length, u, np.random.default_rng(np.random.SeedSequence([SEED, 6]))).series(u)
    chain, censored = _chains(b, q)
    batches = 100
    blen = length // batches
    rows, ok = [], True
    for k in range(4):
        pos = b.positions[(chain == k) & ~censored]
        per = np.bincount(np.minimum(pos // blen, batches - 1), minlength=batches) / blen
        freq = len(pos) / length
        se = per.std(ddof=1) / math.sqrt(batches)
        exact = analytic.Qk_measure_doubling(DOUBLING13, n, tau, k)
        z = (freq - exact) / se if se > 0 else math.inf
        ok &= abs(z) <= 3
        rows.append({"kappa": k, "empirical": freq, "exact": exact, "se": se, "z": z})
    summary = ", ".join(f"k={r['kappa']}: z={r['z']:+.2f}" for r in rows)
    return ok, summary, {"rows": rows}


# ---------------------------------------------------------------------------
# 7-9: indifferent fixed point
# ---------------------------------------------------------------------------

_SMITH_CACHE: dict = {}


def smith_report(profile: Profile):
    """Estimate run shared by criteria 7 and 9."""
    key = (profile.name, profile.workers)
    if key not in _SMITH_CACHE:
        reps, blocks = profile.smith
        cfg = ExperimentConfig(example="smith_lsv:0.2", n=list(profile.smith_grid), tau=1.0,
                               q=1, replicas=reps, blocks=blocks, seed=SEED,
                               workers=profile.workers, emit=[])
        t0 = time.perf_counter()
        rep = run_estimate(cfg, write=False)
        _SMITH_CACHE[key] = (cfg, rep, time.perf_counter() - t0)
    return _SMITH_CACHE[key]


@_timed(7, "indifferent point with a non-periodic second maximum", 600.0)
def criterion_7(profile: Profile):
    _, rep, _ = smith_report(profile)
    ths = [a["theta_hat"] for a in rep.per_n]
    pi1 = [a["pi"][0]["pi_hat"] for a in rep.per_n]
    prod = [a["mean_times_theta"] for a in rep.per_n]
    flag = rep.per_n[-1]["oracle"]["ei_equals_inverse_mean"]
    exact = all(a["identity_exact"] for a in rep.per_n)
    ok = (0.42 <= ths[-1] <= 0.58 and all(x < y for x, y in zip(pi1, pi1[1:]))
          and all(abs(p - 1) <= 1e-12 for p in prod) and exact and flag is False
          and analytic.mean_cluster_size(smith_lsv(0.2)) == 1.0)
    summary = (f"theta_hat={', '.join(f'{t:.4f}' for t in ths)}; "
               f"pi_hat(1)={', '.join(f'{p:.4f}' for p in pi1)}; "
               f"max|mean*theta-1|={max(abs(p - 1) for p in prod):.1e}; "
               f"ei_equals_inverse_mean={flag}")
    return ok, summary, {"theta": ths, "pi1": pi1, "products": prod, "flag": flag}


@_timed(8, "indifferent point with a period-2 second maximum", 600.0)
def criterion_8(profile: Profile):
    ex = periodic_lsv(0.2, 2)
    lsv = LSVMap(0.2)
    z = lsv_periodic_point(lsv, 2)
    gamma = analytic.gamma_for(ex)
    h = 1e-6
    fd = (iterate_exact(lsv, z + h, 2) - iterate_exact(lsv, z - h, 2)) / (2 * h)
    rel = abs(fd - gamma) / gamma
    n, reps, blocks = profile.periodic
    rep = _estimate(ex.key(), n, reps, blocks, 2, 1.0, profile)
    a = rep.per_n[0]
    target = 0.5 * (1 - 1 / gamma)
    p = a["gof"]["zeta2_sizes"].get("p_value", 0.0)
    ok = rel < 1e-6 and abs(a["theta_hat"] - target) <= 0.08 and p > 0.01
    summary = (f"gamma={gamma:.6f} (finite-difference rel err {rel:.1e}), "
               f"theta_hat={a['theta_hat']:.4f} (target {target:.4f}), "
               f"second-maximum cluster sizes chi2 p={p:.3f}")
    return ok, summary, {"gamma": gamma, "rel_err": rel, "theta_hat": a["theta_hat"], "p": p}


@_timed(9, "escape of mass: half the exceedances sit at the indifferent point", 300.0)
def criterion_9(profile: Profile):
    cfg, rep, _ = smith_report(profile)
    res = run_escape_mass(cfg, write=False, scen=None, report=rep)
    share = res["rows"][-1]["zeta1_share"]
    slope = res["slope"]
    ok = abs(share - 0.5) <= 0.05 and abs(slope - (-0.25)) <= 0.10
    summary = (f"indifferent-point share at n={res['rows'][-1]['n']}: {share:.4f}"
               f"±{res['rows'][-1]['zeta1_share_se']:.4f}; cluster-frequency slope {slope:.3f}")
    return ok, summary, {"rows": res["rows"], "slope": slope}


# ---------------------------------------------------------------------------
# 10-11: limit processes and kernels
# ---------------------------------------------------------------------------

@_timed(10, "compound Poisson zero cell and pile projection", 60.0)
def criterion_10(profile: Profile):
    rng = np.random.default_rng(np.random.SeedSequence([SEED, 10]))
    spec = CompoundPoissonSpec(0.75, 1.0, Geometric(0.75))
    m = profile.cp_replicas
    counts = simulate_compound_poisson(spec, float(m), rng).unit_window_counts()
    zero = float((counts == 0).mean())
    target = spec.zero_probability()
    pts = simulate_limit_N2_periodic(0.75, 4.0, m / 0.75, 1.0, rng)
    proj = project_H_tau(pts, 1.0)
    gof = gof_sizes(proj.mult, Geometric(0.75))
    ok = abs(zero - target) <= 0.01 and gof.p_value > 0.01
    summary = (f"zero cell {zero:.4f} vs {target:.4f}; {len(proj)} projected events, "
               f"geometric(3/4) chi2 p={gof.p_value:.3f}")
    return ok, summary, {"zero": zero, "target": target, "p": gof.p_value}


def bitstream_checksum(first: int, words: np.ndarray, steps: int, chunk: int = 1 << 22):
    """Top-32-bit checksum of the shift windows, computed from unpacked bits."""
    total = 0
    stream = np.concatenate([np.array([first], dtype=np.uint64), words])
    bits = np.unpackbits(stream.astype(">u8").view(np.uint8))
    weights = (np.uint64(1) << np.arange(31, -1, -1, dtype=np.uint64))
    for s in range(0, steps, chunk):
        e = min(steps, s + chunk)
        acc = np.zeros(e - s, dtype=np.uint64)
        for j in range(32):
            acc += bits[s + j:e + j].astype(np.uint64) * weights[j]
        total += int(acc.sum(dtype=np.uint64))
    last = np.packbits(bits[steps:steps + 64]).view(">u8")[0]
    return total % 2 ** 64, int(last)


@_timed(11, "preimage round trip and bit-exact doubling orbit", 60.0)
def criterion_11(profile: Profile):
    rng = np.random.default_rng(np.random.SeedSequence([SEED, 11]))
    worst = 0.0
    for alpha in (0.2, 0.5, 0.9):
        lsv = LSVMap(alpha)
        y = rng.random(1000)
        x = lsv_preimage_left(lsv, y)
        worst = max(worst, float(np.max(np.abs(lsv.step(x) - y))))
        x = 0.5 * rng.random(1000)
        worst = max(worst, float(np.max(np.abs(lsv_preimage_left(lsv, lsv.step(x)) - x))))
    steps = profile.kernel_steps
    seed = np.random.SeedSequence([SEED, 12])
    proc = DynamicalProcess(DoublingMap(), LogDistSingle(1 / 3))
    total, last = 0, None
    for pts in proc.iter_points(steps + 1, np.random.default_rng(seed)):
        top = np.floor(pts * 2.0 ** 32).astype(np.uint64)
        last = pts[-1]
        total += int(top.sum(dtype=np.uint64))
    total -= int(np.floor(last * 2.0 ** 32))  # drop the extra final point
    total %= 2 ** 64
    bitgen = np.random.default_rng(seed).bit_generator
    first = int(bitgen.random_raw())
    words = np.asarray(bitgen.random_raw(-(-(steps + 1) // 64) + 1), dtype=np.uint64)
    ref, ref_last = bitstream_checksum(first, words, steps)
    last_ok = int(np.floor(last * 2.0 ** 53)) == ref_last >> 11
    ok = worst < 1e-12 and total == ref and last_ok
    summary = (f"max round-trip error {worst:.1e}; checksum over {steps:.0e} steps "
               f"{'matches' if total == ref and last_ok else 'DIFFERS'}")
    return ok, summary, {"worst": worst, "checksum": total, "reference": ref}


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6,
            criterion_7, criterion_8, criterion_9, criterion_10, criterion_11]


def run_suite(profile: Profile | str = "reduced", only=None, echo=print) -> list[CriterionResult]:
    if isinstance(profile, str):
        profile = PROFILES[profile]
    out = []
    for crit in CRITERIA:
        if only and crit.number not in only:
            continue
        res = crit(profile)
        if echo:
            echo(res.line())
        out.append(res)
    return out


def build_all_scenarios():
    """Touch every scenario once (compiles kernels, calibrates densities)."""
    return [build_scenario(ex, SEED) for ex in (MMA, DOUBLING13, DOUBLING_MIX, smith_lsv(0.2),
                                                periodic_lsv(0.2, 2))]
