"""Seeded replica experiments: configuration, execution and reports.

Every random stream is derived from the master seed by a fixed key:

=========================  ===============================
replica r at level n       ``SeedSequence([seed, 0, n, r])``
q selection                ``SeedSequence([seed, 1])``
LSV density calibration    ``SeedSequence([seed, 2])``
empirical threshold at n   ``SeedSequence([seed, 3, n])``
D' diagnostic at n         ``SeedSequence([seed, 4, n])``
limit simulation at n      ``SeedSequence([seed, 5, n])``
=========================  ===============================

so outputs do not depend on how replicas are spread over workers.
"""
from __future__ import annotations

import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from fractions import Fraction
from itertools import repeat
from pathlib import Path

import numpy as np
import yaml

from . import analytic
from .catalog import ExampleId
from .clustering import (ClusterStats, choose_q, cluster_stats, dprime_diagnostic,
                         return_time_table, runs_decluster)
from .dynamics import LSVMap
from .errors import ConfigError, InsufficientDataError, RareClustersError, SelectionError
from .multiplicity import Degenerate, Geometric
from .observables import SOURCE_NAMES, ThresholdSchedule, threshold_empirical
from .processes import LSV_GROUP, DynamicalProcess
from .repp import (build_N2_n, build_N_n, gof_counts, gof_sizes, mass_balance, points_svg,
                   project_H_tau, source_balance, write_points2d_csv, write_process1d_csv,
                   write_values_csv)
from .scenarios import DENSITY_STEPS, Scenario, build_scenario, custom_scenario, simulate_limit

EMIT_CHOICES = ("csv", "json", "svg", "png")
TAG_REPLICA, TAG_SELECT, TAG_DENSITY, TAG_THRESHOLD, TAG_DPRIME, TAG_LIMIT = range(6)


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass
class ExperimentConfig:
    """Everything that determines a run. See the README for the file schema."""

    example: str | None = "doubling13"
    custom: dict | None = None
    n: list = field(default_factory=lambda: [100_000])
    tau: float = 1.0
    q: int | str = "auto"
    q_max: int = 4
    select_n: list = field(default_factory=lambda: [100, 1000, 10_000, 100_000])
    select_blocks: int = 2000
    select_growth: float = 2.0
    replicas: int = 8
    blocks: int | None = None
    seed: int = 20240601
    burn_in: int = 10_000
    threshold: str = "analytic"
    calib_factor: float = 100.0
    k_rule: str = "sqrt"
    dprime: bool = False
    dprime_replicas: int = 20
    kappa_max: int = 10
    kappa_cap: int = 64
    min_clusters: int = 30
    y_max_factor: float = 10.0
    delta: float = 0.05
    g: dict | None = None
    density_steps: int = DENSITY_STEPS
    thin: float = 0.01
    full_output_max: int = 1_000_000
    out: str = "out"
    emit: list = field(default_factory=lambda: list(EMIT_CHOICES))
    workers: int = 1

    def __post_init__(self):
        if isinstance(self.n, (int, float)):
            self.n = [self.n]
        if isinstance(self.emit, str):
            self.emit = [e for e in self.emit.split(",") if e]
        self.validate()

    def validate(self):
        def positive(name, integral=True):
            v = getattr(self, name)
            if integral and (isinstance(v, bool) or not isinstance(v, int)):
                raise ConfigError(f"{name} must be an integer, got {v!r}")
            if not v > 0:
                raise ConfigError(f"{name} must be positive")

        if (self.example is None) == (self.custom is None):
            raise ConfigError("give exactly one of example and custom")
        if self.example is not None:
            ExampleId.parse(self.example)
        if self.custom is not None:
            if set(self.custom) != {"map", "observable"}:
                raise ConfigError("custom needs exactly the keys map and observable")
            if self.threshold != "empirical":
                raise ConfigError("custom processes need threshold: empirical")
        if not self.n or any(isinstance(v, bool) or int(v) != v or v < 1 for v in self.n):
            raise ConfigError("n must be a positive integer or a list of them")
        self.n = [int(v) for v in self.n]
        if not (isinstance(self.tau, (int, float)) and self.tau > 0):
            raise ConfigError("tau must be positive")
        self.tau = float(self.tau)
        if self.q != "auto":
            positive("q")
        for name in ("q_max", "select_blocks", "replicas", "burn_in", "dprime_replicas",
                     "kappa_max", "kappa_cap", "min_clusters", "density_steps",
                     "full_output_max", "workers"):
            positive(name)
        if self.blocks is not None:
            positive("blocks")
        for name in ("select_growth", "calib_factor", "y_max_factor", "delta"):
            positive(name, integral=False)
        if len(self.select_n) < 2:
            raise ConfigError("select_n needs at least two values")
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) or not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if self.threshold not in ("analytic", "empirical"):
            raise ConfigError("threshold must be analytic or empirical")
        k_exponent(self.k_rule)
        if not 0 < self.thin <= 1:
            raise ConfigError("thin must lie in (0, 1]")
        bad = [e for e in self.emit if e not in EMIT_CHOICES]
        if bad:
            raise ConfigError(f"unknown emit flags {bad}; choose from {EMIT_CHOICES}")

    # serialisation ----------------------------------------------------------
    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a mapping")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        d = dict(d)
        if "custom" in d and "example" not in d:
            d["example"] = None
        return cls(**d)

    def dumps(self, fmt: str = "yaml") -> str:
        if fmt == "json":
            return json.dumps(self.to_dict(), indent=2, sort_keys=True)
        return yaml.safe_dump(self.to_dict(), sort_keys=True)

    @classmethod
    def loads(cls, text: str) -> "ExperimentConfig":
        try:
            data = yaml.safe_load(text)  # JSON is valid YAML
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse config: {exc}") from exc
        return cls.from_dict(data or {})

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.loads(text)

    def with_overrides(self, **kw) -> "ExperimentConfig":
        d = self.to_dict()
        d.update({k: v for k, v in kw.items() if v is not None})
        return ExperimentConfig.from_dict(d)


def k_exponent(rule: str) -> float:
    """Exponent e of the block-count rule ``k_n = ceil(n^e)``."""
    if rule == "sqrt":
        return 0.5
    if isinstance(rule, str) and rule.startswith("power:"):
        try:
            e = float(rule.split(":", 1)[1])
        except ValueError:
            e = -1.0
        if 0 < e < 1:
            return e
    raise ConfigError(f"k_rule must be 'sqrt' or 'power:<e>' with 0 < e < 1, got {rule!r}")


def k_and_t(n: int, rule: str = "sqrt") -> tuple[int, int]:
    """Block count k_n and the recorded companion t_n = ceil(n^(1/4))."""
    return int(math.ceil(n ** k_exponent(rule))), int(math.ceil(n ** 0.25))


# ---------------------------------------------------------------------------
# seeds and replicas
# ---------------------------------------------------------------------------

def seed_for(master: int, *key: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(master), *map(int, key)])


def replica_seeds(master: int, n: int, replicas: int) -> list:
    return [seed_for(master, TAG_REPLICA, n, r) for r in range(replicas)]


def _scan_group(process, length, u_floor, seeds):
    return process.scan_many(length, u_floor, [np.random.default_rng(s) for s in seeds])


def scan_replicas(process, length: int, u_floor: float, seeds, workers: int = 1) -> list:
    """Scan one orbit per seed; the grouping is fixed, the worker count is not."""
    lsv = isinstance(process, DynamicalProcess) and isinstance(process.map, LSVMap)
    size = LSV_GROUP if lsv else 1
    groups = [seeds[i:i + size] for i in range(0, len(seeds), size)]
    if workers <= 1 or len(groups) == 1:
        parts = [_scan_group(process, length, u_floor, g) for g in groups]
    else:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(_scan_group, repeat(process), repeat(length),
                                repeat(u_floor), groups))
    return [c for part in parts for c in part]


# ---------------------------------------------------------------------------
# scenario, q and thresholds
# ---------------------------------------------------------------------------

def scenario_for(cfg: ExperimentConfig) -> Scenario:
    if cfg.custom is not None:
        q = cfg.q if cfg.q != "auto" else 1
        return custom_scenario(cfg.custom["map"], cfg.custom["observable"], cfg.burn_in, q)
    return build_scenario(ExampleId.parse(cfg.example), cfg.seed, cfg.burn_in, cfg.delta,
                          cfg.g, cfg.density_steps)


def schedule(cfg: ExperimentConfig, scen: Scenario, n: int, tau: float) -> ThresholdSchedule:
    if cfg.threshold == "analytic":
        return ThresholdSchedule(n, tau, scen.threshold(n, tau), "analytic", scen.label)
    calib = int(math.ceil(cfg.calib_factor * n / tau))
    rng = np.random.default_rng(seed_for(cfg.seed, TAG_THRESHOLD, n))
    return threshold_empirical(scen.process, n, tau, calib, rng)


def resolve_q(cfg: ExperimentConfig, scen: Scenario) -> tuple[int, dict | None]:
    """Configured q, or the return-time selection with its diagnostics."""
    if cfg.q != "auto":
        return int(cfg.q), None
    rng = np.random.default_rng(seed_for(cfg.seed, TAG_SELECT))

    def threshold(n, tau):
        return schedule(cfg, scen, n, tau).u_n

    grid = sorted(int(v) for v in cfg.select_n)
    table = return_time_table(scen.process, cfg.tau, grid, cfg.q_max, rng, threshold,
                              cfg.select_blocks)
    diag = {"n_grid": grid, "blocks": cfg.select_blocks, "growth": cfg.select_growth,
            "return_times": {str(k): {str(n): _num(v) for n, v in row.items()}
                             for k, row in table.items()}}
    try:
        q = choose_q(table, cfg.select_growth)
    except SelectionError as exc:
        exc.diagnostics = diag
        raise
    return q, diag | {"selected": q}


def _num(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None
    return x


# ---------------------------------------------------------------------------
# per-replica records
# ---------------------------------------------------------------------------

def _hist(values) -> dict:
    u, c = np.unique(np.asarray(values, dtype=np.int64), return_counts=True)
    return {str(int(a)): int(b) for a, b in zip(u, c)}


def _unhist(h: dict) -> np.ndarray:
    if not h:
        return np.empty(0, np.int64)
    return np.repeat(np.array([int(k) for k in h], np.int64), list(h.values()))


def identity_discrepancy(st: ClusterStats) -> Fraction:
    """Exact (mean complete-cluster size) * theta_hat - 1; zero by construction."""
    clusters = sum(st.h_counts.values())
    mass = sum(k * c for k, c in st.h_counts.items())
    uncensored = st.n_exceed - st.censored
    if clusters == 0 or uncensored == 0:
        return Fraction(0)
    return Fraction(mass, clusters) * Fraction(st.q_counts[0], uncensored) - 1


def replica_record(cand, u: float, q: int, n: int, tau: float, blocks: int, replica: int,
                   cfg: ExperimentConfig, labelled: bool) -> ClusterStats:
    b = cand.series(u)
    st = cluster_stats(b, q, n, tau, cfg.kappa_cap)
    counts = build_N_n(b, u, n).unit_window_counts()
    extra = {"replica": replica, "u_n": u, "seed_key": [cfg.seed, TAG_REPLICA, n, replica],
             "window_counts": _hist(counts[:blocks])}
    extra["identity_discrepancy"] = str(identity_discrepancy(st))
    if labelled and cand.sources is not None:
        src = cand.sources[cand.values > u]
        bal = source_balance(b, src, q, tau)
        part = runs_decluster(b, q)
        first = src[part.first] if part.n_clusters else np.empty(0, np.int8)
        extra["source_mass"] = bal.mass
        extra["source_clusters"] = bal.clusters
        extra["source_sizes"] = {SOURCE_NAMES[c]: _hist(part.sizes[(first == c) & part.complete])
                                 for c in (1, 2)}
    st.extra = extra
    return st


def check_enough(st: ClusterStats, cfg: ExperimentConfig, blocks: int):
    if st.n_clusters < cfg.min_clusters:
        r = st.extra.get("replica")
        raise InsufficientDataError(
            f"replica {r} at n={st.n} has {st.n_clusters} complete clusters "
            f"(< {cfg.min_clusters}); increase blocks (now {blocks}) or tau (now {st.tau:g})")


# ---------------------------------------------------------------------------
# aggregation
# ---------------------------------------------------------------------------

def _ratio_se(num, den):
    """Standard error of sum(num)/sum(den) across replicas (delta method)."""
    num, den = np.asarray(num, float), np.asarray(den, float)
    r = len(num)
    if r < 2 or den.sum() == 0:
        return float("nan")
    p = num.sum() / den.sum()
    return float(math.sqrt(((num - p * den) ** 2).sum() * r / (r - 1)) / den.sum())


def oracle_for(example: ExampleId | None, tau: float, kappa_max: int) -> dict | None:
    if example is None:
        return None
    s = analytic.summary(example, kappa_max, tau)
    return s.to_dict()


def aggregate(records: list, example: ExampleId | None, kappa_max: int = 10) -> dict:
    """Summary of the replicas at one (n, tau, q). Pure function of the records."""
    if not records:
        raise InsufficientDataError("no replicas to aggregate")
    n, tau, q = records[0].n, records[0].tau, records[0].q
    th = np.array([r.theta_hat for r in records])
    clusters = [r.n_clusters for r in records]
    unc = [r.n_exceed - r.censored for r in records]
    mass = [sum(k * c for k, c in r.h_counts.items()) for r in records]
    pooled_theta = sum(clusters) / sum(unc)
    pooled_mean = sum(mass) / sum(clusters)
    out = {
        "n": n, "tau": tau, "q": q, "replicas": len(records),
        "u_n": records[0].extra.get("u_n"),
        "exceedances": int(sum(r.n_exceed for r in records)),
        "clusters": int(sum(clusters)),
        # the count ratio over all replicas; a mean of per-replica ratios is biased
        # upward when a replica sees only a few long clusters
        "theta_hat": pooled_theta,
        "theta_se": _ratio_se(clusters, unc),
        "theta_replica_mean": float(th.mean()),
        "theta_replica_se": (float(th.std(ddof=1) / math.sqrt(len(th))) if len(th) > 1
                             else float("nan")),
        "mean_size": pooled_mean,
        "mean_size_se": _ratio_se(mass, clusters),
        "inverse_theta": 1.0 / pooled_theta,
        "mean_times_theta": pooled_mean * pooled_theta,
        "identity_discrepancies": [r.extra.get("identity_discrepancy", "0") for r in records],
        "longest_cluster": int(max(r.longest_cluster for r in records)),
    }
    out["identity_exact"] = all(d == "0" for d in out["identity_discrepancies"])
    pi = []
    for k in range(1, kappa_max + 1):
        num = [r.h_counts.get(k, 0) for r in records]
        pi.append({"kappa": k, "pi_hat": sum(num) / sum(clusters), "se": _ratio_se(num, clusters)})
    num = [sum(c for s, c in r.h_counts.items() if s > kappa_max) for r in records]
    pi.append({"kappa": f">{kappa_max}", "pi_hat": sum(num) / sum(clusters),
               "se": _ratio_se(num, clusters)})
    out["pi"] = pi
    sizes = np.concatenate([_unhist({str(k): c for k, c in r.h_counts.items()}) for r in records])
    windows = np.concatenate([_unhist(r.extra.get("window_counts", {})) for r in records])
    labelled = all("source_mass" in r.extra for r in records)
    if labelled:
        m = {s: sum(r.extra["source_mass"][s] for r in records) for s in SOURCE_NAMES}
        c = {s: sum(r.extra["source_clusters"][s] for r in records) for s in SOURCE_NAMES}
        total = sum(m.values())
        out["sources"] = {
            "mass": m, "clusters": c,
            "split": {s: (m[s] / total if total else float("nan")) for s in SOURCE_NAMES},
            "zeta1_cluster_ratio": c["zeta1"] / total if total else float("nan"),
            "zeta1_share_se": _ratio_se([r.extra["source_mass"]["zeta1"] for r in records],
                                        [r.n_exceed for r in records]),
        }
    if example is not None:
        orc = analytic.summary(example, kappa_max, tau)
        out["oracle"] = {"theta": orc.theta, "mean": orc.mean_pi, "inverse_theta": 1 / orc.theta,
                         "ei_equals_inverse_mean": orc.ei_equals_inverse_mean}
        for row in pi:
            if isinstance(row["kappa"], int):
                row["oracle"] = orc.pi[row["kappa"]]
        out["discrepancy"] = {"inverse_theta_hat": out["inverse_theta"],
                              "empirical_mean_size": pooled_mean,
                              "oracle_limit_mean": orc.mean_pi,
                              "oracle_inverse_theta": 1 / orc.theta}
        gof = {}
        gof["sizes"] = _try(lambda: gof_sizes(sizes, orc.limit_family.multiplicity).to_dict())
        gof["counts"] = _try(lambda: gof_counts(windows, orc.limit_family).to_dict())
        if labelled:
            z2 = np.concatenate([_unhist(r.extra["source_sizes"]["zeta2"]) for r in records])
            law = _zeta2_law(example)
            if law is not None:
                gof["zeta2_sizes"] = _try(lambda: gof_sizes(z2, law).to_dict())
        out["gof"] = gof
    return out


def _zeta2_law(example):
    if example.kind == "periodic_lsv":
        return Geometric(1 - 1 / analytic.gamma_for(example))
    if example.kind == "smith_lsv":
        return Degenerate(1)
    if example.kind == "doubling_mix":
        return Geometric(0.875)
    return None


def _try(fn):
    try:
        return fn()
    except RareClustersError as exc:
        return {"error": str(exc)}


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

@dataclass
class RunReport:
    command: str
    config: dict
    scenario: dict
    q: int
    q_selection: dict | None
    thresholds: list
    per_n: list
    replicas: list = field(repr=False)
    oracle: dict | None = None
    dprime: list = field(default_factory=list)
    timing: dict = field(default_factory=dict)

    def to_dict(self, with_replicas: bool = False) -> dict:
        d = {k: getattr(self, k) for k in ("command", "config", "scenario", "q", "q_selection",
                                           "thresholds", "per_n", "oracle", "dprime", "timing")}
        if with_replicas:
            d["replicas"] = [json.loads(r.to_json()) for r in self.replicas]
        return _clean(d)

    def result_dict(self) -> dict:
        """Everything except timing: a deterministic function of config and seed."""
        d = self.to_dict()
        d.pop("timing")
        return d


def _clean(x):
    """Strict JSON: NaN and infinities become None, numpy scalars become Python."""
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else None
    return x


def _dump_json(path: Path, obj):
    path.write_text(json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n")


def write_replicas(path: Path, records: list):
    with path.open("w") as fh:
        for r in records:
            fh.write(r.to_json() + "\n")


def read_replicas(path) -> list:
    return [ClusterStats.from_json(line) for line in Path(path).read_text().splitlines() if line]


def regenerate(out_dir) -> dict:
    """Rebuild the per-n aggregates of an estimate run from its stored files."""
    out_dir = Path(out_dir)
    rep = json.loads((out_dir / "report.json").read_text())
    records = read_replicas(out_dir / "replicas.jsonl")
    cfg = ExperimentConfig.from_dict(rep["config"])
    example = ExampleId.parse(cfg.example) if cfg.example else None
    by_n = {}
    for r in records:
        by_n.setdefault(r.n, []).append(r)
    return _clean([aggregate(by_n[n], example, cfg.kappa_max) for n in cfg.n])


def _write_estimate(report: RunReport, out: Path, emit):
    out.mkdir(parents=True, exist_ok=True)
    if "json" in emit:
        _dump_json(out / "report.json", report.to_dict())
        write_replicas(out / "replicas.jsonl", report.replicas)
    if "csv" in emit:
        _write_table(out / "summary.csv",
                     ["n", "tau", "q", "u_n", "replicas", "clusters", "theta_hat", "theta_se",
                      "theta_replica_mean", "mean_size", "inverse_theta", "oracle_theta",
                      "oracle_mean", "identity_exact"],
                     [[a["n"], a["tau"], a["q"], a["u_n"], a["replicas"], a["clusters"],
                       a["theta_hat"], a["theta_se"], a["theta_replica_mean"], a["mean_size"],
                       a["inverse_theta"], a.get("oracle", {}).get("theta", ""),
                       a.get("oracle", {}).get("mean", ""), a["identity_exact"]]
                      for a in report.per_n])
        _write_table(out / "pi.csv", ["n", "kappa", "pi_hat", "se", "oracle"],
                     [[a["n"], row["kappa"], row["pi_hat"], row["se"], row.get("oracle", "")]
                      for a in report.per_n for row in a["pi"]])
        _write_table(out / "replicas.csv",
                     ["n", "replica", "u_n", "length", "exceedances", "censored", "clusters",
                      "theta_hat", "mean_size", "identity_discrepancy", "longest_cluster"],
                     [[r.n, r.extra.get("replica"), r.extra.get("u_n"), r.length, r.n_exceed,
                       r.censored, r.n_clusters, r.theta_hat, r.mean_size,
                       r.extra.get("identity_discrepancy"), r.longest_cluster]
                      for r in report.replicas])
    if "png" in emit:
        from . import plotting
        plotting.theta_vs_n(report.per_n, out / "theta_vs_n.png", report.scenario.get("label", ""))
        for a in report.per_n:
            plotting.pi_bars(a, out / f"pi_n{a['n']}.png")


def _write_table(path: Path, columns, rows):
    import csv
    with path.open("w", newline="") as fh:
        fh.write("# schema-version: 1\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_cell(v) for v in row])


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v)) if math.isfinite(v) else ""
    return v


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def _out(cfg, out):
    path = Path(out if out is not None else cfg.out)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {path}: {exc}") from exc
    return path


def run_estimate(cfg: ExperimentConfig, out=None, write: bool = True,
                 scen: Scenario | None = None) -> RunReport:
    """Thresholds, declustering, estimators, identity check and oracle comparison."""
    t0 = time.perf_counter()
    scen = scenario_for(cfg) if scen is None else scen
    q, q_sel = resolve_q(cfg, scen)
    blocks = cfg.blocks or 100
    t_sel = time.perf_counter()
    records, thresholds, per_n, dprimes = [], [], [], []
    for n in cfg.n:
        sch = schedule(cfg, scen, n, cfg.tau)
        thresholds.append(sch.to_dict() | {"k_n": k_and_t(n, cfg.k_rule)[0],
                                            "t_n": k_and_t(n, cfg.k_rule)[1]})
        cands = scan_replicas(scen.process, blocks * n, sch.u_n,
                              replica_seeds(cfg.seed, n, cfg.replicas), cfg.workers)
        recs = [replica_record(c, sch.u_n, q, n, cfg.tau, blocks, r, cfg, scen.labelled)
                for r, c in enumerate(cands)]
        for st in recs:
            check_enough(st, cfg, blocks)
        records.extend(recs)
        per_n.append(aggregate(recs, scen.example, cfg.kappa_max))
        if cfg.dprime:
            k_n = k_and_t(n, cfg.k_rule)[0]
            rng = np.random.default_rng(seed_for(cfg.seed, TAG_DPRIME, n))
            d = dprime_diagnostic(scen.process, n, cfg.tau, q, k_n, cfg.dprime_replicas, rng,
                                  lambda n_, t_, u=sch.u_n: u, blocks=1)
            dprimes.append({"n": n, "k_n": k_n, **d._asdict()})
    resolved = cfg.to_dict() | {"q": q, "blocks": blocks}
    report = RunReport("estimate", resolved, scen.metadata(), q, q_sel, thresholds, per_n,
                       records, oracle_for(scen.example, cfg.tau, cfg.kappa_max), dprimes,
                       {"select_s": t_sel - t0, "total_s": time.perf_counter() - t0})
    if write:
        _write_estimate(report, _out(cfg, out), cfg.emit)
    return report


def run_simulate(cfg: ExperimentConfig, out=None) -> dict:
    """Per-replica value series; long orbits keep exceedances plus a thin subsample."""
    out = _out(cfg, out)
    scen = scenario_for(cfg)
    blocks = cfg.blocks or 1
    files = []
    stride = max(1, int(round(1.0 / cfg.thin)))
    for n in cfg.n:
        length = blocks * n
        floor = None
        if length > cfg.full_output_max:
            y_top = min(cfg.y_max_factor * cfg.tau, 0.5 * n)
            floor = schedule(cfg, scen, n, y_top).u_n
        for r, ss in enumerate(replica_seeds(cfg.seed, n, cfg.replicas)):
            rng = np.random.default_rng(ss)
            idx_parts, val_parts = [], []
            start = 0
            for chunk in scen.process.iter_values(length, rng):
                idx = np.arange(start, start + len(chunk))
                keep = slice(None) if floor is None else (chunk > floor) | (idx % stride == 0)
                idx_parts.append(idx[keep])
                val_parts.append(chunk[keep])
                start += len(chunk)
            path = out / f"values_n{n}_r{r}.csv"
            if "csv" in cfg.emit:
                write_values_csv(path, np.concatenate(idx_parts), np.concatenate(val_parts))
            files.append({"n": n, "replica": r, "file": path.name, "length": length,
                          "thinned": floor is not None,
                          "floor": floor, "stride": stride if floor is not None else 1})
    meta = {"command": "simulate", "config": cfg.to_dict() | {"blocks": blocks},
            "scenario": scen.metadata(), "files": files}
    if "json" in cfg.emit:
        _dump_json(out / "simulate.json", meta)
    return _clean(meta)


def run_repp(cfg: ExperimentConfig, out=None) -> dict:
    """Rare-event point processes of the data next to their simulated limits."""
    t0 = time.perf_counter()
    out = _out(cfg, out)
    scen = scenario_for(cfg)
    q, _ = resolve_q(cfg, scen)
    n = max(cfg.n)
    blocks = cfg.blocks or 20
    tau = cfg.tau
    y_max = cfg.y_max_factor * tau
    if y_max / n >= 1:
        raise ConfigError("y_max_factor * tau must stay below n")
    sch = schedule(cfg, scen, n, tau)
    top = schedule(cfg, scen, n, y_max)
    tail = top.tail if cfg.threshold == "empirical" else None
    cands = scan_replicas(scen.process, blocks * n, top.u_n,
                          replica_seeds(cfg.seed, n, cfg.replicas), cfg.workers)

    def inv(v):
        return scen.inverse(v, n, tail)

    consistency, windows, balances = [], [], []
    data0 = None
    for r, c in enumerate(cands):
        pts = build_N2_n(c, inv, n, y_max)
        raw = build_N_n(c, sch.u_n, n)
        proj = project_H_tau(pts, tau)
        consistency.append({"replica": r, "raw": raw.total_mass, "projected": proj.total_mass,
                            "equal": raw.total_mass == proj.total_mass})
        windows.append(raw.unit_window_counts())
        if scen.labelled:
            balances.append(mass_balance(pts, tau, q))
        if r == 0:
            data0 = (pts, raw, build_N_n(c, sch.u_n, n, q, declustered=True))
    windows = np.concatenate(windows)
    result = {"command": "repp", "config": cfg.to_dict() | {"q": q, "blocks": blocks},
              "scenario": scen.metadata(), "n": n, "tau": tau, "y_max": y_max,
              "threshold": sch.to_dict(), "projection": consistency,
              "projection_consistent": all(c["equal"] for c in consistency)}
    limit = None
    if scen.example is not None:
        rng = np.random.default_rng(seed_for(cfg.seed, TAG_LIMIT, n))
        limit = simulate_limit(scen.example, float(blocks * cfg.replicas), y_max, rng)
        lim_h = project_H_tau(limit, tau)
        spec = analytic.limit_family(scen.example, tau)
        result["limit"] = {"family": spec.to_dict(),
                           "events": len(lim_h), "mass": lim_h.total_mass,
                           "gof_multiplicity": _try(lambda: gof_sizes(
                               lim_h.mult, spec.multiplicity).to_dict()),
                           "gof_data_counts": _try(lambda: gof_counts(windows, spec).to_dict())}
    if balances:
        mass = {s: sum(b.mass[s] for b in balances) for s in SOURCE_NAMES}
        total = sum(mass.values())
        result["mass_balance"] = {
            "mass": mass, "clusters": {s: sum(b.clusters[s] for b in balances) for s in SOURCE_NAMES},
            "split": {s: (mass[s] / total if total else None) for s in SOURCE_NAMES},
            "limit_share_kept": (1.0 if scen.example is None or not scen.example.kind == "smith_lsv"
                                 else 0.5)}
    result["timing"] = {"total_s": time.perf_counter() - t0}
    pts, raw, dec = data0
    window = (0.0, min(float(blocks), 5.0))
    caption = {"example": scen.label, "n": n, "tau": tau, "q": q}
    if "csv" in cfg.emit:
        write_points2d_csv(out / "points2d_data.csv", pts)
        write_process1d_csv(out / "process1d_raw.csv", raw)
        write_process1d_csv(out / "process1d_declustered.csv", dec)
        if limit is not None:
            write_points2d_csv(out / "points2d_limit.csv", limit)
            write_process1d_csv(out / "process1d_limit.csv", project_H_tau(limit, tau))
    if "svg" in cfg.emit:
        points_svg(pts, tau, out / "points2d_data.svg", caption=caption | {"source": "data"},
                   t_window=window)
        if limit is not None:
            points_svg(limit, tau, out / "points2d_limit.svg",
                       caption=caption | {"source": "simulated limit"}, t_window=window)
    if "png" in cfg.emit:
        from . import plotting
        plotting.points_panels(pts, limit, tau, out / "points2d.png", window, scen.label)
    if "json" in cfg.emit:
        _dump_json(out / "repp.json", result)
    return _clean(result)


def run_escape_mass(cfg: ExperimentConfig, out=None, write: bool = True,
                    scen: Scenario | None = None, report: RunReport | None = None) -> dict:
    """Source split of the exceedance mass and the decay of indifferent clusters.

    Reuses the per-replica records of an estimate run when one is given.
    """
    scen = scenario_for(cfg) if scen is None else scen
    if not scen.labelled:
        raise ConfigError("escape-mass needs an observable with two labelled maxima")
    if report is None:
        report = run_estimate(cfg, out, write=False, scen=scen)
    rows = []
    for a in report.per_n:
        s = a["sources"]
        rows.append({"n": a["n"], "zeta1_share": s["split"]["zeta1"],
                     "zeta2_share": s["split"]["zeta2"], "zeta1_share_se": s["zeta1_share_se"],
                     "zeta1_cluster_ratio": s["zeta1_cluster_ratio"],
                     "zeta1_clusters": s["clusters"]["zeta1"], "exceedances": a["exceedances"]})
    ok = [r for r in rows if r["zeta1_clusters"] > 0]
    slope = float("nan")
    if len(ok) >= 2:
        slope = float(np.polyfit(np.log([r["n"] for r in ok]),
                                 np.log([r["zeta1_cluster_ratio"] for r in ok]), 1)[0])
    expected = None
    if scen.example is not None and scen.example.is_lsv:
        a_ = scen.example.alpha
        expected = -a_ / (1 - a_)
    result = {"command": "escape-mass", "config": report.config, "scenario": report.scenario,
              "rows": rows, "slope": slope, "expected_slope": expected}
    if write:
        out = _out(cfg, out)
        if "json" in cfg.emit:
            _dump_json(out / "escape_mass.json", result)
        if "csv" in cfg.emit:
            cols = list(rows[0]) if rows else ["n"]
            _write_table(out / "escape_mass.csv", cols, [[r[c] for c in cols] for r in rows])
        if "png" in cfg.emit:
            from . import plotting
            plotting.escape_mass(rows, slope, expected, out / "escape_mass.png", scen.label)
    return _clean(result)


def run_analytic(cfg: ExperimentConfig | None = None, out=None, alpha: float = 0.2,
                 p: int = 2) -> list:
    table = analytic.table(cfg.kappa_max if cfg else 10, alpha, p)
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        emit = cfg.emit if cfg else ["json", "csv"]
        if "json" in emit:
            _dump_json(out / "analytic.json", table)
        if "csv" in emit:
            _write_table(out / "analytic.csv",
                         ["example", "theta", "mean_pi", "inverse_theta", "ei_equals_inverse_mean"],
                         [[r["example"], r["theta"], r["mean_pi"], r["inverse_theta"],
                           r["ei_equals_inverse_mean"]] for r in table])
    return _clean(table)

