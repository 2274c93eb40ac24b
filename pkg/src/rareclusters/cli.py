"""Command line entry point: ``rareclusters <command> [options]``.

Exit codes: 0 success, 1 failed self-test, 2 configuration error,
3 insufficient data, 4 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import sys

from . import __version__
from .errors import ConfigError, RareClustersError
from .experiment import (ExperimentConfig, run_analytic, run_escape_mass, run_estimate, run_repp,
                         run_simulate)

COMMANDS = ("simulate", "estimate", "analytic", "repp", "escape-mass", "selftest")


def _int_list(text):
    try:
        return [int(float(v)) for v in text.split(",") if v]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def _q(text):
    if text == "auto":
        return text
    try:
        return int(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError("q must be an integer or 'auto'") from exc


def _common(p):
    p.add_argument("--config", help="YAML or JSON experiment file")
    p.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--workers", type=int, help="worker processes for replicas")
    p.add_argument("--emit", help="comma-separated subset of csv,json,svg,png")
    # shortcuts for the most common config keys
    p.add_argument("--example", help="e.g. doubling13, doubling_mix, mma, smith_lsv:0.2, "
                                     "periodic_lsv:0.2:2")
    p.add_argument("--n", type=_int_list, help="n or comma-separated n-grid")
    p.add_argument("--tau", type=float)
    p.add_argument("--q", type=_q, help="run length or 'auto'")
    p.add_argument("--replicas", type=int)
    p.add_argument("--blocks", type=int, help="orbit length in units of n")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rareclusters",
                                     description="Rare-event clusters of dynamical processes")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in (("simulate", "write per-replica value series"),
                       ("estimate", "estimate the extremal index and cluster sizes"),
                       ("repp", "rare-event point processes and their limits"),
                       ("escape-mass", "source split of the exceedance mass over n")):
        _common(sub.add_parser(name, help=text))
    a = sub.add_parser("analytic", help="closed-form table of the worked examples")
    a.add_argument("--alpha", type=float, default=0.2)
    a.add_argument("--p", type=int, default=2)
    a.add_argument("--out")
    a.add_argument("--emit", default="json,csv")
    s = sub.add_parser("selftest", help="run the acceptance suite")
    s.add_argument("--profile", choices=("reduced", "full", "smoke"), default="reduced")
    s.add_argument("--only", type=_int_list, help="criterion numbers to run")
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--mutate", action="store_true",
                   help="corrupt the doubling-map extremal index oracle (must fail)")
    return parser


def config_from_args(args) -> ExperimentConfig:
    d = ExperimentConfig.load(args.config).to_dict() if args.config else {}
    over = {"seed": args.seed, "out": args.out, "workers": args.workers, "emit": args.emit,
            "example": args.example, "n": args.n, "tau": args.tau, "q": args.q,
            "replicas": args.replicas, "blocks": args.blocks}
    d.update({k: v for k, v in over.items() if v is not None})
    if args.example is not None:
        d["custom"] = None  # a named example on the command line wins over the file
    return ExperimentConfig.from_dict(d)


def _fmt(v):
    return f"{v:.6g}" if isinstance(v, float) else ("" if v is None else str(v))


def _print_estimate(rep):
    cols = ["n", "u_n", "q", "theta_hat", "theta_se", "mean_size", "inverse_theta",
            "oracle_theta", "oracle_mean", "identity_exact"]
    print("\t".join(cols))
    for a in rep.per_n:
        o = a.get("oracle", {})
        row = [a["n"], a["u_n"], a["q"], a["theta_hat"], a["theta_se"], a["mean_size"],
               a["inverse_theta"], o.get("theta", ""), o.get("mean", ""), a["identity_exact"]]
        print("\t".join(_fmt(v) for v in row))


def _selftest(args) -> int:
    from . import acceptance, analytic
    from contextlib import nullcontext
    from dataclasses import replace

    profile = replace(acceptance.PROFILES[args.profile], workers=args.workers)
    ctx = analytic.corrupted_oracle("doubling13", 0.70) if args.mutate else nullcontext()
    with ctx:
        results = acceptance.run_suite(profile, only=set(args.only) if args.only else None)
    passed = sum(r.passed for r in results)
    print(f"{passed}/{len(results)} criteria passed")
    return 0 if passed == len(results) else 1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "selftest":
            return _selftest(args)
        if args.command == "analytic":
            from pathlib import Path
            cfg = ExperimentConfig(emit=args.emit)
            table = run_analytic(cfg, Path(args.out) if args.out else None, args.alpha, args.p)
            print(json.dumps(table, indent=2))
            return 0
        cfg = config_from_args(args)
        if args.command == "simulate":
            meta = run_simulate(cfg)
            print(f"wrote {len(meta['files'])} value files to {cfg.out}")
        elif args.command == "estimate":
            _print_estimate(run_estimate(cfg))
        elif args.command == "repp":
            res = run_repp(cfg)
            print(json.dumps({k: res[k] for k in ("n", "tau", "projection_consistent")
                              if k in res} | {"mass_balance": res.get("mass_balance")}))
        elif args.command == "escape-mass":
            res = run_escape_mass(cfg)
            print("n\tzeta1_share\tzeta1_cluster_ratio")
            for r in res["rows"]:
                print("\t".join(_fmt(r[k]) for k in ("n", "zeta1_share", "zeta1_cluster_ratio")))
            print(f"slope\t{_fmt(res['slope'])}\texpected\t{_fmt(res['expected_slope'])}")
        return 0
    except RareClustersError as exc:
        print(f"error: {exc}", file=sys.stderr)
        diag = getattr(exc, "diagnostics", None)
        if diag:
            print(json.dumps(diag, indent=2, default=str), file=sys.stderr)
        return exc.exit_code
    except (OSError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return ConfigError.exit_code


if __name__ == "__main__":
    sys.exit(main())
