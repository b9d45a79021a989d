"""Command-line entry point: analytics, single scenarios and named reproductions."""

from __future__ import annotations

import argparse
import os
import sys

from .analysis import bianchi_fixed_point, false_positive_ratio, stationary_alarm_prob
from .config import load_config
from .harness import NAMES, proportion_ci, reproduce, write_rows
from .mac import ConfigError
from .scenario import InvariantViolation, run, write_event_log, write_runs

EXIT_OK, EXIT_CONFIG, EXIT_INVARIANT = 0, 1, 2


def cmd_analyze(args) -> int:
    pi = stationary_alarm_prob(args.p_ch, args.m)
    pfp = false_positive_ratio(args.k, args.p_ch, args.m)
    print("p_ch,m,k,pi_m,p_fp,p_fp_clamped")
    print(f"{args.p_ch!r},{args.m},{args.k},{pi!r},{pfp!r},{min(1.0, pfp)!r}")
    return EXIT_OK


def cmd_bianchi(args) -> int:
    op = bianchi_fixed_point(args.n)
    print("n,tau,p_cond,p_ch")
    print(f"{op.n_stations},{op.tau!r},{op.p_cond!r},{op.p_ch!r}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    base = cfg.base_seed if args.seed is None else args.seed
    os.makedirs(args.out, exist_ok=True)
    results = []
    for r in range(cfg.replications):
        out = run(cfg, base + r, run_id=r)
        results.append(out.result)
        write_event_log(os.path.join(args.out, f"events_{r}.csv"), out.log)
    write_runs(os.path.join(args.out, "runs.csv"), results)
    iv = proportion_ci(sum(x.alarm for x in results), len(results), args.ci)
    write_rows(os.path.join(args.out, "summary.csv"),
               ["runs", "alarms", "rate", "ci_lo", "ci_hi", "keys_match"],
               [dict(runs=iv.n, alarms=iv.successes, rate=iv.rate, ci_lo=iv.lo, ci_hi=iv.hi,
                     keys_match=sum(x.keys_match for x in results))])
    print(f"{len(results)} run(s), {iv.successes} alarm(s); output in {args.out}")
    return EXIT_OK


def cmd_reproduce(args) -> int:
    for path in reproduce(args.name, args.out, args.runs, args.seed or 0):
        print(path)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pairsim", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="alarm-state probability and expected false alarms")
    p.add_argument("--p-ch", type=float, required=True)
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--k", type=int, required=True)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("bianchi", help="saturated DCF operating point")
    p.add_argument("--n", type=int, required=True)
    p.set_defaults(func=cmd_bianchi)

    p = sub.add_parser("simulate", help="run a scenario from a YAML config")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--ci", choices=("normal", "wilson"), default="normal")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("reproduce", help="regenerate a named figure or table as CSV")
    p.add_argument("name", choices=NAMES)
    p.add_argument("--runs", type=int, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_reproduce)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InvariantViolation as exc:
        print(f"invariant violated: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
