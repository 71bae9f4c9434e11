"""Command line interface.

Subcommands:
  run         generate topologies, run the selected algorithm per seed,
              validate, and write results.csv (exit 1 if any seed failed)
  constants   print the derived protocol constants as JSON
  calibrate   empirically search the smallest workable lambda
  check-trace re-audit an exported JSON-lines trace against a topology file
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys

import numpy as np

from .engine import probability_audit, read_trace
from .experiment import ExperimentConfig, parse_config_file, run_experiment
from .params import calibrate_lambda, derive_constants, theoretical_lambda
from .sinr import build_topology, load_positions


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--alpha", type=float, default=4.0, help="path-loss exponent")
    p.add_argument("--beta", type=float, default=1.5, help="SINR threshold")
    p.add_argument("--noise", type=float, default=1.0, help="background noise power")
    p.add_argument("--power", type=float, default=4.0, help="transmission power")
    p.add_argument("--rb", type=float, default=1.0, help="broadcasting range")
    p.add_argument("--epsilon", type=float, default=0.1, help="broadcast margin")


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value file; flags given on the "
                   "command line override it")
    p.add_argument("--n", type=int, default=100, help="node count")
    p.add_argument("--area", type=float, default=10.0, help="square side")
    p.add_argument("--placement", choices=["uniform", "grid", "poisson"],
                   default="uniform")
    p.add_argument("--topology", dest="topology_file",
                   help="read nodes from an `rb` + `id x y` file instead of placing")
    p.add_argument("--algo", choices=["sync", "async", "rand4delta", "reduction"],
                   default="sync")
    _add_model_flags(p)
    p.add_argument("--c", type=float, default=1.0, help="w.h.p. exponent (>= 1)")
    p.add_argument("--lambda", dest="lam", default="1.0",
                   help="slot-scaling constant, or 'auto' to calibrate")
    p.add_argument("--k", type=int, default=90, help="second-level density bound")
    p.add_argument("--seeds", default="0", help="comma-separated seed list")
    p.add_argument("--max-slots", type=int, default=None)
    p.add_argument("--wake-max", type=int, default=0,
                   help="async: wake offsets drawn uniformly from [0, WAKE_MAX]")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--trace", action="store_true", help="write full JSONL traces")
    p.add_argument("--deterministic", action="store_true",
                   help="suppress the timestamp column for byte-stable CSVs")
    p.add_argument("--workers", type=int, default=1)


def _config_from_args(args) -> ExperimentConfig:
    overrides = {}
    if args.config:
        overrides.update(parse_config_file(args.config))
    cli_defaults = {
        "algo": "sync", "placement": "uniform", "n": 100, "area": 10.0,
        "alpha": 4.0, "beta": 1.5, "noise": 1.0, "power": 4.0, "epsilon": 0.1,
        "rb": 1.0, "c": 1.0, "lam": "1.0", "k": 90, "seeds": "0",
        "max_slots": None, "wake_max": 0, "out": "out", "trace": False,
        "deterministic": False, "workers": 1, "topology_file": None,
    }
    for key, default in cli_defaults.items():
        value = getattr(args, key)
        if value != default or key not in overrides:
            overrides[key] = value
    overrides["seeds"] = (tuple(int(s) for s in overrides["seeds"].split(","))
                          if isinstance(overrides["seeds"], str)
                          else tuple(overrides["seeds"]))
    lam = overrides["lam"]
    overrides["lam"] = lam if lam == "auto" else float(lam)
    return ExperimentConfig(**overrides)


def cmd_run(args) -> int:
    config = _config_from_args(args)
    path = run_experiment(config)
    failures = 0
    with open(path) as fh:
        for line in fh.readlines()[1:]:
            cols = line.rstrip("\n").split(",")
            if cols and (cols[12] != "ok" or cols[9] != "true"):
                failures += 1
    print(path)
    if failures:
        print(f"{failures} seed(s) failed validation", file=sys.stderr)
        return 1
    return 0


def cmd_constants(args) -> int:
    consts = derive_constants(n=args.n, delta_a=args.delta_a, c=args.c,
                              lam=float(args.lam), k=args.k)
    payload = consts.to_dict()
    if args.theory:
        params = ExperimentConfig(alpha=args.alpha, beta=args.beta,
                                  noise=args.noise, power=args.power,
                                  epsilon=args.epsilon, rb=args.rb).physical_params()
        th = theoretical_lambda(params)
        payload["theory"] = dataclasses.asdict(th)
    print(json.dumps(payload, indent=2, sort_keys=True))
    return 0


def cmd_calibrate(args) -> int:
    positions, rb = load_positions(args.topology)
    params = ExperimentConfig(alpha=args.alpha, beta=args.beta, noise=args.noise,
                              power=args.power, epsilon=args.epsilon,
                              rb=rb).physical_params()
    topo = build_topology(positions, params)
    report = calibrate_lambda(topo, params, p=args.p, target=args.target,
                              trials=args.trials,
                              rng=np.random.default_rng(args.seed))
    print(json.dumps(dataclasses.asdict(report), indent=2, sort_keys=True))
    return 0


def cmd_check_trace(args) -> int:
    events = read_trace(args.trace)
    positions, rb = load_positions(args.topology)
    params = ExperimentConfig(alpha=args.alpha, beta=args.beta, noise=args.noise,
                              power=args.power, epsilon=args.epsilon,
                              rb=rb).physical_params()
    topo = build_topology(positions, params)
    report = probability_audit(events, topo)
    transmitted = {(e.slot, e.node) for e in events if e.kind == "transmit"}
    orphans = [e for e in events if e.kind == "deliver"
               and (e.slot, e.payload["sender"]) not in transmitted]
    print(json.dumps({
        "events": len(events),
        "audit_max": report.max_sum,
        "audit_violations": len(report.violations),
        "orphan_deliveries": len(orphans),
    }, indent=2, sort_keys=True))
    return 0 if report.ok and not orphans else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="sinrcolor", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run coloring experiments")
    _add_run_flags(p_run)
    p_run.set_defaults(func=cmd_run)

    p_const = sub.add_parser("constants", help="print derived constants as JSON")
    p_const.add_argument("--n", type=int, required=True)
    p_const.add_argument("--delta-a", type=int, required=True)
    p_const.add_argument("--c", type=float, default=1.0)
    p_const.add_argument("--lambda", dest="lam", default="1.0")
    p_const.add_argument("--k", type=int, default=90)
    p_const.add_argument("--theory", action="store_true",
                         help="include the closed-form lambda derivation")
    _add_model_flags(p_const)
    p_const.set_defaults(func=cmd_constants)

    p_cal = sub.add_parser("calibrate", help="search the smallest workable lambda")
    p_cal.add_argument("--topology", required=True)
    p_cal.add_argument("--p", type=float, default=1.0 / 180.0)
    p_cal.add_argument("--target", type=float, default=11.0 / 12.0)
    p_cal.add_argument("--trials", type=int, default=200)
    p_cal.add_argument("--seed", type=int, default=0)
    _add_model_flags(p_cal)
    p_cal.set_defaults(func=cmd_calibrate)

    p_chk = sub.add_parser("check-trace", help="re-audit an exported trace")
    p_chk.add_argument("--trace", required=True)
    p_chk.add_argument("--topology", required=True)
    _add_model_flags(p_chk)
    p_chk.set_defaults(func=cmd_check_trace)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
