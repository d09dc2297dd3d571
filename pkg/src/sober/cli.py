"""Command-line entry point: ``sober {optimize,quadrature,bench}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields

from .benchmarks.harness import BASELINES, BenchmarkSpec, run_benchmark
from .benchmarks.objectives import GAUSSIAN_BQ, PROBLEMS
from .solver import OPTIMIZE, QUADRATURE

DESCRIPTION = """\
Batch Bayesian optimisation and quadrature by kernel recombination.

Outputs: <out>/results.csv (one row per method, repeat and iteration),
<out>/summary.json (median and standard error per method) and
<out>/timings.csv. results.csv leaves elapsed_s empty so that identical
runs are byte-identical; --timing-in-csv fills it in.

Problem notes: Hartmann6 uses the location matrix P scaled by 1e-4.
Shekel4 uses the reciprocal form sum_i 1/(||x - C_i||^2 + beta_i);
--shekel-as-printed switches to the sum without the reciprocal.

Config file (JSON), every key optional; command-line flags override it:
  {"problem": "Ackley23", "repeats": 10, "iterations": 10, "seed": 0,
   "baselines": ["random", "plain_ts"], "problem_options": {"n_binary": 8},
   "sober": {"N": 4000, "M": 200, "n": 50, "variant": "lfi", "fbgp": false,
             "autokq": false, "H": 50, "af": null, "restarts": 8}}
"""


def _add_common(p):
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", default="sober_out", help="output directory")
    p.add_argument("--problem", choices=PROBLEMS)
    p.add_argument("--batch-size", type=int, help="batch size n")
    p.add_argument("--iterations", type=int)
    p.add_argument("--repeats", type=int)
    p.add_argument("--variant", choices=("lfi", "ts"))
    p.add_argument("--fbgp", action="store_true", default=None, help="fully Bayesian GP via quadrature distillation")
    p.add_argument("--autokq", action="store_true", default=None, help="compare recombination with greedy thinning")
    p.add_argument("--shekel-as-printed", action="store_true", default=None)
    p.add_argument("--timing-in-csv", action="store_true", default=None,
                   help="write wall-clock seconds into results.csv (breaks byte-identity)")
    p.add_argument("--N", type=int, dest="N", help="empirical measure size")
    p.add_argument("--M", type=int, dest="M", help="Nystrom anchor count")
    p.add_argument("--fingerprints", help="JSONL/CSV candidate file for FingerprintFile")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser():
    parser = argparse.ArgumentParser(prog="sober", description=DESCRIPTION,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in (("optimize", "run SOBER only"), ("quadrature", "estimate an integral"),
                        ("bench", "run SOBER and baselines")):
        p = sub.add_parser(name, help=help_)
        _add_common(p)
        if name == "bench":
            p.add_argument("--baselines", nargs="*", choices=BASELINES)
    return parser


def spec_from_args(args) -> BenchmarkSpec:
    cfg = {}
    if args.config:
        with open(args.config) as fh:
            cfg = json.load(fh)
    sober = dict(cfg.pop("sober", {}))
    for key, val in (("seed", args.seed), ("n", args.batch_size), ("variant", args.variant),
                     ("fbgp", args.fbgp), ("autokq", args.autokq), ("N", args.N), ("M", args.M)):
        if val is not None:
            sober[key] = val
    for key, val in (("seed", args.seed), ("problem", args.problem), ("iterations", args.iterations),
                     ("repeats", args.repeats), ("shekel_as_printed", args.shekel_as_printed),
                     ("timing_in_csv", args.timing_in_csv)):
        if val is not None:
            cfg[key] = val
    if args.fingerprints:
        cfg.setdefault("problem_options", {})["path"] = args.fingerprints
    if args.command == "quadrature":
        cfg.setdefault("problem", GAUSSIAN_BQ)
        sober["mode"] = QUADRATURE
        cfg.setdefault("baselines", [])
    elif args.command == "optimize":
        sober.setdefault("mode", OPTIMIZE)
        cfg["baselines"] = []
    else:
        if args.baselines is not None:
            cfg["baselines"] = args.baselines
        cfg.setdefault("baselines", list(BASELINES))
    known = {f.name for f in fields(BenchmarkSpec)}
    unknown = set(cfg) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    cfg["sober"] = sober
    return BenchmarkSpec.from_dict(cfg)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        spec = spec_from_args(args)
    except (ValueError, TypeError, OSError, json.JSONDecodeError) as exc:
        print(f"sober: invalid configuration: {exc}", file=sys.stderr)
        return 2
    try:
        status = run_benchmark(spec, args.out)
    except OSError as exc:
        print(f"sober: cannot write results: {exc}", file=sys.stderr)
        return 1
    print(f"results written to {args.out}")
    return status


if __name__ == "__main__":
    sys.exit(main())
