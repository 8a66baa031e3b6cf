"""``hsa-icp`` command line: register, simulate, bench.

Exit codes: 0 ok, 1 usage error, 2 data error, 3 registration did not
converge (``register`` only; the report is still written).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import bench
from .core import RigidTransform, apply_transform, mean_resolution
from .io import (
    CloudParseError,
    load_cloud,
    load_transform,
    registration_report,
    write_cloud,
    write_report,
    write_transform,
)
from .pipeline import ALGORITHMS, RegistrationParams, register

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NOT_CONVERGED = 0, 1, 2, 3

ALGO_ALIASES = {"hsa": "hsa", "hsa-icp": "hsa", **{a: a for a in ALGORITHMS}}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _algo(value):
    if value not in ALGO_ALIASES:
        raise argparse.ArgumentTypeError(f"unknown algorithm {value!r}")
    return ALGO_ALIASES[value]


def _float_list(value):
    try:
        return [float(v) for v in value.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {value!r}") from None


def _algo_list(value):
    return [_algo(v.strip()) for v in value.split(",") if v.strip()]


def build_parser():
    parser = _Parser(prog="hsa-icp", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    reg = sub.add_parser("register", help="align a data cloud onto a model cloud")
    reg.add_argument("--data", required=True)
    reg.add_argument("--model", required=True)
    reg.add_argument("--algo", type=_algo, default="hsa")
    reg.add_argument("--gamma", type=float, default=2.0)
    reg.add_argument("--lambda", dest="lam", type=float, default=2.0)
    reg.add_argument("--xi-min", type=float, default=0.25)
    reg.add_argument("--delta", type=float, default=None)
    reg.add_argument("--max-iters", type=int, default=100)
    reg.add_argument("--init", help="4x4 row-major matrix (16 reals) or transform JSON")
    reg.add_argument("--truth", help="ground-truth transform; adds eps_* fields to the report")
    reg.add_argument("--seed", type=int, default=None)
    reg.add_argument("--out", help="report JSON path (default: stdout)")
    reg.add_argument("--aligned-out", help="write the transformed data cloud here")

    sim = sub.add_parser("simulate", help="generate a ground-truthed partial-overlap pair")
    sim.add_argument("--source", required=True)
    sim.add_argument("--n-cut", type=int, required=True)
    sim.add_argument("--noise-sigma", type=float, default=None, help="default: 0.5 x model resolution")
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--out-dir", required=True)

    bn = sub.add_parser("bench", help="Monte-Carlo campaign over overlap ratios")
    bn.add_argument("--source", required=True)
    bn.add_argument("--overlaps", type=_float_list, required=True, help="comma-separated target overlap ratios")
    bn.add_argument("--trials", type=int, required=True)
    bn.add_argument("--algos", type=_algo_list, default=list(ALGORITHMS))
    bn.add_argument("--seed", type=int, default=0)
    bn.add_argument("--noise-sigma", type=float, default=None)
    bn.add_argument("--angle-range", type=float, default=5.0, help="degrees")
    bn.add_argument("--trans-range", type=float, default=1.0, help="units of d")
    bn.add_argument("--workers", type=int, default=None, help="default: HSA_ICP_THREADS or CPU count")
    bn.add_argument("--out", required=True, help="campaign JSON; the CSV goes next to it")
    return parser


def _cmd_register(args):
    data = load_cloud(args.data)
    model = load_cloud(args.model)
    init = load_transform(args.init) if args.init else RigidTransform.identity()
    truth = load_transform(args.truth) if args.truth else None
    params = RegistrationParams(
        algorithm=args.algo, gamma=args.gamma, lam=args.lam, xi_min=args.xi_min,
        delta=args.delta, max_iterations=args.max_iters,
    )
    result = register(data, model, init, params)
    report = registration_report(result, params, seed=args.seed, init=init, truth=truth)
    if args.out:
        write_report(report, args.out)
    else:
        json.dump(report, sys.stdout, indent=2)
        sys.stdout.write("\n")
    if args.aligned_out:
        write_cloud(apply_transform(data, result.transform), args.aligned_out)
    return EXIT_OK if result.converged else EXIT_NOT_CONVERGED


def _cmd_simulate(args):
    source = load_cloud(args.source)
    pair = bench.generate_pair(source, args.n_cut, args.noise_sigma, args.seed)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_cloud(pair.data, out / "data.ply")
    write_cloud(pair.model, out / "model.ply")
    write_transform(pair.ground_truth, out / "truth.json")
    write_report({
        "xi_true": pair.xi_true,
        "n_points": len(source),
        "n_cut": pair.n_cut,
        "n_data": len(pair.data),
        "n_model": len(pair.model),
        "d": pair.d,
        "noise_sigma": pair.noise_sigma,
        "seed": pair.seed,
    }, out / "meta.json")
    return EXIT_OK


def _cmd_bench(args):
    source = load_cloud(args.source)
    if args.trials < 1:
        raise UsageError("--trials must be >= 1")
    configs = [
        bench.PairConfig(source, bench.n_cut_for_overlap(len(source), xi), args.noise_sigma,
                         args.angle_range, args.trans_range)
        for xi in args.overlaps
    ]
    report = bench.run_monte_carlo(configs, args.algos, args.trials, rng_seed=args.seed, workers=args.workers)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(report.to_json(include_timing=True))
    out.with_suffix(".csv").write_text(report.to_csv())
    for row in report.summary():
        print(f"xi={row['xi_true']:.3f} {row['algorithm']:>7}  success={row['success_rate']:.2f}  "
              f"eps_R~{row['eps_r_median']:.2e}  eps_t~{row['eps_t_median']:.2e}")
    return EXIT_OK


COMMANDS = {"register": _cmd_register, "simulate": _cmd_simulate, "bench": _cmd_bench}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"hsa-icp: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CloudParseError, OSError, ValueError, KeyError) as exc:
        print(f"hsa-icp: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
