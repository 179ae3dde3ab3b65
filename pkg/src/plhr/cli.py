"""Command-line interface: ``plhr solve``, ``plhr bench`` and ``plhr spectrum``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .harness import (PRECONDITIONERS, PROBLEMS, SOLVERS, TABLES, ConfigError, ExperimentConfig,
                      build_oracle, build_problem, reproduce_table, run_experiment)
from .solvers import EXTRACTIONS

EXIT_OK, EXIT_USAGE, EXIT_PARTIAL = 0, 1, 2

# flag name -> config field, for flags that override config-file values
SCALAR_FLAGS = {"problem": "problem", "omega": "omega", "ne": "ne", "matrix_a": "matrix_a",
                "matrix_b": "matrix_b", "k": "k", "k_track": "k_track", "tol": "tol", "maxit": "maxit",
                "solver": "solver", "extraction": "extraction", "prec": "prec", "eps": "eps",
                "flavor": "flavor", "lambda_q": "lambda_q", "name": "name"}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _problem_flags(p):
    p.add_argument("--problem", choices=PROBLEMS)
    p.add_argument("--omega", type=int, help="FD level; mesh width 2**-omega")
    p.add_argument("--ne", type=int, help="FE elements per side")
    p.add_argument("--matrix-a", dest="matrix_a")
    p.add_argument("--matrix-b", dest="matrix_b")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="plhr", description="Interior eigensolvers for Hermitian pencils.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("solve", help="run one experiment from a JSON config and/or flags")
    s.add_argument("--config", help="JSON experiment config")
    _problem_flags(s)
    s.add_argument("--sigma", type=float, nargs="+")
    s.add_argument("--k", type=int)
    s.add_argument("--k-track", dest="k_track", type=int)
    s.add_argument("--tol", type=float)
    s.add_argument("--maxit", type=int)
    s.add_argument("--solver", choices=SOLVERS)
    s.add_argument("--extraction", choices=EXTRACTIONS)
    s.add_argument("--prec", choices=PRECONDITIONERS)
    s.add_argument("--eps", type=float)
    s.add_argument("--flavor", choices=("abs", "plain"))
    s.add_argument("--lambda-q", dest="lambda_q", type=float)
    s.add_argument("--seed", type=int, nargs="+")
    s.add_argument("--no-s", dest="no_s", action="store_true", help="drop s-vectors from the trial subspace")
    s.add_argument("--name")
    s.add_argument("--out", help="output directory for summary JSON and history CSV")
    s.add_argument("--jobs", type=int, default=1)

    b = sub.add_parser("bench", help="reproduce a benchmark table")
    b.add_argument("table", choices=sorted(TABLES))
    b.add_argument("--seed", type=int, nargs="+", default=[0, 1, 2])
    b.add_argument("--maxit", type=int, default=1000)
    b.add_argument("--rows", nargs="+", help="subset of row labels, e.g. BPLHR/AV/T-harm.")
    b.add_argument("--omega", type=int, nargs="+", help="table3 mesh levels")
    b.add_argument("--sigma", type=float, nargs="+", help="subset of shifts (tables 1-2)")
    b.add_argument("--out", default=".")
    b.add_argument("--jobs", type=int, default=1)

    sp = sub.add_parser("spectrum", help="print oracle eigenvalues nearest a shift")
    _problem_flags(sp)
    sp.add_argument("--near", type=float, required=True)
    sp.add_argument("--count", type=int, default=10)
    return parser


def _config_from_args(args) -> ExperimentConfig:
    data = {}
    if args.config:
        data = ExperimentConfig.from_json(args.config).to_dict()
    for flag, key in SCALAR_FLAGS.items():
        val = getattr(args, flag, None)
        if val is not None:
            data[key] = val
    if args.sigma is not None:
        data["sigma"] = args.sigma[0] if len(args.sigma) == 1 else args.sigma
    if args.seed is not None:
        data["seeds"] = args.seed
    if args.no_s:
        data["s_vectors"] = False
    if args.out is not None:
        data["out"] = args.out
    return ExperimentConfig.from_dict(data)


def _cmd_solve(args) -> int:
    cfg = _config_from_args(args)
    report = run_experiment(cfg, jobs=args.jobs)
    for r in report.runs:
        vals = " ".join(f"{v:.12g}" for v in r.values)
        print(f"sigma={r.sigma:g} seed={r.seed} status={r.status} iterations={r.iterations} values={vals}")
        if r.error:
            print(f"  error: {r.error}")
    if cfg.out:
        print(f"wrote {Path(cfg.out) / (cfg.name + '_summary.json')}")
    if report.all_converged:
        return EXIT_OK
    return EXIT_PARTIAL


def _cmd_bench(args) -> int:
    table = reproduce_table(args.table, seeds=args.seed, jobs=args.jobs, out=args.out, rows=args.rows,
                            maxit=args.maxit, omegas=args.omega, sigmas=args.sigma)
    print(table.format())
    print(f"wrote {Path(args.out) / (args.table + '_summary.json')}")
    ok = all(v != "-" for vals in table.cells().values() for v in vals)
    return EXIT_OK if ok else EXIT_PARTIAL


def _cmd_spectrum(args) -> int:
    data = {k: getattr(args, k) for k in ("problem", "omega", "ne", "matrix_a", "matrix_b")
            if getattr(args, k) is not None}
    data.setdefault("problem", "fd")
    data.update(prec="identity", solver="bplhr", sigma=args.near)
    cfg = ExperimentConfig.from_dict(data)
    if args.count < 1:
        raise ConfigError("--count must be positive")
    pencil = build_problem(cfg)
    oracle = build_oracle(cfg, pencil)
    if oracle is None:
        raise ConfigError(f"no spectrum oracle for a pencil of size {pencil.n}")
    for v in oracle.nearest(args.near, args.count):
        print(repr(float(v)))
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    if not argv:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
    handler = {"solve": _cmd_solve, "bench": _cmd_bench, "spectrum": _cmd_spectrum}[args.command]
    try:
        return handler(args)
    except (ConfigError, OSError, ValueError, MemoryError) as exc:
        print(f"plhr: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
