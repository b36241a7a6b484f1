"""Command line: ``driftbench run | ascoot | selftest``.

Exit codes: 0 success, 2 config or input error, 3 I/O error, 4 solver did
not converge. ``DRIFTBENCH_LOG`` sets the log level (default WARNING).
"""

from __future__ import annotations

import argparse
import logging
import math
import os
import sys
from pathlib import Path

from . import ascoot, config, experiment, selftest
from .errors import ConfigError, InvalidInputError, MatrixParseError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NONCONVERGED = 4

log = logging.getLogger("driftbench")


def _setup_logging() -> None:
    level_name = os.environ.get("DRIFTBENCH_LOG", "WARNING").upper()
    level = logging.getLevelName(level_name)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def _seed_list(raw: str) -> tuple[int, ...]:
    try:
        seeds = tuple(int(tok) for tok in raw.split(",") if tok.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"seeds must be comma-separated integers, got {raw!r}") from None
    if not seeds or any(s < 0 for s in seeds):
        raise argparse.ArgumentTypeError("need at least one non-negative seed")
    return seeds


def _mode_list(raw: str) -> tuple[str, ...]:
    return tuple(tok.strip() for tok in raw.split(",") if tok.strip())


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="driftbench", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a seeded CTTA experiment and write metrics")
    run.add_argument("--config", type=Path, help="flat section.key = value file (defaults if omitted)")
    run.add_argument("--out", type=Path, help="output directory (overrides run.out)")
    run.add_argument("--seeds", type=_seed_list, help="comma-separated seeds, e.g. 0,1,2")
    run.add_argument("--modes", type=_mode_list, help="comma-separated modes, e.g. ctta_t,no_adapt,fixed_alpha:0.99")
    run.add_argument("--jobs", type=int, help="parallel worker processes")

    demo = sub.add_parser("ascoot", help="solve an As-COOT problem and print the objective trace")
    demo.add_argument("problem", nargs="?", type=Path, help="matrix file with blocks x, e and optional marginals")
    demo.add_argument("--out", type=Path, default=Path("ascoot_out"), help="directory for the plan file")
    demo.add_argument("--lambda1", type=float, help="soft-marginal weight (inf for a hard marginal)")
    demo.add_argument("--epsilon", type=float, help="entropic regularization")
    demo.add_argument("--tol", type=float, default=ascoot.OUTER_TOL)
    demo.add_argument("--max-outer", type=int, default=ascoot.MAX_OUTER)

    check = sub.add_parser("selftest", help="run quick randomized property checks")
    check.add_argument("--seed", type=int, default=0)
    return parser


def cmd_run(args) -> int:
    try:
        cfg = config.load(args.config) if args.config else config.RunConfig()
        if args.jobs is not None and args.jobs < 1:
            raise ConfigError("--jobs must be >= 1", key="run.jobs")
        cfg = config.with_overrides(cfg, seeds=args.seeds, modes=args.modes, jobs=args.jobs)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = args.out if args.out is not None else Path(cfg.out)
    try:
        summary = experiment.run_experiment(cfg, out)
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    for mode, stats in summary["modes"].items():
        per_domain = " ".join(f"{v:.4f}" for v in stats["per_domain"].values())
        print(f"{mode:<20} mean {stats['mean']:.4f}  per-domain {per_domain}")
    print(f"wrote {out / 'metrics.csv'}, {out / 'events.jsonl'}, {out / 'summary.json'}")
    return EXIT_OK


def cmd_ascoot(args) -> int:
    try:
        if args.problem is None:
            problem = ascoot.demo_problem()
            if args.lambda1 is not None or args.epsilon is not None:
                problem = ascoot.TransportProblem(
                    problem.x,
                    problem.e,
                    problem.mu,
                    problem.nu,
                    problem.mu_f,
                    problem.nu_f,
                    args.lambda1 if args.lambda1 is not None else problem.lambda1,
                    args.epsilon if args.epsilon is not None else problem.epsilon,
                )
        else:
            problem = ascoot.problem_from_blocks(ascoot.read_matrices(args.problem), args.lambda1, args.epsilon)
    except (MatrixParseError, InvalidInputError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO

    pi_s, pi_f, history = ascoot.bcd_solve(problem, tol=args.tol, max_outer=args.max_outer)
    for k, j in enumerate(history.objectives):
        print(f"J_{k} = {j!r}")
    bad = history.increases()
    if bad:
        print(f"WARNING: objective increased at outer steps {bad}")
    if history.sample_residuals:
        print(f"sample-block column residual {history.sample_residuals[-1]:.3e}")
        print(f"feature-block column residual {history.feature_residuals[-1]:.3e}")
    plan_path = args.out / "plans.txt"
    try:
        experiment.write_atomic(plan_path, ascoot.format_matrices({"pi_s": pi_s, "pi_f": pi_f}))
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    print(f"wrote {plan_path}")
    if not history.converged or not all(math.isfinite(j) for j in history.objectives):
        print("solver did not converge", file=sys.stderr)
        return EXIT_NONCONVERGED
    return EXIT_OK


def cmd_selftest(args) -> int:
    return EXIT_OK if selftest.run_checks(args.seed) else 1


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    handler = {"run": cmd_run, "ascoot": cmd_ascoot, "selftest": cmd_selftest}[args.command]
    return handler(args)


if __name__ == "__main__":
    sys.exit(main())
