"""Command line: single solves, Monte Carlo studies and receding-horizon episodes.

Exit status is 0 on success, 1 when a solve fails or does not converge and
2 for bad input (unreadable or invalid scenario, bad arguments).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys

from .errors import (
    DegenerateGeometryError,
    DivergenceError,
    EpisodeError,
    InvalidArgumentError,
    ScenarioError,
    SolveFailure,
)
from .scenarios import BUILTIN, build_problem, load_scenario

log = logging.getLogger("ilqgame")

EXIT_OK, EXIT_FAILED, EXIT_INPUT = 0, 1, 2


def _print(summary: dict) -> None:
    print(json.dumps(summary, indent=1, default=str))


def cmd_solve(args) -> int:
    from .harness import export_artifacts, solve_summary
    from .solver import ilq_solve

    spec = load_scenario(args.scenario)
    problem = build_problem(spec)
    overrides = {k: v for k, v in (("eta", args.eta), ("tolerance", args.tol),
                                    ("max_iterations", args.max_iters)) if v is not None}
    config = dataclasses.replace(problem.config, **overrides)
    result = ilq_solve(problem.system, problem.costs, problem.x0, config)
    summary = solve_summary(result)
    _print(summary)
    if args.out:
        files = export_artifacts(result, args.out, spec, config=config)
        log.info("wrote %s", ", ".join(str(p) for p in files.values()))
    return EXIT_OK if result.converged else EXIT_FAILED


def cmd_montecarlo(args) -> int:
    from .harness import export_artifacts, run_monte_carlo

    spec = load_scenario(args.scenario)
    if args.samples < 1:
        raise InvalidArgumentError("--samples must be at least 1")
    report = run_monte_carlo(spec, args.samples, args.seed, workers=args.workers)
    summary = report.summary()
    summary["wall_time"] = report.wall_time
    _print(summary)
    if args.out:
        files = export_artifacts(report, args.out, spec)
        log.info("wrote %s", ", ".join(str(p) for p in files.values()))
    return EXIT_FAILED if report.failed else EXIT_OK


def cmd_receding(args) -> int:
    from .harness import export_artifacts, run_receding_horizon

    spec = load_scenario(args.scenario)
    episode = run_receding_horizon(spec, args.episode, args.replan)
    _print(episode.summary())
    if args.out:
        files = export_artifacts(episode, args.out, spec)
        log.info("wrote %s", ", ".join(str(p) for p in files.values()))
    return EXIT_OK if episode.all_converged else EXIT_FAILED


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ilqgame", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)
    scenario_help = f"scenario YAML file or built-in name ({', '.join(BUILTIN)})"

    p = sub.add_parser("solve", help="solve one game from zero initial strategies")
    p.add_argument("--scenario", required=True, help=scenario_help)
    p.add_argument("--eta", type=float, help="step size for the affine terms")
    p.add_argument("--tol", type=float, help="convergence tolerance on the trajectory change")
    p.add_argument("--max-iters", type=int, help="iteration cap")
    p.add_argument("--out", help="directory for trajectory.csv, report.json and trajectory.svg")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("montecarlo", help="solve from random sinusoidal initializations and cluster")
    p.add_argument("--scenario", required=True, help=scenario_help)
    p.add_argument("--samples", type=int, default=50)
    p.add_argument("--seed", type=int, default=0, help="master seed")
    p.add_argument("--workers", type=int, default=1, help="worker processes")
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_montecarlo)

    p = sub.add_parser("receding", help="simulate a receding-horizon episode")
    p.add_argument("--scenario", required=True, help=scenario_help)
    p.add_argument("--episode", type=float, help="episode length in seconds")
    p.add_argument("--replan", type=float, help="replan interval in seconds")
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_receding)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ScenarioError, FileNotFoundError, InvalidArgumentError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (DivergenceError, SolveFailure, DegenerateGeometryError, EpisodeError, OSError) as exc:
        print(f"failed: {exc}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
