"""
Command-line front end: python -m src.cli <command> ...

Exit codes: 0 success, 2 validation or assumption failure, 3 numerical failure.
"""
import argparse
import json
import os
import sys
from typing import List, Optional

import numpy as np
import pandas as pd
from pydantic import ValidationError as DocumentError

from src.config import DIST_TOL, LOG_LEVEL, SOLVER_TOL, configure_logging
from src.coupling import DIFF_MODES, differentiate, solve_coupling_central, build_coupling_system
from src.distnet import distributed_differentiate
from src.errors import SensitivityError, exit_code
from src.experiments import default_config, run_experiment
from src.graph import EXTERIOR_MODES, summarize
from src.localdiff import compute_local_jacobians
from src.model import generate_chain, generate_random
from src.schemas import (
    ProblemDocument, SolutionDocument, graph_to_document, jacobian_to_document, problem_from_document,
    problem_to_document, run_to_document, solution_from_document, solution_to_document,
)
from src.solver import require_assumptions, solve, verify_assumptions


def _read_problem(path: str):
    with open(path, "r", encoding="utf-8") as f:
        doc = ProblemDocument.model_validate(json.load(f))
    print(f"📄 Loaded problem {path}")
    return problem_from_document(doc)


def _read_solution(path: str, problem):
    with open(path, "r", encoding="utf-8") as f:
        doc = SolutionDocument.model_validate(json.load(f))
    return solution_from_document(doc, problem)


def _emit(doc, output: Optional[str]):
    text = doc.model_dump_json(indent=2, by_alias=True)
    if not output:
        print(text)
        return
    folder = os.path.dirname(output)
    if folder:
        os.makedirs(folder, exist_ok=True)
    with open(output, "w", encoding="utf-8") as f:
        f.write(text)
    print(f"💾 Saved {output}")


def parse_sweep(text: Optional[str]) -> Optional[List[float]]:
    """'N=2,5,10' or '2,5,10' -> [2.0, 5.0, 10.0]."""
    if not text:
        return None
    if "=" in text:
        text = text.split("=", 1)[1]
    return [float(v) for v in text.split(",") if v.strip()]


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_gen(args):
    if args.kind == "chain":
        problem = generate_chain(args.T, args.n, buffer=args.buffer, seed=args.seed, l=args.l)
    else:
        problem = generate_random(args.N, args.n, l=args.l, k=args.k, n_eq=args.n_eq, n_ineq=args.n_ineq,
                                  structure=args.structure, seed=args.seed)
    print(f"✅ Generated {args.kind} problem: N={problem.N}, coupling rows={problem.n_coupling}, "
          f"seed={problem.meta.get('seed')}")
    _emit(problem_to_document(problem), args.output)


def cmd_solve(args):
    problem = _read_problem(args.problem)
    solution = solve(problem, tol=args.tol)
    report = verify_assumptions(problem, solution)
    if solution.converged:
        print(f"✅ Solved in {solution.iterations} iterations, KKT residual {solution.kkt_residual:.2e}")
    else:
        print(f"⚠️ Solver stopped at KKT residual {solution.kkt_residual:.2e}")
    if not report.all_ok:
        print(f"⚠️ Assumption checks failed: {', '.join(report.failures())}")
    _emit(solution_to_document(solution, report), args.output)


def cmd_diff(args):
    problem = _read_problem(args.problem)
    solution = _read_solution(args.solution, problem)
    if not args.no_check:
        require_assumptions(problem, solution)
    print(f"🔍 Differentiating ({args.mode})")
    jacobian, y = differentiate(problem, solution, args.mode, h=args.h,
                                parallel_local=args.parallel_local, threads=args.threads)
    print(f"✅ Jacobian {jacobian.assembled.shape[0]} x {jacobian.assembled.shape[1]}")
    _emit(jacobian_to_document(problem, jacobian, args.mode, y), args.output)


def cmd_graph(args):
    problem = _read_problem(args.problem)
    summary = summarize(problem, args.omega, args.exterior)
    print(f"✅ Graph: {problem.N} subproblems, {problem.n_coupling} constraints, B_MC={summary.bandwidth_mc}")
    _emit(graph_to_document(summary), args.output)


def cmd_dist_diff(args):
    problem = _read_problem(args.problem)
    solution = _read_solution(args.solution, problem)
    if not args.no_check:
        require_assumptions(problem, solution)
    local = compute_local_jacobians(problem, solution, parallel=args.parallel_local, threads=args.threads)
    y_star = solve_coupling_central(build_coupling_system(problem, solution, local))
    print(f"🔍 Distributed run: omega={args.omega}, rounds<={args.rounds}")
    outcome = distributed_differentiate(problem, solution, args.omega, rounds=args.rounds, seed=args.seed,
                                        tol=args.dist_tol, exterior=args.exterior, threads=args.threads,
                                        reference=y_star, local_jacobians=local)
    doc = run_to_document(problem, outcome, args.omega, args.seed)
    status = "✅ Converged" if outcome.result.converged else "⚠️ Not converged"
    print(f"{status} after {outcome.result.rounds} rounds (alpha = {outcome.rate.alpha:.3g})")
    if args.csv:
        pd.DataFrame([r.model_dump() for r in doc.rounds]).to_csv(args.csv, index=False)
        print(f"💾 Saved {args.csv}")
    _emit(doc, args.output)


def _bench(kind: str):
    def command(args):
        settings = {k: v for k, v in vars(args).items()
                    if k in ("n", "l", "N", "T", "rounds", "lambda_", "stiffness") and v is not None}
        if "lambda_" in settings:
            settings["lambda"] = settings.pop("lambda_")
        if args.parallel_local:
            settings["parallel_local"] = True
            settings["threads"] = args.threads
        config = default_config(kind, sweep=parse_sweep(args.sweep), repetitions=args.repetitions,
                                seeds=args.seeds or [args.seed], tol=args.tol, output=args.output,
                                settings=settings)
        print(f"📄 Experiment {kind} (config {config.config_hash()[:12]})")
        run_experiment(config)
    return command


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--tol", type=float, default=SOLVER_TOL)
    common.add_argument("--threads", type=int, default=None)
    common.add_argument("--parallel-local", action="store_true")
    common.add_argument("-o", "--output", default=None)
    common.add_argument("--log-level", default=LOG_LEVEL)

    parser = argparse.ArgumentParser(prog="python -m src.cli",
                                     description="Jacobians of constraint-coupled QPs")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", parents=[common], help="generate a problem")
    p.add_argument("--kind", choices=("random", "chain"), default="random")
    p.add_argument("--N", type=int, default=2)
    p.add_argument("--n", type=int, default=1)
    p.add_argument("--l", type=int, default=0)
    p.add_argument("--k", type=int, default=0)
    p.add_argument("--n-eq", type=int, default=1)
    p.add_argument("--n-ineq", type=int, default=0)
    p.add_argument("--structure", default="dense")
    p.add_argument("--T", type=int, default=10)
    p.add_argument("--buffer", type=float, default=1.0)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("solve", parents=[common], help="solve and verify assumptions")
    p.add_argument("problem")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("diff", parents=[common], help="total Jacobian")
    p.add_argument("problem")
    p.add_argument("solution")
    p.add_argument("--mode", choices=DIFF_MODES, default="decentralized")
    p.add_argument("--h", type=float, default=1e-5)
    p.add_argument("--no-check", action="store_true")
    p.set_defaults(func=cmd_diff)

    p = sub.add_parser("graph", parents=[common], help="constraint graph summary")
    p.add_argument("problem")
    p.add_argument("--omega", type=int, default=0)
    p.add_argument("--exterior", choices=EXTERIOR_MODES, default="omega")
    p.set_defaults(func=cmd_graph)

    p = sub.add_parser("dist-diff", parents=[common], help="distributed coupling Jacobian")
    p.add_argument("problem")
    p.add_argument("solution")
    p.add_argument("--omega", type=int, default=1)
    p.add_argument("--rounds", type=int, default=50)
    p.add_argument("--dist-tol", type=float, default=DIST_TOL)
    p.add_argument("--exterior", choices=EXTERIOR_MODES, default="omega")
    p.add_argument("--csv", default=None)
    p.add_argument("--no-check", action="store_true")
    p.set_defaults(func=cmd_dist_diff)

    benches = {
        "bench-scaling": "scaling-N",
        "bench-rho": "scaling-rho",
        "bench-convergence": "convergence",
        "bench-chain": "chain-decay",
    }
    for name, kind in benches.items():
        p = sub.add_parser(name, parents=[common], help=f"{kind} experiment")
        p.add_argument("--sweep", default=None)
        p.add_argument("--repetitions", type=int, default=None)
        p.add_argument("--seeds", type=int, nargs="+", default=None)
        p.add_argument("--N", type=int, default=None)
        p.add_argument("--n", type=int, default=None)
        p.add_argument("--l", type=int, default=None)
        if kind == "scaling-N":
            p.add_argument("--fixed-lambda", dest="lambda_", type=int, default=None)
        if kind == "convergence":
            p.add_argument("--rounds", type=int, default=None)
        if kind == "chain-decay":
            p.add_argument("--T", type=int, default=None)
            p.add_argument("--stiffness", type=float, nargs="+", default=None)
        p.set_defaults(func=_bench(kind))
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    try:
        args.func(args)
    except SensitivityError as e:
        print(f"❌ {type(e).__name__}: {e}")
        return exit_code(e)
    except np.linalg.LinAlgError as e:
        print(f"❌ Numerical failure: {e}")
        return 3
    except (DocumentError, ValueError, FileNotFoundError) as e:
        print(f"❌ Invalid input: {e}")
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
