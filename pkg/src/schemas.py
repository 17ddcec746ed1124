"""
JSON documents for problems, solutions, Jacobians, graphs and distributed runs.

Matrices are row-major nested lists. Empty matrices are rebuilt with the
dimension their owner implies, e.g. A_i with l_i = 0 becomes (0, n_i).
"""
import hashlib
import json
import math
from typing import Any, Dict, List, Optional

import numpy as np
from pydantic import BaseModel, Field, field_validator

from src.config import FORMAT_VERSION
from src.coupling import TotalJacobian
from src.model import CouplingConstraints, LocalSelector, ParameterMap, Problem, Subproblem, theta_read
from src.solver import AssumptionReport, Solution

Matrix = List[List[float]]
Vector = List[float]


def _matrix(value, rows: int, cols: int) -> np.ndarray:
    return np.array(value, dtype=float).reshape(rows, cols)


def _finite(value: float) -> Optional[float]:
    """JSON has no inf/nan; they are written as null."""
    return float(value) if math.isfinite(value) else None


# ---------------------------------------------------------------------------
# Problem
# ---------------------------------------------------------------------------

class SubproblemDocument(BaseModel):
    P: Matrix
    c: Vector
    A: Matrix = []
    b: Vector = []
    E: Matrix = []
    e: Vector = []


class CouplingDocument(BaseModel):
    H_blocks: List[Matrix]
    d: Vector = []
    F_blocks: List[Matrix]
    f: Vector = []


class SelectorDocument(BaseModel):
    c: List[int] = []
    b: List[int] = []
    e: List[int] = []


class ParamsDocument(BaseModel):
    local: List[SelectorDocument]
    d: List[int] = []
    f: List[int] = []
    cost_sign: float = -1.0


class ProblemDocument(BaseModel):
    subproblems: List[SubproblemDocument]
    coupling: CouplingDocument
    params: ParamsDocument
    meta: Dict[str, Any] = {}


def problem_to_document(problem: Problem) -> ProblemDocument:
    pm = problem.params
    return ProblemDocument(
        subproblems=[
            SubproblemDocument(P=sp.P.tolist(), c=sp.c.tolist(), A=sp.A.tolist(), b=sp.b.tolist(),
                               E=sp.E.tolist(), e=sp.e.tolist())
            for sp in problem.subproblems
        ],
        coupling=CouplingDocument(
            H_blocks=[H.tolist() for H in problem.coupling.H_blocks],
            d=problem.coupling.d.tolist(),
            F_blocks=[F.tolist() for F in problem.coupling.F_blocks],
            f=problem.coupling.f.tolist(),
        ),
        params=ParamsDocument(
            local=[SelectorDocument(c=s.c.tolist(), b=s.b.tolist(), e=s.e.tolist()) for s in pm.local],
            d=pm.d.tolist(),
            f=pm.f.tolist(),
            cost_sign=pm.cost_sign,
        ),
        meta={"version": FORMAT_VERSION, **problem.meta},
    )


def problem_from_document(doc: ProblemDocument) -> Problem:
    subproblems = []
    for i, sd in enumerate(doc.subproblems):
        n = len(sd.c)
        subproblems.append(Subproblem(
            index=i,
            P=_matrix(sd.P, n, n),
            c=np.array(sd.c, dtype=float),
            A=_matrix(sd.A, len(sd.b), n),
            b=np.array(sd.b, dtype=float),
            E=_matrix(sd.E, len(sd.e), n),
            e=np.array(sd.e, dtype=float),
        ))
    cd = doc.coupling
    coupling = CouplingConstraints(
        H_blocks=tuple(_matrix(H, len(cd.d), sp.n) for H, sp in zip(cd.H_blocks, subproblems)),
        d=np.array(cd.d, dtype=float),
        F_blocks=tuple(_matrix(F, len(cd.f), sp.n) for F, sp in zip(cd.F_blocks, subproblems)),
        f=np.array(cd.f, dtype=float),
    )
    params = ParameterMap(
        local=tuple(LocalSelector(c=s.c, b=s.b, e=s.e) for s in doc.params.local),
        d=doc.params.d,
        f=doc.params.f,
        cost_sign=doc.params.cost_sign,
    )
    return Problem(tuple(subproblems), coupling, params, dict(doc.meta))


# ---------------------------------------------------------------------------
# Solution
# ---------------------------------------------------------------------------

class AssumptionDocument(BaseModel):
    all_ok: bool
    failures: List[str] = []
    licq_ok: bool
    licq_min_singular: Optional[float]
    strict_complementarity_ok: bool
    min_active_dual: Optional[float]
    min_inactive_slack: Optional[float]
    second_order_global_ok: bool
    second_order_global_min_eig: Optional[float]
    second_order_local_ok: bool
    second_order_local_min_eig: List[Optional[float]]
    active_local: List[List[bool]]
    active_coupling: List[bool]


class SolutionDocument(BaseModel):
    x: List[Vector]
    lambda_local: List[Vector]
    mu_local: List[Vector]
    nu: Vector
    lam: Vector = Field(alias="lambda")
    kkt_residual: float
    converged: bool = True
    iterations: int = 0
    polished: bool = False
    assumptions: Optional[AssumptionDocument] = None

    model_config = {"populate_by_name": True}


def report_to_document(report: AssumptionReport) -> AssumptionDocument:
    return AssumptionDocument(
        all_ok=report.all_ok,
        failures=report.failures(),
        licq_ok=report.licq_ok,
        licq_min_singular=_finite(report.licq_min_singular),
        strict_complementarity_ok=report.strict_complementarity_ok,
        min_active_dual=_finite(report.min_active_dual),
        min_inactive_slack=_finite(report.min_inactive_slack),
        second_order_global_ok=report.second_order_global_ok,
        second_order_global_min_eig=_finite(report.second_order_global_min_eig),
        second_order_local_ok=report.second_order_local_ok,
        second_order_local_min_eig=[_finite(v) for v in report.second_order_local_min_eig],
        active_local=[a.tolist() for a in report.active_sets.local],
        active_coupling=report.active_sets.coupling.tolist(),
    )


def solution_to_document(solution: Solution, report: Optional[AssumptionReport] = None) -> SolutionDocument:
    return SolutionDocument(
        x=[v.tolist() for v in solution.x],
        lambda_local=[v.tolist() for v in solution.lambda_local],
        mu_local=[v.tolist() for v in solution.mu_local],
        nu=solution.nu.tolist(),
        lam=solution.lam.tolist(),
        kkt_residual=solution.kkt_residual,
        converged=solution.converged,
        iterations=solution.iterations,
        polished=solution.polished,
        assumptions=report_to_document(report) if report is not None else None,
    )


def solution_from_document(doc: SolutionDocument, problem: Problem) -> Solution:
    """Rebuild a Solution; slacks are recomputed from the problem data."""
    xs = [np.array(v, dtype=float) for v in doc.x]
    local_slack = [sp.b - sp.A @ x for sp, x in zip(problem.subproblems, xs)]
    coupling_slack = problem.coupling.f - sum(F @ x for F, x in zip(problem.coupling.F_blocks, xs))
    return Solution(
        x=xs,
        lambda_local=[np.array(v, dtype=float) for v in doc.lambda_local],
        mu_local=[np.array(v, dtype=float) for v in doc.mu_local],
        nu=np.array(doc.nu, dtype=float),
        lam=np.array(doc.lam, dtype=float),
        kkt_residual=doc.kkt_residual,
        local_slack=local_slack,
        coupling_slack=np.asarray(coupling_slack, dtype=float).reshape(problem.n_ineq),
        converged=doc.converged,
        iterations=doc.iterations,
        polished=doc.polished,
    )


# ---------------------------------------------------------------------------
# Jacobians, graphs, runs
# ---------------------------------------------------------------------------

class JacobianDocument(BaseModel):
    mode: str
    theta: Vector
    blocks: List[Matrix]
    assembled: Matrix
    coupling_jacobian: Optional[Matrix] = None


def jacobian_to_document(problem: Problem, jacobian: TotalJacobian, mode: str,
                         coupling_jacobian: Optional[np.ndarray] = None) -> JacobianDocument:
    return JacobianDocument(
        mode=mode,
        theta=theta_read(problem).tolist(),
        blocks=[b.tolist() for b in jacobian.blocks],
        assembled=jacobian.assembled.tolist(),
        coupling_jacobian=None if coupling_jacobian is None else coupling_jacobian.tolist(),
    )


class GraphDocument(BaseModel):
    adjacency: Dict[int, List[int]]
    omega: int
    projected_sizes: List[int]
    member_sizes: List[int]
    degrees: List[int]
    bandwidth_mc: Optional[float]
    bandwidth_dc_structural: Optional[float]


def graph_to_document(summary) -> GraphDocument:
    return GraphDocument(
        adjacency=summary.adjacency,
        omega=summary.omega,
        projected_sizes=summary.projected_sizes,
        member_sizes=summary.member_sizes,
        degrees=summary.degrees,
        bandwidth_mc=_finite(summary.bandwidth_mc),
        bandwidth_dc_structural=_finite(summary.bandwidth_dc_structural),
    )


class RoundDocument(BaseModel):
    t: int
    err_inf: Optional[float] = None
    alpha_bound_t: Optional[float] = None
    msgs: int
    scalars_moved: int
    change_inf: float


class RunDocument(BaseModel):
    omega: int
    seed: int
    alpha: Optional[float]
    converged: bool
    rounds: List[RoundDocument]
    y: Matrix
    jacobian: JacobianDocument


# ---------------------------------------------------------------------------
# Experiment configuration
# ---------------------------------------------------------------------------

class ExperimentConfig(BaseModel):
    kind: str
    sweep: List[float]
    repetitions: int = 20
    seeds: List[int] = [0]
    tol: float = 1e-10
    output: Optional[str] = None
    settings: Dict[str, Any] = {}

    @field_validator("kind")
    @classmethod
    def _known_kind(cls, value: str) -> str:
        if value not in ("scaling-N", "scaling-rho", "convergence", "chain-decay"):
            raise ValueError(f"unknown experiment kind '{value}'")
        return value

    @field_validator("sweep", "seeds")
    @classmethod
    def _non_empty(cls, value):
        if not value:
            raise ValueError("sweep and seeds must be non-empty")
        return value

    @field_validator("repetitions")
    @classmethod
    def _positive(cls, value: int) -> int:
        if value < 1:
            raise ValueError("repetitions must be >= 1")
        return value

    def config_hash(self) -> str:
        """SHA-256 of the canonical JSON form; written into every CSV."""
        canonical = json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def run_to_document(problem: Problem, outcome, omega: int, seed: int) -> RunDocument:
    """RunDocument from a distributed_differentiate outcome."""
    alpha = outcome.rate.alpha
    err0 = outcome.result.initial_error
    rounds = [RoundDocument(t=0, err_inf=err0, alpha_bound_t=err0, msgs=0, scalars_moved=0, change_inf=0.0)]
    for log in outcome.result.history:
        bound = None if err0 is None else _finite(float(np.power(alpha, log.iteration)) * err0)
        rounds.append(RoundDocument(t=log.iteration, err_inf=log.err_inf, alpha_bound_t=bound,
                                    msgs=log.messages, scalars_moved=log.scalars, change_inf=log.change_inf))
    return RunDocument(
        omega=omega,
        seed=seed,
        alpha=_finite(alpha),
        converged=outcome.result.converged,
        rounds=rounds,
        y=outcome.result.y.tolist(),
        jacobian=jacobian_to_document(problem, outcome.jacobian, "distributed", outcome.result.y),
    )
