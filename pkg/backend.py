"""
FastAPI Backend for the constraint-coupled QP sensitivity pipeline
"""
from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel
from typing import Literal, Optional
import logging
import os
import sys

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from src.config import DIST_TOL, SOLVER_TOL, configure_logging
from src.coupling import build_coupling_system, complexity_eta, differentiate, solve_coupling_central
from src.distnet import distributed_differentiate
from src.errors import SensitivityError, ValidationError
from src.graph import summarize
from src.localdiff import compute_local_jacobians
from src.model import generate_chain, generate_random
from src.schemas import (
    GraphDocument, JacobianDocument, ProblemDocument, RunDocument, SolutionDocument, graph_to_document,
    jacobian_to_document, problem_from_document, problem_to_document, run_to_document,
    solution_from_document, solution_to_document,
)
from src.solver import require_assumptions, solve, verify_assumptions

configure_logging()
logger = logging.getLogger(__name__)

app = FastAPI(title="Coupled QP Sensitivity API", version="1.0.0")

app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)


# Request models
class GenerateRequest(BaseModel):
    kind: Literal["random", "chain"] = "random"
    N: int = 2
    n: int = 1
    l: int = 0
    k: int = 0
    n_eq: int = 1
    n_ineq: int = 0
    structure: str = "dense"
    T: int = 10
    buffer: float = 1.0
    seed: int = 0


class SolveRequest(BaseModel):
    problem: ProblemDocument
    tol: float = SOLVER_TOL


class DiffRequest(BaseModel):
    problem: ProblemDocument
    solution: Optional[SolutionDocument] = None  # solved on the fly when omitted
    mode: Literal["central", "decentralized", "finite-difference"] = "decentralized"
    h: float = 1e-5
    check: bool = True


class GraphRequest(BaseModel):
    problem: ProblemDocument
    omega: int = 0
    exterior: Literal["omega", "own"] = "omega"


class DistDiffRequest(BaseModel):
    problem: ProblemDocument
    solution: Optional[SolutionDocument] = None
    omega: int = 1
    rounds: int = 50
    seed: int = 0
    tol: float = DIST_TOL
    exterior: Literal["omega", "own"] = "omega"
    check: bool = True


def _http_error(e: SensitivityError) -> HTTPException:
    if isinstance(e, ValidationError):
        return HTTPException(status_code=422, detail=str(e))
    logger.error("pipeline failure: %s", e)
    return HTTPException(status_code=500, detail=str(e))


def _problem_and_solution(problem_doc: ProblemDocument, solution_doc: Optional[SolutionDocument], check: bool):
    problem = problem_from_document(problem_doc)
    if solution_doc is None:
        solution = solve(problem)
    else:
        solution = solution_from_document(solution_doc, problem)
    if check:
        require_assumptions(problem, solution)
    return problem, solution


# API Endpoints

@app.get("/")
async def root():
    return {"message": "Coupled QP Sensitivity API", "status": "running"}


@app.post("/api/generate", response_model=ProblemDocument)
def generate(request: GenerateRequest):
    """Draw a random or time-coupled chain problem."""
    try:
        if request.kind == "chain":
            problem = generate_chain(request.T, request.n, buffer=request.buffer, seed=request.seed, l=request.l)
        else:
            problem = generate_random(request.N, request.n, l=request.l, k=request.k, n_eq=request.n_eq,
                                      n_ineq=request.n_ineq, structure=request.structure, seed=request.seed)
        return problem_to_document(problem)
    except SensitivityError as e:
        raise _http_error(e)


@app.post("/api/solve", response_model=SolutionDocument, response_model_by_alias=True)
def solve_problem(request: SolveRequest):
    """Solve the joint QP and attach the assumption report."""
    try:
        problem = problem_from_document(request.problem)
        solution = solve(problem, tol=request.tol)
        return solution_to_document(solution, verify_assumptions(problem, solution))
    except SensitivityError as e:
        raise _http_error(e)


@app.post("/api/diff", response_model=JacobianDocument)
def diff(request: DiffRequest):
    try:
        problem, solution = _problem_and_solution(request.problem, request.solution, request.check)
        jacobian, y = differentiate(problem, solution, request.mode, h=request.h)
        return jacobian_to_document(problem, jacobian, request.mode, y)
    except SensitivityError as e:
        raise _http_error(e)


@app.post("/api/graph", response_model=GraphDocument)
def graph(request: GraphRequest):
    try:
        problem = problem_from_document(request.problem)
        return graph_to_document(summarize(problem, request.omega, request.exterior))
    except SensitivityError as e:
        raise _http_error(e)


@app.post("/api/dist-diff", response_model=RunDocument)
def dist_diff(request: DistDiffRequest):
    """Distributed coupling Jacobian; errors are measured against the central solve."""
    try:
        problem, solution = _problem_and_solution(request.problem, request.solution, request.check)
        local = compute_local_jacobians(problem, solution)
        reference = solve_coupling_central(build_coupling_system(problem, solution, local))
        outcome = distributed_differentiate(problem, solution, request.omega, rounds=request.rounds,
                                            seed=request.seed, tol=request.tol, exterior=request.exterior,
                                            reference=reference, local_jacobians=local)
        return run_to_document(problem, outcome, request.omega, request.seed)
    except SensitivityError as e:
        raise _http_error(e)


@app.get("/api/complexity")
async def complexity(rho: float, n_subproblems: int):
    """Model complexity ratio η = decentralized / central."""
    try:
        return {"rho": rho, "n_subproblems": n_subproblems, "eta": complexity_eta(rho, n_subproblems)}
    except SensitivityError as e:
        raise _http_error(e)


if __name__ == "__main__":
    import uvicorn
    uvicorn.run(app, host="0.0.0.0", port=4100)
