"""
Coupling system ∂C y = q, its central solution, the chain-rule update to total
Jacobians, and the two global oracles (full-KKT and finite differences).

∂C and q are sums of per-subproblem terms:

    ∂C_i = −[ H_i∂_νx_i            H_i∂_λx_i                          ]
            [ diag(λ)F_i∂_νx_i     diag(λ)F_i∂_λx_i + diag(F_ix_i − f_i) ]
    q_i  =  [ H_i∂_θx_i − ∂_θd_i ;  diag(λ)(F_i∂_θx_i − ∂_θf_i) ]

where the offsets d, f (and their parameter columns) are charged to the
lowest-index subproblem touching each row.
"""
import logging
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from src.config import TIMING_REPS
from src.errors import (
    ActiveSetFlipError, InvalidDimensionsError, SingularCouplingError, SingularGlobalJacobianError,
)
from src.linalg import factorize, solve_factored
from src.localdiff import LocalJacobian, build_local_kkt, compute_local_jacobians
from src.model import Problem, theta_read, theta_write
from src.solver import Solution, active_set, solve

logger = logging.getLogger(__name__)


@dataclass(eq=False)
class LocalTerm:
    """(∂C_i, q_i) restricted to the coupling rows V_i^0 that subproblem i touches."""
    subproblem: int
    rows: np.ndarray
    dC: np.ndarray
    q: np.ndarray


@dataclass(eq=False)
class CouplingSystem:
    dC: np.ndarray
    q: np.ndarray
    local_terms: List[LocalTerm] = field(default_factory=list)
    n_eq: int = 0

    @property
    def size(self) -> int:
        return self.dC.shape[0]


@dataclass(eq=False)
class TotalJacobian:
    blocks: List[np.ndarray]

    @property
    def assembled(self) -> np.ndarray:
        return np.vstack(self.blocks) if self.blocks else np.zeros((0, 0))


def row_owners(problem: Problem) -> np.ndarray:
    """Lowest-index subproblem touching each coupling row."""
    pattern = problem.coupling.pattern()
    return np.array([int(np.flatnonzero(pattern[j])[0]) for j in range(problem.n_coupling)], dtype=int)


def embedded_theta_jacobian(problem: Problem, lj: LocalJacobian) -> np.ndarray:
    """∂_θx_i over the full θ: nonzero only in the θ_i and θ_c column blocks."""
    pm = problem.params
    out = np.zeros((lj.d_theta_i.shape[0], pm.total))
    out[:, pm.local_columns(lj.subproblem)] = lj.d_theta_i
    out[:, pm.coupling_columns] = lj.d_theta_c
    return out


def _dual_scale(problem: Problem, solution: Solution) -> np.ndarray:
    return np.concatenate([np.ones(problem.n_eq), solution.lam])


def assemble_local_terms(problem: Problem, i: int, lj: LocalJacobian, solution: Solution,
                         owners: Optional[np.ndarray] = None) -> LocalTerm:
    if owners is None:
        owners = row_owners(problem)
    pm = problem.params
    n_eq = problem.n_eq
    M = problem.coupling.block(i)
    scale = _dual_scale(problem, solution)
    owned = owners == i

    slack_share = np.zeros(problem.n_coupling)
    slack_share[n_eq:] = problem.coupling.F_blocks[i] @ solution.x[i]
    slack_share[n_eq:] -= np.where(owned[n_eq:], problem.coupling.f, 0.0)
    dC = -(scale[:, None] * (M @ lj.d_coupling)) - np.diag(slack_share)

    offset = np.vstack([pm.d_jacobian(n_eq), pm.f_jacobian(problem.n_ineq)])
    offset_full = np.zeros((problem.n_coupling, pm.total))
    offset_full[:, pm.coupling_columns] = offset
    offset_full[~owned] = 0.0
    q = scale[:, None] * (M @ embedded_theta_jacobian(problem, lj) - offset_full)

    rows = problem.coupling.rows_of(i)
    return LocalTerm(i, rows, dC[np.ix_(rows, rows)], q[rows])


def build_coupling_system(problem: Problem, solution: Solution,
                          local_jacobians: List[LocalJacobian]) -> CouplingSystem:
    """∂C = Σ_i ∂C_i and q = Σ_i q_i from the local contributions."""
    owners = row_owners(problem)
    size, t = problem.n_coupling, problem.params.total
    dC, q = np.zeros((size, size)), np.zeros((size, t))
    terms = []
    for i, lj in enumerate(local_jacobians):
        term = assemble_local_terms(problem, i, lj, solution, owners)
        dC[np.ix_(term.rows, term.rows)] += term.dC
        q[term.rows] += term.q
        terms.append(term)
    return CouplingSystem(dC, q, terms, problem.n_eq)


def solve_coupling_central(system: CouplingSystem) -> np.ndarray:
    """y = [D_θν; D_θλ] from one dense LU solve of ∂C y = q."""
    if system.size == 0:
        return np.zeros((0, system.q.shape[1]))
    factors = factorize(system.dC)
    if factors is None:
        raise SingularCouplingError(
            "coupling system is singular: the differentiability assumptions fail "
            "or there are too many coupling constraints for the subproblems")
    return solve_factored(factors, system.q)


def split_coupling_jacobian(y: np.ndarray, n_eq: int):
    return y[:n_eq], y[n_eq:]


def total_jacobian(problem: Problem, local_jacobians: List[LocalJacobian], y: np.ndarray) -> TotalJacobian:
    """D_θx_i = ∂_θx_i + ∂_νx_i D_θν + ∂_λx_i D_θλ."""
    blocks = []
    for lj in local_jacobians:
        block = embedded_theta_jacobian(problem, lj)
        if y.shape[0]:
            block = block + lj.d_coupling @ y
        blocks.append(block)
    return TotalJacobian(blocks)


def decentralized_jacobian(problem: Problem, solution: Solution, parallel_local: bool = False,
                           threads: Optional[int] = None):
    """Local Jacobians, coupling system, central coupling solve and chain rule in one call."""
    local_jacobians = compute_local_jacobians(problem, solution, parallel=parallel_local, threads=threads)
    system = build_coupling_system(problem, solution, local_jacobians)
    y = solve_coupling_central(system)
    return total_jacobian(problem, local_jacobians, y), system, y, local_jacobians


# ---------------------------------------------------------------------------
# Global oracles
# ---------------------------------------------------------------------------

def global_kkt(problem: Problem, solution: Solution):
    """
    Jacobian of the full KKT system in the variables (z_1, ..., z_N, ν, λ)
    and its parameter Jacobian.

    Coupling rows are written as [d − ΣH_ix_i; −diag(λ)(ΣF_ix_i − f)] so that
    the Schur complement of the block-diagonal local block equals ∂C.
    Returns (J, R_theta, z_slices, x_slices).
    """
    pm = problem.params
    t = pm.total
    kkts = [build_local_kkt(problem, i, solution) for i in range(problem.N)]
    sizes = [kkt.dz_G.shape[0] for kkt in kkts]
    m = sum(sizes)
    L = problem.n_coupling
    n_eq = problem.n_eq
    J = np.zeros((m + L, m + L))
    R = np.zeros((m + L, t))
    scale = _dual_scale(problem, solution)
    z_slices, x_slices = [], []
    start = 0
    F_x = np.zeros(problem.n_ineq)
    for i, kkt in enumerate(kkts):
        block = slice(start, start + sizes[i])
        z_slices.append(block)
        x_slices.append(slice(start, start + kkt.n))
        J[block, block] = kkt.dz_G
        t_i, t_c = kkt.t_local, kkt.t_coupling
        R[block, pm.local_columns(i)] = kkt.dtheta_G[:, :t_i]
        R[block, pm.coupling_columns] = kkt.dtheta_G[:, t_i:t_i + t_c]
        J[block, m:] = kkt.dtheta_G[:, t_i + t_c:]
        J[m:, start:start + kkt.n] = -scale[:, None] * problem.coupling.block(i)
        F_x += problem.coupling.F_blocks[i] @ solution.x[i]
        start += sizes[i]
    J[m + n_eq:, m + n_eq:] = -np.diag(F_x - problem.coupling.f)
    R[m:m + n_eq, pm.coupling_columns] = pm.d_jacobian(n_eq)
    R[m + n_eq:, pm.coupling_columns] = solution.lam[:, None] * pm.f_jacobian(problem.n_ineq)
    return J, R, z_slices, x_slices


def centralized_oracle(problem: Problem, solution: Solution) -> TotalJacobian:
    """Differentiate the single global KKT system in one linear solve."""
    J, R, _, x_slices = global_kkt(problem, solution)
    factors = factorize(J)
    if factors is None:
        raise SingularGlobalJacobianError("global KKT Jacobian is singular")
    dw = -solve_factored(factors, R)
    return TotalJacobian([dw[s] for s in x_slices])


def coupling_schur_complement(problem: Problem, solution: Solution) -> np.ndarray:
    """Schur complement of the block-diagonal local block inside the global KKT Jacobian."""
    J, _, _, _ = global_kkt(problem, solution)
    m = J.shape[0] - problem.n_coupling
    factors = factorize(J[:m, :m])
    if factors is None:
        raise SingularGlobalJacobianError("block-diagonal local block is singular")
    return J[m:, m:] - J[m:, :m] @ solve_factored(factors, J[:m, m:])


def finite_difference_oracle(problem: Problem, theta=None, h: float = 1e-5) -> TotalJacobian:
    """
    Column-by-column central differences of x*(θ) by global re-solves.

    A perturbation that changes the active set is retried once with h/10;
    a second change raises ActiveSetFlipError naming the parameter.
    """
    if theta is not None:
        problem = theta_write(problem, theta)
    theta = theta_read(problem)
    base = active_set(solve(problem))
    columns = []
    for j in range(theta.size):
        for step in (h, h / 10.0):
            plus, minus = theta.copy(), theta.copy()
            plus[j] += step
            minus[j] -= step
            sol_plus = solve(theta_write(problem, plus))
            sol_minus = solve(theta_write(problem, minus))
            if active_set(sol_plus).same_as(base) and active_set(sol_minus).same_as(base):
                columns.append((sol_plus.x_stacked - sol_minus.x_stacked) / (2 * step))
                break
            logger.info("active set flips for parameter %d at step %.1e", j, step)
        else:
            raise ActiveSetFlipError(j, h / 10.0)
    n_total = sum(problem.sizes)
    D = np.column_stack(columns) if columns else np.zeros((n_total, 0))
    return TotalJacobian([D[s] for s in problem.x_slices])


# ---------------------------------------------------------------------------
# Complexity model and timing
# ---------------------------------------------------------------------------

def coupling_ratio(problem: Problem) -> float:
    """ρ = Λ / Σ_i(n_i + l_i)."""
    return problem.n_coupling / sum(sp.n + sp.l for sp in problem.subproblems)


def complexity_eta(rho: float, N: int) -> float:
    """Predicted ratio of decentralized to centralized compute time, (ρ³ + 1/N²)/(1+ρ)³."""
    if rho < 0 or N < 1:
        raise InvalidDimensionsError("complexity model needs rho >= 0 and N >= 1")
    return (rho ** 3 + 1.0 / N ** 2) / (1.0 + rho) ** 3


def _min_time(fn, repetitions: int) -> float:
    fn()  # warm-up
    best = float("inf")
    for _ in range(repetitions):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def time_pipelines(problem: Problem, solution: Solution, repetitions: int = TIMING_REPS,
                   parallel_local: bool = False, threads: Optional[int] = None) -> Dict[str, float]:
    """Minimum wall-clock of the centralized and decentralized pipelines."""
    timings = {
        "t_central_s": _min_time(lambda: centralized_oracle(problem, solution), repetitions),
        "t_decentralized_s": _min_time(lambda: decentralized_jacobian(problem, solution), repetitions),
    }
    if parallel_local:
        timings["t_decentralized_parallel_s"] = _min_time(
            lambda: decentralized_jacobian(problem, solution, parallel_local=True, threads=threads),
            repetitions)
    return timings


DIFF_MODES = ("central", "decentralized", "finite-difference")


def differentiate(problem: Problem, solution: Solution, mode: str = "decentralized", h: float = 1e-5,
                  parallel_local: bool = False, threads: Optional[int] = None):
    """Total Jacobian by the requested path; returns (TotalJacobian, y or None)."""
    if mode == "central":
        return centralized_oracle(problem, solution), None
    if mode == "decentralized":
        jacobian, _, y, _ = decentralized_jacobian(problem, solution, parallel_local, threads)
        return jacobian, y
    if mode == "finite-difference":
        return finite_difference_oracle(problem, h=h), None
    raise InvalidDimensionsError(f"unknown differentiation mode '{mode}'")
