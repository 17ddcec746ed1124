"""
Local Jacobians of each subproblem's optimal primal with respect to the
augmented parameters θ̄_i = [θ_i, θ_c, ν, λ].

The local KKT residual of subproblem i, with z_i = (x_i, λ_i, μ_i), is

    P_ix_i + c_i + A_iᵀλ_i + E_iᵀμ_i + H_iᵀν + F_iᵀλ
    diag(λ_i)(A_ix_i − b_i)
    E_ix_i − e_i

and ∂_θ̄ x_i = −[I 0] (∂_z G_i)⁻¹ ∂_θ̄ G_i.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from src.errors import InvalidStepError, SingularLocalJacobianError
from src.linalg import factorize, solve_factored
from src.model import Problem, theta_read, theta_write
from src.solver import Solution, solve_local

logger = logging.getLogger(__name__)


@dataclass(eq=False)
class LocalKkt:
    subproblem: int
    dz_G: np.ndarray
    dtheta_G: np.ndarray
    n: int
    l: int
    k: int
    t_local: int
    t_coupling: int
    n_eq: int
    n_ineq: int


@dataclass(eq=False)
class LocalJacobian:
    subproblem: int
    d_theta_i: np.ndarray
    d_theta_c: np.ndarray
    d_nu: np.ndarray
    d_lambda: np.ndarray
    primal_block_inv: Optional[np.ndarray] = None

    @property
    def d_theta_bar(self) -> np.ndarray:
        return np.hstack([self.d_theta_i, self.d_theta_c, self.d_nu, self.d_lambda])

    @property
    def d_coupling(self) -> np.ndarray:
        """∂x_i/∂y with y = [ν; λ]."""
        return np.hstack([self.d_nu, self.d_lambda])


def build_local_kkt(problem: Problem, i: int, solution: Solution) -> LocalKkt:
    sp = problem.subproblems[i]
    pm = problem.params
    H, F = problem.coupling.H_blocks[i], problem.coupling.F_blocks[i]
    n, l, k = sp.n, sp.l, sp.k
    x, lam = solution.x[i], solution.lambda_local[i]
    t_i, t_c = pm.local[i].size, pm.coupling_size
    n_eq, n_ineq = problem.n_eq, problem.n_ineq

    size = n + l + k
    dz = np.zeros((size, size))
    dz[:n, :n] = sp.P
    dz[:n, n:n + l] = sp.A.T
    dz[:n, n + l:] = sp.E.T
    dz[n:n + l, :n] = lam[:, None] * sp.A
    dz[n:n + l, n:n + l] = np.diag(sp.A @ x - sp.b)
    dz[n + l:, :n] = sp.E

    cols = t_i + t_c + n_eq + n_ineq
    dtheta = np.zeros((size, cols))
    dtheta[:n, :t_i] = pm.cost_jacobian(i, n)
    dtheta[:n, t_i + t_c:t_i + t_c + n_eq] = H.T
    dtheta[:n, t_i + t_c + n_eq:] = F.T
    dtheta[n:n + l, :t_i] = -lam[:, None] * pm.b_jacobian(i, l)
    dtheta[n + l:, :t_i] = -pm.e_jacobian(i, k)
    return LocalKkt(i, dz, dtheta, n, l, k, t_i, t_c, n_eq, n_ineq)


def local_jacobian(kkt: LocalKkt) -> LocalJacobian:
    factors = factorize(kkt.dz_G)
    if factors is None:
        raise SingularLocalJacobianError(kkt.subproblem)
    n = kkt.n
    rhs = np.hstack([kkt.dtheta_G, np.eye(kkt.dz_G.shape[0])[:, :n]])
    sol = solve_factored(factors, rhs)
    primal = -sol[:n, :kkt.dtheta_G.shape[1]]
    a = kkt.t_local
    b = a + kkt.t_coupling
    c = b + kkt.n_eq
    # symmetric in exact arithmetic; the LU solve of the unsymmetric KKT matrix is not
    inverse = sol[:n, kkt.dtheta_G.shape[1]:]
    return LocalJacobian(
        subproblem=kkt.subproblem,
        d_theta_i=primal[:, :a],
        d_theta_c=primal[:, a:b],
        d_nu=primal[:, b:c],
        d_lambda=primal[:, c:],
        primal_block_inv=0.5 * (inverse + inverse.T),
    )


def compute_local_jacobians(problem: Problem, solution: Solution, parallel: bool = False,
                            threads: Optional[int] = None) -> List[LocalJacobian]:
    """All N local Jacobians; independent, so optionally computed on a thread pool."""
    def one(i):
        return local_jacobian(build_local_kkt(problem, i, solution))

    if parallel and problem.N > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(one, range(problem.N)))
    return [one(i) for i in range(problem.N)]


def finite_diff_local(problem: Problem, i: int, solution: Solution, h: float = 1e-5) -> LocalJacobian:
    """
    Central-difference estimate of the local Jacobian obtained by re-solving
    the partial-Lagrangian subproblem i at perturbed θ̄_i.
    """
    if not h > 0.0:
        raise InvalidStepError(f"finite-difference step must be positive, got {h}")
    pm = problem.params
    theta = theta_read(problem)
    local_cols = np.arange(pm.total)[pm.local_columns(i)]
    coupling_cols = np.arange(pm.total)[pm.coupling_columns]
    nu, lam = solution.nu, solution.lam

    def primal(prob, nu_, lam_):
        x, _, _, converged = solve_local(prob, i, nu_, lam_)
        if not converged:
            logger.warning("local re-solve of subproblem %d did not converge", i)
        return x

    columns = []
    for col in np.concatenate([local_cols, coupling_cols]).astype(int):
        plus, minus = theta.copy(), theta.copy()
        plus[col] += h
        minus[col] -= h
        columns.append((primal(theta_write(problem, plus), nu, lam)
                        - primal(theta_write(problem, minus), nu, lam)) / (2 * h))
    for duals, which in ((nu, "nu"), (lam, "lam")):
        for j in range(duals.size):
            step = np.zeros(duals.size)
            step[j] = h
            if which == "nu":
                xp, xm = primal(problem, nu + step, lam), primal(problem, nu - step, lam)
            else:
                xp, xm = primal(problem, nu, lam + step), primal(problem, nu, lam - step)
            columns.append((xp - xm) / (2 * h))

    n = problem.subproblems[i].n
    est = np.column_stack(columns) if columns else np.zeros((n, 0))
    a, b = local_cols.size, local_cols.size + coupling_cols.size
    c = b + nu.size
    return LocalJacobian(i, est[:, :a], est[:, a:b], est[:, b:c], est[:, c:])
