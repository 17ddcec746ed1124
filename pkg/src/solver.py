"""
Global QP solver and verification of the differentiability assumptions.

The QP is solved in stacked form by a primal-dual interior-point method with
Mehrotra predictor-corrector steps. Once the iterate is close, the solver
polishes it on the identified active set so that the returned duals are
exactly complementary (zero on inactive rows, zero slack on active rows).
"""
import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy.linalg import ldl, qr, solve_banded, solve_triangular

from src.config import (
    LICQ_TOL, SECOND_ORDER_TOL, SOLVER_MAX_ITER, SOLVER_REG, SOLVER_TOL, TOL_ACT, TOL_SC,
)
from src.errors import AssumptionViolationError, NumericalFailureError
from src.linalg import factorize, solve_factored
from src.model import Problem, StackedQP

logger = logging.getLogger(__name__)

POLISH_START = 1e-6
STEP_FRACTION = 0.99
REG_RETRIES = 4


@dataclass(eq=False)
class Solution:
    x: List[np.ndarray]
    lambda_local: List[np.ndarray]
    mu_local: List[np.ndarray]
    nu: np.ndarray
    lam: np.ndarray
    kkt_residual: float
    local_slack: List[np.ndarray] = field(default_factory=list)
    coupling_slack: np.ndarray = field(default_factory=lambda: np.zeros(0))
    converged: bool = True
    iterations: int = 0
    polished: bool = False

    @property
    def x_stacked(self) -> np.ndarray:
        return np.concatenate(self.x) if self.x else np.zeros(0)

    @property
    def coupling_duals(self) -> np.ndarray:
        """y-ordered coupling duals [ν; λ]."""
        return np.concatenate([self.nu, self.lam])


@dataclass(eq=False)
class QPResult:
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    residual: float
    converged: bool
    iterations: int
    polished: bool


@dataclass(eq=False)
class ActiveSet:
    local: List[np.ndarray]
    coupling: np.ndarray

    def coupling_rows(self, n_eq: int) -> np.ndarray:
        """Activity over all Λ coupling rows; equality rows are always active."""
        return np.concatenate([np.ones(n_eq, dtype=bool), self.coupling])

    def same_as(self, other: "ActiveSet") -> bool:
        return all(np.array_equal(a, b) for a, b in zip(self.local, other.local)) and \
            np.array_equal(self.coupling, other.coupling)


@dataclass(eq=False)
class AssumptionReport:
    licq_ok: bool
    licq_min_singular: float
    strict_complementarity_ok: bool
    min_active_dual: float
    min_inactive_slack: float
    second_order_global_ok: bool
    second_order_global_min_eig: float
    second_order_local_ok: bool
    second_order_local_min_eig: List[float]
    local_ok: List[bool]
    active_sets: ActiveSet

    @property
    def all_ok(self) -> bool:
        return self.licq_ok and self.strict_complementarity_ok and \
            self.second_order_global_ok and self.second_order_local_ok

    def failures(self) -> List[str]:
        names = {
            "licq": self.licq_ok,
            "strict_complementarity": self.strict_complementarity_ok,
            "second_order_global": self.second_order_global_ok,
            "second_order_local": self.second_order_local_ok,
        }
        return [name for name, ok in names.items() if not ok]


# ---------------------------------------------------------------------------
# Interior-point method
# ---------------------------------------------------------------------------

def _inf_norm(v) -> float:
    v = np.asarray(v)
    return float(np.abs(v).max()) if v.size else 0.0


def _kkt_residual(qp: StackedQP, x, y, z) -> float:
    slack = qp.h - qp.G @ x
    parts = [
        _inf_norm(qp.P @ x + qp.c + qp.A_eq.T @ y + qp.G.T @ z),
        _inf_norm(qp.A_eq @ x - qp.b_eq),
        _inf_norm(np.minimum(slack, 0.0)),
        _inf_norm(np.minimum(z, 0.0)),
        _inf_norm(z * slack),
    ]
    return max(parts)


class _LdlFactor:
    """Symmetric indefinite LDLᵀ factorization with a tridiagonal D solve."""

    def __init__(self, K):
        lu, d, perm = ldl(K, lower=True)
        if not (np.all(np.isfinite(lu)) and np.all(np.isfinite(d))):
            raise np.linalg.LinAlgError("non-finite LDL factor")
        self.Lp = lu[perm]
        self.perm = perm
        size = d.shape[0]
        self.banded = np.zeros((3, size))
        self.banded[1] = np.diag(d)
        if size > 1:
            self.banded[0, 1:] = np.diag(d, 1)
            self.banded[2, :-1] = np.diag(d, -1)

    def solve(self, rhs):
        u = solve_triangular(self.Lp, rhs[self.perm], lower=True)
        v = solve_banded((1, 1), self.banded, u)
        w = solve_triangular(self.Lp.T, v, lower=False)
        out = np.empty_like(w)
        out[self.perm] = w
        if not np.all(np.isfinite(out)):
            raise np.linalg.LinAlgError("non-finite Newton direction")
        return out


def _max_step(v, dv) -> float:
    """Largest step keeping v + step*dv nonnegative (inf when unbounded)."""
    neg = dv < 0
    if not np.any(neg):
        return float("inf")
    return float(np.min(-v[neg] / dv[neg]))


def _polish(qp: StackedQP, x, z, s) -> Optional[QPResult]:
    """Re-solve the KKT system with the identified active set held as equalities."""
    n, p = qp.P.shape[0], qp.A_eq.shape[0]
    active = z > s
    Ga = qp.G[active]
    a = Ga.shape[0]
    K = np.zeros((n + p + a, n + p + a))
    K[:n, :n] = qp.P
    K[:n, n:n + p] = qp.A_eq.T
    K[:n, n + p:] = Ga.T
    K[n:n + p, :n] = qp.A_eq
    K[n + p:, :n] = Ga
    factors = factorize(K)
    if factors is None:
        return None
    sol = solve_factored(factors, np.concatenate([-qp.c, qp.b_eq, qp.h[active]]))
    xp, yp = sol[:n], sol[n:n + p]
    zp = np.zeros(qp.G.shape[0])
    zp[active] = sol[n + p:]
    slack = qp.h - qp.G @ xp
    if np.any(zp < 0.0) or np.any(slack[~active] <= 0.0):
        return None
    return QPResult(xp, yp, zp, _kkt_residual(qp, xp, yp, zp), True, 0, True)


def solve_qp(qp: StackedQP, tol: float = SOLVER_TOL, max_iter: int = SOLVER_MAX_ITER,
             reg: float = SOLVER_REG) -> QPResult:
    P, c, A, b, G, h = qp.P, qp.c, qp.A_eq, qp.b_eq, qp.G, qp.h
    n, p, m = P.shape[0], A.shape[0], G.shape[0]
    x, y = np.zeros(n), np.zeros(p)
    s = np.maximum(h - G @ x, 1.0)
    z = np.ones(m)
    best = None

    for it in range(max_iter + 1):
        rd = P @ x + c + A.T @ y + G.T @ z
        rp = A @ x - b
        ri = G @ x + s - h
        mu = float(s @ z) / m if m else 0.0
        res = max(_inf_norm(rd), _inf_norm(rp), _inf_norm(ri), _inf_norm(s * z))
        logger.debug("ipm iter %d: residual %.3e mu %.3e", it, res, mu)
        if best is None or res < best.residual:
            best = QPResult(x.copy(), y.copy(), z.copy(), res, False, it, False)
        if res <= POLISH_START:
            polished = _polish(qp, x, z, s)
            if polished is not None and polished.residual <= tol:
                polished.iterations = it
                return polished
        if res <= tol:
            best.converged = True
            best.residual = _kkt_residual(qp, x, y, z)
            return best
        if it == max_iter:
            break

        W = z / s if m else np.zeros(0)
        factor = None
        delta = reg
        for _ in range(REG_RETRIES + 1):
            K = np.zeros((n + p, n + p))
            K[:n, :n] = P + G.T @ (W[:, None] * G) + delta * np.eye(n)
            K[:n, n:] = A.T
            K[n:, :n] = A
            K[n:, n:] = -delta * np.eye(p)
            try:
                factor = _LdlFactor(K)
                break
            except (np.linalg.LinAlgError, ValueError):
                delta *= 100.0
        if factor is None:
            raise NumericalFailureError(f"Newton system singular after regularization retries (iteration {it})")

        def newton(rc):
            rhs = np.concatenate([-rd - G.T @ ((z * ri - rc) / s), -rp]) if m else np.concatenate([-rd, -rp])
            try:
                sol = factor.solve(rhs)
            except np.linalg.LinAlgError as exc:
                raise NumericalFailureError(f"Newton solve failed at iteration {it}: {exc}") from exc
            dx, dy = sol[:n], sol[n:]
            if not m:
                return dx, dy, np.zeros(0), np.zeros(0)
            dz = (z * ri - rc) / s + W * (G @ dx)
            ds = -ri - G @ dx
            return dx, dy, dz, ds

        if m:
            dx, dy, dz, ds = newton(s * z)
            alpha_aff = min(1.0, _max_step(s, ds), _max_step(z, dz))
            mu_aff = float((s + alpha_aff * ds) @ (z + alpha_aff * dz)) / m
            sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0
            dx, dy, dz, ds = newton(s * z + ds * dz - sigma * mu)
            alpha = min(1.0, STEP_FRACTION * min(_max_step(s, ds), _max_step(z, dz)))
        else:
            dx, dy, dz, ds = newton(np.zeros(0))
            alpha = 1.0
        x = x + alpha * dx
        y = y + alpha * dy
        if m:
            z = z + alpha * dz
            s = s + alpha * ds

    logger.warning("interior-point method stopped after %d iterations at residual %.3e",
                   max_iter, best.residual)
    best.residual = _kkt_residual(qp, best.x, best.y, best.z)
    return best


# ---------------------------------------------------------------------------
# Problem-level entry points
# ---------------------------------------------------------------------------

def _unstack(problem: Problem, qp: StackedQP, result: QPResult) -> Solution:
    xs = [result.x[s].copy() for s in qp.x_slices]
    mu = [result.y[s].copy() for s in qp.eq_local]
    lam_local = [result.z[s].copy() for s in qp.ineq_local]
    local_slack = [sp.b - sp.A @ x for sp, x in zip(problem.subproblems, xs)]
    F = np.hstack(problem.coupling.F_blocks).reshape(problem.n_ineq, result.x.size)
    coupling_slack = problem.coupling.f - F @ result.x
    return Solution(
        x=xs,
        lambda_local=lam_local,
        mu_local=mu,
        nu=result.y[qp.eq_coupling].copy(),
        lam=result.z[qp.ineq_coupling].copy(),
        kkt_residual=result.residual,
        local_slack=local_slack,
        coupling_slack=coupling_slack,
        converged=result.converged,
        iterations=result.iterations,
        polished=result.polished,
    )


def solve(problem: Problem, tol: float = SOLVER_TOL, max_iter: int = SOLVER_MAX_ITER) -> Solution:
    """Solve the global QP; the returned duals satisfy complementarity to tol."""
    qp = problem.stacked_qp()
    result = solve_qp(qp, tol=tol, max_iter=max_iter)
    if not result.converged:
        logger.warning("solve did not reach tolerance %.1e (residual %.3e)", tol, result.residual)
    return _unstack(problem, qp, result)


def solve_local(problem: Problem, i: int, nu, lam, tol: float = SOLVER_TOL,
                max_iter: int = SOLVER_MAX_ITER):
    """
    Solve subproblem i alone with the coupling constraints dualized at (ν, λ).

    Returns (x_i, λ_i, μ_i, converged).
    """
    sp = problem.subproblems[i]
    H, F = problem.coupling.H_blocks[i], problem.coupling.F_blocks[i]
    c = sp.c + H.T @ np.asarray(nu, dtype=float) + F.T @ np.asarray(lam, dtype=float)
    qp = StackedQP(P=sp.P, c=c, A_eq=sp.E, b_eq=sp.e, G=sp.A, h=sp.b, x_slices=(slice(0, sp.n),))
    result = solve_qp(qp, tol=tol, max_iter=max_iter)
    return result.x, result.z, result.y, result.converged


def lagrangian_value(problem: Problem, solution: Solution) -> float:
    value = problem.objective(solution.x)
    for sp, x, lam, mu in zip(problem.subproblems, solution.x, solution.lambda_local, solution.mu_local):
        value += lam @ (sp.A @ x - sp.b) + mu @ (sp.E @ x - sp.e)
    if problem.n_coupling:
        x = solution.x_stacked
        H = np.hstack(problem.coupling.H_blocks).reshape(problem.n_eq, x.size)
        F = np.hstack(problem.coupling.F_blocks).reshape(problem.n_ineq, x.size)
        value += solution.nu @ (H @ x - problem.coupling.d) + solution.lam @ (F @ x - problem.coupling.f)
    return float(value)


# ---------------------------------------------------------------------------
# Assumption checks
# ---------------------------------------------------------------------------

def active_set(solution: Solution, tol_act: float = TOL_ACT) -> ActiveSet:
    """Inequality j is active iff its slack is at most tol_act (ties count as active)."""
    return ActiveSet(
        local=[np.asarray(s) <= tol_act for s in solution.local_slack],
        coupling=np.asarray(solution.coupling_slack) <= tol_act,
    )


def _null_space(J: np.ndarray, n: int, rtol: float = 1e-12) -> np.ndarray:
    if J.shape[0] == 0:
        return np.eye(n)
    Q, R, _ = qr(J.T, mode="full", pivoting=True)
    diag = np.abs(np.diag(R))
    rank = int(np.sum(diag > rtol * max(diag.max(initial=0.0), 1.0)))
    return Q[:, rank:]


def _reduced_min_eig(hessian: np.ndarray, J: np.ndarray) -> float:
    Z = _null_space(J, hessian.shape[0])
    if Z.shape[1] == 0:
        return float("inf")
    return float(np.linalg.eigvalsh(Z.T @ hessian @ Z).min())


def _min_singular(J: np.ndarray) -> float:
    if J.shape[0] == 0:
        return float("inf")
    if J.shape[0] > J.shape[1]:
        return 0.0
    return float(np.linalg.svd(J, compute_uv=False).min())


def verify_assumptions(problem: Problem, solution: Solution, tol_act: float = TOL_ACT,
                       tol_sc: float = TOL_SC, second_order_tol: float = SECOND_ORDER_TOL,
                       licq_tol: float = LICQ_TOL) -> AssumptionReport:
    """
    Check LICQ, strict complementarity, global second-order conditions and the
    second-order conditions of every partial-Lagrangian subproblem.
    """
    acts = active_set(solution, tol_act)
    qp = problem.stacked_qp()
    n_total = qp.P.shape[0]

    G_act = np.vstack([qp.G[qp.ineq_local[i]][acts.local[i]] for i in range(problem.N)]
                      + [qp.G[qp.ineq_coupling][acts.coupling]]).reshape(-1, n_total)
    J_global = np.vstack([qp.A_eq, G_act])
    licq = _min_singular(J_global)

    duals = np.concatenate([lam[a] for lam, a in zip(solution.lambda_local, acts.local)]
                           + [solution.lam[acts.coupling]])
    slacks = np.concatenate([s[~a] for s, a in zip(solution.local_slack, acts.local)]
                            + [solution.coupling_slack[~acts.coupling]])
    min_dual = float(duals.min()) if duals.size else float("inf")
    min_slack = float(slacks.min()) if slacks.size else float("inf")

    global_eig = _reduced_min_eig(qp.P, J_global)

    local_eigs, local_ok = [], []
    for sp, a in zip(problem.subproblems, acts.local):
        J_local = np.vstack([sp.E, sp.A[a]]).reshape(-1, sp.n)
        eig = _reduced_min_eig(sp.P, J_local)
        local_eigs.append(eig)
        local_ok.append(bool(eig >= second_order_tol))

    report = AssumptionReport(
        licq_ok=bool(licq >= licq_tol),
        licq_min_singular=licq,
        strict_complementarity_ok=bool(min_dual > tol_sc),
        min_active_dual=min_dual,
        min_inactive_slack=min_slack,
        second_order_global_ok=bool(global_eig >= second_order_tol),
        second_order_global_min_eig=global_eig,
        second_order_local_ok=all(local_ok),
        second_order_local_min_eig=local_eigs,
        local_ok=local_ok,
        active_sets=acts,
    )
    if not report.all_ok:
        logger.info("assumption check failed: %s", ", ".join(report.failures()))
    return report


def require_assumptions(problem: Problem, solution: Solution, **tolerances) -> AssumptionReport:
    """verify_assumptions, raising AssumptionViolationError when any check fails."""
    report = verify_assumptions(problem, solution, **tolerances)
    if not report.all_ok:
        raise AssumptionViolationError(
            "differentiability assumptions fail: " + ", ".join(report.failures()), report)
    return report
