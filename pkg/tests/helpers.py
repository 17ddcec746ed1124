"""Closed-form fixtures shared by the test modules."""
import numpy as np

from src.graph import BipartiteGraph
from src.model import CouplingConstraints, ParameterMap, Problem, Subproblem


def _scalar(index: int, P: float, c: float, A=None, b=None) -> Subproblem:
    A = np.zeros((0, 1)) if A is None else np.array([[A]], dtype=float)
    b = np.zeros(0) if b is None else np.array([b], dtype=float)
    return Subproblem(index, np.array([[P]]), np.array([c]), A, b, np.zeros((0, 1)), np.zeros(0))


def _problem(subproblems, H_blocks, d) -> Problem:
    coupling = CouplingConstraints(
        H_blocks=tuple(np.array(H, dtype=float) for H in H_blocks),
        d=np.array(d, dtype=float),
        F_blocks=tuple(np.zeros((0, sp.n)) for sp in subproblems),
        f=np.zeros(0),
    )
    return Problem(tuple(subproblems), coupling, ParameterMap.default(subproblems, coupling))


def consensus_problem(theta=(1.0, 3.0), d=2.0) -> Problem:
    """min Σ ½x_i² − θ_ix_i  s.t.  x_1 + x_2 = d; x* = θ − ν with ν = (θ_1 + θ_2 − d)/2."""
    subproblems = [_scalar(0, 1.0, -theta[0]), _scalar(1, 1.0, -theta[1])]
    return _problem(subproblems, [[[1.0]], [[1.0]]], [d])


# D_θx for θ = (θ_1, θ_2, d)
CONSENSUS_JACOBIAN = np.array([[0.5, -0.5, 0.5], [-0.5, 0.5, 0.5]])
CONSENSUS_Y = np.array([[0.5, 0.5, -0.5]])


def scalar_box_problem(theta: float) -> Problem:
    """min ½x² − θx  s.t.  x ≤ 1, a single subproblem with θ = (θ, b)."""
    sp = _scalar(0, 1.0, -theta, A=1.0, b=1.0)
    return _problem([sp], [np.zeros((0, 1))], [])


def counterexample_problem(theta=(1.0, 1.0)) -> Problem:
    """
    min ½x_1² − θ_1x_1 − θ_2x_2  s.t.  x_1 − x_2 = d.

    Globally well posed (x_1 = θ_1 + θ_2, x_2 = x_1 − d) but the second
    partial-Lagrangian subproblem has no curvature.
    """
    subproblems = [_scalar(0, 1.0, -theta[0]), _scalar(1, 0.0, -theta[1])]
    return _problem(subproblems, [[[1.0]], [[-1.0]]], [0.0])


def chain_incidence_problem(T: int) -> Problem:
    """Scalar chain where row t reads x_t − x_{t+1} = 0 and every P_t = 2."""
    subproblems = [_scalar(t, 2.0, float(t % 3) - 1.0) for t in range(T)]
    H = [np.zeros((T - 1, 1)) for _ in range(T)]
    for t in range(T - 1):
        H[t][t, 0] = 1.0
        H[t + 1][t, 0] = -1.0
    return _problem(subproblems, H, np.zeros(T - 1))


def slack_chain_problem(T: int, band: int = 1, seed=None) -> Problem:
    """
    Steps x_0..x_{T-1} plus one private slack z_r per coupling row r, which
    touches x_r..x_{r+band} and z_r.

    Without a seed, row r reads x_r − x_{r+band} + z_r = 0 with P = 1 for
    steps and P = 0.1 for slacks, so ∂C = 12·I minus a unit off-diagonal for
    band = 1. With a seed, step curvatures are drawn in [1, 2], slack
    curvatures in [0.05, 0.1] and row coefficients in [−0.3, 0.3]. Either way
    ∂C is strongly diagonally dominant and the distributed rate bound stays
    below one before the neighborhoods cover the chain.
    """
    rows = T - band
    rng = None if seed is None else np.random.default_rng(seed)
    step_P = np.ones(T) if rng is None else rng.uniform(1.0, 2.0, T)
    slack_P = np.full(rows, 0.1) if rng is None else rng.uniform(0.05, 0.1, rows)
    coef = np.zeros((rows, T))
    for r in range(rows):
        if rng is None:
            coef[r, r], coef[r, r + band] = 1.0, -1.0
        else:
            coef[r, r:r + band + 1] = rng.uniform(-0.3, 0.3, band + 1)

    subproblems, H = [], []
    for t in range(T):
        subproblems.append(_scalar(t, step_P[t], float(t % 3) - 1.0))
        H.append(coef[:, [t]])
    for r in range(rows):
        subproblems.append(_scalar(T + r, slack_P[r], 0.0))
        block = np.zeros((rows, 1))
        block[r, 0] = 1.0
        H.append(block)
    return _problem(subproblems, H, np.zeros(rows))


def branching_graph() -> BipartiteGraph:
    """Subproblem 1 touches constraint 5; subproblem 2 touches 5, 6 and 7."""
    edges = [(0, 3), (0, 4), (3, 4), (3, 7), (1, 5), (2, 5), (2, 6), (2, 7), (4, 6)]
    return BipartiteGraph(5, 8, edges)
