"""
Bipartite constraint graph and the locality constructions built on it.

Nodes are ("p", i) for subproblem i and ("c", j) for coupling row j; an edge
joins them when subproblem i has a nonzero block in row j. Constraint
neighborhoods, projections of the coupling system, graph-induced bandwidths
and the decay bound for inverses of graph-structured matrices all use BFS
distances on this graph.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import networkx as nx
import numpy as np

from src.config import ZERO_TOL
from src.errors import InvalidDimensionsError, InvalidSingularValuesError
from src.model import Problem
from src.solver import Solution

logger = logging.getLogger(__name__)

EXTERIOR_MODES = ("omega", "own")


def p_node(i: int) -> Tuple[str, int]:
    return ("p", int(i))


def c_node(j: int) -> Tuple[str, int]:
    return ("c", int(j))


class BipartiteGraph:
    """Subproblem/constraint incidence graph with cached BFS distances."""

    def __init__(self, n_subproblems: int, n_constraints: int, edges: Sequence[Tuple[int, int]]):
        self.n_subproblems = n_subproblems
        self.n_constraints = n_constraints
        self.graph = nx.Graph()
        self.graph.add_nodes_from(p_node(i) for i in range(n_subproblems))
        self.graph.add_nodes_from(c_node(j) for j in range(n_constraints))
        self.graph.add_edges_from((p_node(i), c_node(j)) for i, j in edges)
        self._distances: Dict[Tuple[str, int], Dict[Tuple[str, int], int]] = {}

    @property
    def problem_nodes(self) -> List[Tuple[str, int]]:
        return [p_node(i) for i in range(self.n_subproblems)]

    @property
    def constraint_nodes(self) -> List[Tuple[str, int]]:
        return [c_node(j) for j in range(self.n_constraints)]

    def constraints_of(self, i: int) -> List[int]:
        return sorted(j for _, j in self.graph.neighbors(p_node(i)))

    def subproblems_of(self, j: int) -> List[int]:
        return sorted(i for _, i in self.graph.neighbors(c_node(j)))

    def degree(self, j: int) -> int:
        """δ_j, the number of subproblems sharing constraint j."""
        return self.graph.degree(c_node(j))

    def distances_from(self, node) -> Dict[Tuple[str, int], int]:
        if node not in self._distances:
            self._distances[node] = nx.single_source_shortest_path_length(self.graph, node)
        return self._distances[node]

    def distance(self, a, b) -> float:
        return self.distances_from(a).get(b, math.inf)

    def two_hop_neighbors(self, i: int) -> List[int]:
        """Other subproblems sharing at least one constraint with subproblem i."""
        out = set()
        for j in self.constraints_of(i):
            out.update(self.subproblems_of(j))
        out.discard(i)
        return sorted(out)

    def adjacency(self) -> Dict[int, List[int]]:
        return {i: self.constraints_of(i) for i in range(self.n_subproblems)}


def build_graph(problem: Problem, zero_tol: float = ZERO_TOL) -> BipartiteGraph:
    pattern = problem.coupling.pattern(zero_tol)
    rows, cols = np.nonzero(pattern)
    return BipartiteGraph(problem.N, problem.n_coupling, list(zip(cols.tolist(), rows.tolist())))


@dataclass
class ProjectionSet:
    """Index sets for node k at radius ω; all constraint lists are sorted."""
    node: int
    omega: int
    interior: List[int]
    projected: List[int]
    members: List[int]
    exterior: List[int]
    exterior_mode: str = "omega"

    @property
    def owned_positions(self) -> np.ndarray:
        """Positions of V_k^0 inside V_k^ω."""
        lookup = {j: p for p, j in enumerate(self.projected)}
        return np.array([lookup[j] for j in self.interior], dtype=int)


def neighborhood(graph: BipartiteGraph, k: int, omega: int, exterior: str = "omega") -> ProjectionSet:
    """
    V_k^0, V_k^ω = {c : d(c, k) ≤ 2ω+1}, P_k^ω (subproblems adjacent to V_k^ω)
    and the exterior column selection.

    exterior="omega" selects V_c \\ V_k^ω; exterior="own" selects V_c \\ V_k^0.
    """
    if omega < 0:
        raise InvalidDimensionsError("omega must be nonnegative")
    if not 0 <= k < graph.n_subproblems:
        raise InvalidDimensionsError(f"node {k} is not a subproblem")
    if exterior not in EXTERIOR_MODES:
        raise InvalidDimensionsError(f"unknown exterior selection '{exterior}'")
    dist = graph.distances_from(p_node(k))
    radius = 2 * omega + 1
    projected = sorted(j for kind, j in dist if kind == "c" and dist[(kind, j)] <= radius)
    interior = graph.constraints_of(k)
    members = sorted({i for j in projected for i in graph.subproblems_of(j)})
    keep = set(projected) if exterior == "omega" else set(interior)
    outside = [j for j in range(graph.n_constraints) if j not in keep]
    return ProjectionSet(k, omega, interior, projected, members, outside, exterior)


def _positions(rows: np.ndarray, selection: Sequence[int]):
    """(local, target): entries of rows that fall in selection and where they land."""
    lookup = {int(j): p for p, j in enumerate(selection)}
    local = [a for a, j in enumerate(rows) if int(j) in lookup]
    target = [lookup[int(rows[a])] for a in local]
    return np.array(local, dtype=int), np.array(target, dtype=int)


def project_system(local_terms, proj: ProjectionSet):
    """
    (∂C_k^ω, ∂C_{-k}^ω, q_k^ω) summed from the local terms of P_k^ω only.

    ∂C_k^ω is |V_k^ω| × |V_k^ω|, ∂C_{-k}^ω is |V_k^ω| × |exterior| and q_k^ω is
    |V_k^ω| × t. Every contribution to a row of V_k^ω comes from a subproblem
    touching that row, so the sums are exact slices of the global system.
    """
    t = local_terms[0].q.shape[1] if local_terms else 0
    size, outside = len(proj.projected), len(proj.exterior)
    dC_k = np.zeros((size, size))
    dC_out = np.zeros((size, outside))
    q_k = np.zeros((size, t))
    for i in proj.members:
        term = local_terms[i]
        lr, tr = _positions(term.rows, proj.projected)
        if lr.size == 0:
            continue
        dC_k[np.ix_(tr, tr)] += term.dC[np.ix_(lr, lr)]
        q_k[tr] += term.q[lr]
        lc, tc = _positions(term.rows, proj.exterior)
        if lc.size:
            dC_out[np.ix_(tr, tc)] += term.dC[np.ix_(lr, lc)]
    return dC_k, dC_out, q_k


def decompose_dC(problem: Problem, local_jacobians, solution: Solution) -> np.ndarray:
    """∂C = [I 0; 0 diag(λ)] M_C Ḡ M_Cᵀ − [0 0; 0 diag(Fx − f)], Ḡ = blkdiag of primal inverse blocks."""
    size = problem.n_coupling
    if size == 0:
        return np.zeros((0, 0))
    M = problem.coupling_matrix()
    offsets = np.cumsum([0] + problem.sizes)
    MG = np.zeros_like(M)
    for i, lj in enumerate(local_jacobians):
        cols = slice(offsets[i], offsets[i + 1])
        MG[:, cols] = M[:, cols] @ lj.primal_block_inv
    scale = np.concatenate([np.ones(problem.n_eq), solution.lam])
    dC = scale[:, None] * (MG @ M.T)
    if problem.n_ineq:
        F = M[problem.n_eq:]
        residual = F @ solution.x_stacked - problem.coupling.f
        dC[problem.n_eq:, problem.n_eq:] -= np.diag(residual)
    return dC


# ---------------------------------------------------------------------------
# Bandwidth and decay
# ---------------------------------------------------------------------------

def constraint_partition(constraints: Sequence[int]) -> List[Tuple[Tuple[str, int], np.ndarray]]:
    """One row (or column) block per constraint node, in the given order."""
    return [(c_node(j), np.array([p])) for p, j in enumerate(constraints)]


def subproblem_partition(problem: Problem) -> List[Tuple[Tuple[str, int], np.ndarray]]:
    return [(p_node(i), np.arange(s.start, s.stop)) for i, s in enumerate(problem.x_slices)]


def graph_induced_bandwidth(matrix, graph: BipartiteGraph, row_partition, col_partition,
                            zero_tol: float = ZERO_TOL) -> float:
    """
    Smallest B such that every block at graph distance greater than B is zero.

    0 for a matrix without nonzero blocks; inf when a nonzero block links
    disconnected nodes.
    """
    matrix = np.asarray(matrix, dtype=float)
    B = 0
    for row_node, rows in row_partition:
        for col_node, cols in col_partition:
            if rows.size == 0 or cols.size == 0:
                continue
            if np.abs(matrix[np.ix_(rows, cols)]).max() > zero_tol:
                B = max(B, graph.distance(row_node, col_node))
    return B


def block_norm_profile(matrix, graph: BipartiteGraph, partition) -> List[Tuple[float, float]]:
    """(distance, spectral norm) for every block pair of a square matrix."""
    matrix = np.asarray(matrix, dtype=float)
    out = []
    for row_node, rows in partition:
        for col_node, cols in partition:
            block = matrix[np.ix_(rows, cols)]
            out.append((graph.distance(row_node, col_node), float(np.linalg.norm(block, 2))))
    return out


def decay_bound(sigma_max: float, sigma_min: float, bandwidth: float, distance: float) -> float:
    """
    Bound on the block norm of a graph-structured matrix inverse at distance d:
    (σ̄/σ̲²)·((σ̄² − σ̲²)/(σ̄² + σ̲²))^⌈(d − B)/(2B)⌉₊.
    """
    if not (sigma_min > 0.0 and sigma_max >= sigma_min):
        raise InvalidSingularValuesError(
            f"singular values must satisfy sigma_max >= sigma_min > 0, got {sigma_max}, {sigma_min}")
    if bandwidth < 1 or distance < 0:
        raise InvalidDimensionsError("decay bound needs bandwidth >= 1 and distance >= 0")
    if math.isinf(distance):
        return 0.0
    exponent = max(0, math.ceil((distance - bandwidth) / (2 * bandwidth)))
    base = (sigma_max ** 2 - sigma_min ** 2) / (sigma_max ** 2 + sigma_min ** 2)
    return sigma_max / sigma_min ** 2 * base ** exponent


def extreme_singular_values(matrix) -> Tuple[float, float]:
    values = np.linalg.svd(np.asarray(matrix, dtype=float), compute_uv=False)
    return float(values.max()), float(values.min())


@dataclass
class GraphSummary:
    adjacency: Dict[int, List[int]]
    omega: int
    projected_sizes: List[int]
    member_sizes: List[int]
    bandwidth_mc: float
    bandwidth_dc_structural: float
    degrees: List[int] = field(default_factory=list)


def summarize(problem: Problem, omega: int, exterior: str = "omega") -> GraphSummary:
    """Adjacency, per-node |V_k^ω| and |P_k^ω|, and the coupling bandwidths."""
    graph = build_graph(problem)
    projections = [neighborhood(graph, k, omega, exterior) for k in range(problem.N)]
    rows = constraint_partition(range(problem.n_coupling))
    bw_mc = graph_induced_bandwidth(problem.coupling_matrix(), graph, rows, subproblem_partition(problem))
    pattern = problem.coupling.pattern().astype(float)
    bw_dc = graph_induced_bandwidth(pattern @ pattern.T, graph, rows, rows)
    logger.debug("graph: %d subproblems, %d constraints, B_MC=%s", problem.N, problem.n_coupling, bw_mc)
    return GraphSummary(
        adjacency=graph.adjacency(),
        omega=omega,
        projected_sizes=[len(p.projected) for p in projections],
        member_sizes=[len(p.members) for p in projections],
        bandwidth_mc=bw_mc,
        bandwidth_dc_structural=bw_dc,
        degrees=[graph.degree(j) for j in range(problem.n_coupling)],
    )
