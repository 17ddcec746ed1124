"""
Distributed block-Jacobi solution of the coupling system on a simulated
synchronous message-passing network.

Every subproblem k is a node. At setup it gathers the local terms of P_k^ω,
factorizes ∂C_k^ω once and keeps

    S_k = −T_k (∂C_k^ω)⁻¹ ∂C_{-k}^ω      U_kq = T_k (∂C_k^ω)⁻¹ q_k^ω

where T_k picks the owned rows V_k^0 out of V_k^ω. A round is

    1. local solve   ŷ_k ← S_k ŷ[exterior_k] + U_kq
    2. exchange      owned estimates go to every two-hop neighbor; each
                     constraint is averaged over its δ_j owners
    3. broadcast     averaged rows are flooded so every node holds ŷ

which globally is ŷ ← Γ(S ŷ + Uq). Nodes never share state; everything that
crosses a node boundary travels in an Envelope and is counted.
"""
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np
from scipy import stats

from src.config import DIST_TOL
from src.coupling import TotalJacobian, assemble_local_terms, embedded_theta_jacobian, row_owners
from src.errors import InvalidDimensionsError, SingularLocalProjectionError
from src.graph import (
    BipartiteGraph, ProjectionSet, build_graph, constraint_partition, extreme_singular_values,
    graph_induced_bandwidth, neighborhood,
)
from src.linalg import factorize, pivot_ratio, solve_factored
from src.localdiff import compute_local_jacobians
from src.model import Problem
from src.solver import Solution

logger = logging.getLogger(__name__)

BROADCAST = -1


@dataclass
class Envelope:
    """A message; only `payload` values count as transmitted scalars, `index` is addressing."""
    sender: int
    receiver: int
    phase: str
    round: int
    payload: Dict[str, np.ndarray]
    index: Dict[str, List[int]] = field(default_factory=dict)

    @property
    def scalars(self) -> int:
        return int(sum(np.asarray(v).size for v in self.payload.values()))


class Mailbox:
    """Per-node inbox; the scheduler delivers, nodes drain."""

    def __init__(self):
        self._queue: List[Envelope] = []

    def put(self, envelope: Envelope):
        self._queue.append(envelope)

    def drain(self) -> List[Envelope]:
        out, self._queue = self._queue, []
        return out


@dataclass(eq=False)
class NodeState:
    node: int
    projection: ProjectionSet
    factors: tuple
    dC_k: np.ndarray
    dC_out: np.ndarray
    q_k: np.ndarray
    S: np.ndarray
    Uq: np.ndarray
    estimate: np.ndarray
    y: np.ndarray

    @property
    def owned(self) -> List[int]:
        return self.projection.interior

    def local_solve(self) -> np.ndarray:
        """ŷ_k = S_k ŷ[exterior] + U_k q from the node's own copy of ŷ."""
        ext = self.projection.exterior
        self.estimate = self.Uq + (self.S @ self.y[ext] if ext else 0.0)
        return self.estimate


@dataclass
class RoundLog:
    iteration: int
    solve_seconds: List[float]
    messages: int
    scalars: int
    change_inf: float
    aggregation_residual: float
    err_inf: Optional[float] = None


@dataclass
class RateBound:
    sigma_max: List[float]
    sigma_min: List[float]
    R: List[float]
    bandwidth: List[float]
    omega: int
    alpha: float
    exponent: str = "final"

    def bound(self, t: int, initial_error: float) -> float:
        return float(np.power(self.alpha, t)) * initial_error


@dataclass
class RunResult:
    y: np.ndarray
    history: List[RoundLog]
    initial_error: Optional[float]
    converged: bool
    rounds: int

    @property
    def errors(self) -> List[float]:
        return [log.err_inf for log in self.history]


@dataclass
class MessageCounts:
    setup_messages: List[int]
    setup_scalars: List[int]
    round_messages: int
    round_exchange_scalars: int
    round_broadcast_scalars: int

    @property
    def round_scalars(self) -> int:
        return self.round_exchange_scalars + self.round_broadcast_scalars


class Network:
    """Synchronous scheduler over the node states."""

    def __init__(self, problem: Problem, graph: BipartiteGraph, nodes: List[NodeState], omega: int,
                 setup_log: List[Envelope], threads: Optional[int] = None):
        self.problem = problem
        self.graph = graph
        self.nodes = nodes
        self.omega = omega
        self.setup_log = setup_log
        self.threads = threads
        self.iteration = 0
        self.owners = row_owners(problem)
        self.mailboxes = {node.node: Mailbox() for node in nodes}

    @property
    def t(self) -> int:
        return self.problem.params.total

    @property
    def y(self) -> np.ndarray:
        """ŷ as held by the designated owner of each row."""
        out = np.zeros((self.problem.n_coupling, self.t))
        for j, k in enumerate(self.owners):
            out[j] = self.nodes[k].y[j]
        return out

    def _map(self, fn: Callable, items):
        if self.threads and self.threads > 1:
            with ThreadPoolExecutor(max_workers=self.threads) as pool:
                return list(pool.map(fn, items))
        return [fn(item) for item in items]

    def round(self) -> RoundLog:
        self.iteration += 1
        it = self.iteration
        previous = self.y

        def solve(node: NodeState) -> float:
            start = time.perf_counter()
            node.local_solve()
            return time.perf_counter() - start

        seconds = self._map(solve, self.nodes)

        messages = scalars = 0
        for node in self.nodes:
            for other in self.graph.two_hop_neighbors(node.node):
                envelope = Envelope(node.node, other, "exchange", it, {"estimate": node.estimate.copy()},
                                    {"rows": list(node.owned)})
                self.mailboxes[other].put(envelope)
                messages += 1
                scalars += envelope.scalars

        disagreement = 0.0
        published = {}
        for node in self.nodes:
            received = {node.node: (node.owned, node.estimate)}
            for envelope in self.mailboxes[node.node].drain():
                received[envelope.sender] = (envelope.index["rows"], envelope.payload["estimate"])
            for j in node.owned:
                estimates = []
                for sender in sorted(received):
                    rows, values = received[sender]
                    if j in rows:
                        estimates.append(values[rows.index(j)])
                average = np.sum(estimates, axis=0) / self.graph.degree(j)
                if average.size:
                    disagreement = max(disagreement, float(np.abs(np.asarray(estimates) - average).max()))
                if self.owners[j] == node.node:
                    published[j] = average

        flood = np.zeros((self.problem.n_coupling, self.t))
        for j, values in published.items():
            flood[j] = values
        for node in self.nodes:
            envelope = Envelope(BROADCAST, node.node, "broadcast", it, {"y": flood.copy()})
            self.mailboxes[node.node].put(envelope)
            messages += 1
            scalars += envelope.scalars
        for node in self.nodes:
            for envelope in self.mailboxes[node.node].drain():
                node.y = envelope.payload["y"]

        change = float(np.abs(self.y - previous).max()) if previous.size else 0.0
        logger.debug("round %d: change %.3e, %d messages", it, change, messages)
        return RoundLog(it, seconds, messages, scalars, change, disagreement)


def initial_estimate(n_coupling: int, t: int, seed: int) -> np.ndarray:
    """ŷ⁽⁰⁾ ~ standard normal, drawn once and shared by all nodes."""
    return np.random.default_rng(seed).standard_normal((n_coupling, t))


def setup(problem: Problem, solution: Solution, local_jacobians, omega: int, seed: int = 0,
          exterior: str = "omega", threads: Optional[int] = None, y0: Optional[np.ndarray] = None) -> Network:
    """
    Gather (∂C_i, q_i) from P_k^ω at every node, factorize ∂C_k^ω and build S_k, U_kq.

    Raises SingularLocalProjectionError naming the node when a projection is
    singular.
    """
    if omega < 0:
        raise InvalidDimensionsError("omega must be nonnegative")
    graph = build_graph(problem)
    owners = row_owners(problem)
    terms = [assemble_local_terms(problem, i, lj, solution, owners) for i, lj in enumerate(local_jacobians)]
    projections = [neighborhood(graph, k, omega, exterior) for k in range(problem.N)]
    t = problem.params.total
    if y0 is None:
        y0 = initial_estimate(problem.n_coupling, t, seed)

    setup_log: List[Envelope] = []
    nodes = []
    for k, proj in enumerate(projections):
        inbox = [_gather_envelope(terms[i], proj, k) for i in proj.members]
        setup_log.extend(inbox)
        dC_k, dC_out, q_k = _assemble_inbox(proj, inbox, t)
        factors = factorize(dC_k)
        if factors is None:
            report = {"size": len(proj.projected), "pivot_ratio": pivot_ratio(dC_k), "members": proj.members}
            raise SingularLocalProjectionError(k, report)
        sel = proj.owned_positions
        S = -solve_factored(factors, dC_out)[sel]
        Uq = solve_factored(factors, q_k)[sel]
        nodes.append(NodeState(k, proj, factors, dC_k, dC_out, q_k, S, Uq,
                               estimate=np.zeros((len(proj.interior), t)), y=np.array(y0, dtype=float)))
        logger.debug("node %d: |V0|=%d |V|=%d |P|=%d received %d setup messages",
                     k, len(proj.interior), len(proj.projected), len(proj.members), len(inbox))
    return Network(problem, graph, nodes, omega, setup_log, threads)


def _gather_envelope(term, proj: ProjectionSet, k: int) -> Envelope:
    """What subproblem i sends to node k: its block on V_k^ω, rhs rows and columns outside V_k^ω."""
    size = len(proj.projected)
    lookup = {j: p for p, j in enumerate(proj.projected)}
    local = [a for a, j in enumerate(term.rows) if int(j) in lookup]
    target = [lookup[int(term.rows[a])] for a in local]
    block = np.zeros((size, size))
    block[np.ix_(target, target)] = term.dC[np.ix_(local, local)]
    rhs = np.zeros((size, term.q.shape[1]))
    rhs[target] = term.q[local]
    outside = [a for a, j in enumerate(term.rows) if int(j) not in lookup]
    exterior = np.zeros((size, len(outside)))
    exterior[np.ix_(target, range(len(outside)))] = term.dC[np.ix_(local, outside)]
    return Envelope(term.subproblem, k, "setup", 0, {"dC": block, "q": rhs, "exterior": exterior},
                    {"exterior": [int(term.rows[a]) for a in outside]})


def _assemble_inbox(proj: ProjectionSet, inbox: List[Envelope], t: int):
    """(∂C_k^ω, ∂C_{-k}^ω, q_k^ω) from the setup envelopes alone."""
    size = len(proj.projected)
    dC_k = np.zeros((size, size))
    q_k = np.zeros((size, t))
    outside: Dict[int, np.ndarray] = {}
    for envelope in inbox:
        dC_k += envelope.payload["dC"]
        q_k += envelope.payload["q"]
        for c, j in enumerate(envelope.index["exterior"]):
            outside[j] = outside.get(j, 0.0) + envelope.payload["exterior"][:, c]
    lookup = {j: p for p, j in enumerate(proj.projected)}
    dC_out = np.zeros((size, len(proj.exterior)))
    for p, j in enumerate(proj.exterior):
        if j in outside:
            dC_out[:, p] = outside[j]
        elif j in lookup:
            dC_out[:, p] = dC_k[:, lookup[j]]
    return dC_k, dC_out, q_k


def run(network: Network, tol: float = DIST_TOL, max_rounds: int = 100,
        reference: Optional[np.ndarray] = None) -> RunResult:
    """Iterate rounds until the successive change is at most tol or max_rounds is hit."""
    def error():
        if reference is None:
            return None
        return float(np.abs(network.y - reference).max()) if reference.size else 0.0

    initial = error()
    history: List[RoundLog] = []
    converged = False
    for _ in range(max_rounds):
        log = network.round()
        log.err_inf = error()
        history.append(log)
        if log.change_inf <= tol:
            converged = True
            break
    if max_rounds > 0 and not converged:
        logger.warning("distributed iteration did not reach tol %.1e in %d rounds (last change %.3e)",
                       tol, max_rounds, history[-1].change_inf)
    return RunResult(network.y, history, initial, converged, len(history))


# ---------------------------------------------------------------------------
# Rate bound
# ---------------------------------------------------------------------------

def final_exponent(omega: int, bandwidth: float) -> int:
    return max(0, math.ceil(omega / (2 * bandwidth) - 1))


def draft_exponent(omega: int, bandwidth: float) -> int:
    return max(0, math.ceil((omega + 1) / bandwidth - 1))


EXPONENTS = {"final": final_exponent, "draft": draft_exponent}


def rate_bound(network: Network, exponent: str = "final") -> RateBound:
    """α = max_k R_k σ̄_k/σ̲_k² · ((σ̄_k² − σ̲_k²)/(σ̄_k² + σ̲_k²))^e(ω, B_k)."""
    if exponent not in EXPONENTS:
        raise InvalidDimensionsError(f"unknown exponent '{exponent}'")
    power = EXPONENTS[exponent]
    sig_max, sig_min, R, bands = [], [], [], []
    alpha = 0.0
    for node in network.nodes:
        if node.dC_k.shape[0] == 0:
            sig_max.append(0.0)
            sig_min.append(0.0)
            R.append(0.0)
            bands.append(0.0)
            continue
        s_max, s_min = extreme_singular_values(node.dC_k)
        partition = constraint_partition(node.projection.projected)
        B = graph_induced_bandwidth(node.dC_k, network.graph, partition, partition)
        r = float(np.abs(node.dC_out).sum())
        sig_max.append(s_max)
        sig_min.append(s_min)
        R.append(r)
        bands.append(B)
        if r == 0.0:
            continue
        base = (s_max ** 2 - s_min ** 2) / (s_max ** 2 + s_min ** 2)
        alpha = max(alpha, r * s_max / s_min ** 2 * base ** power(network.omega, max(B, 1)))
    return RateBound(sig_max, sig_min, R, bands, network.omega, alpha, exponent)


# ---------------------------------------------------------------------------
# Accounting, matrix form, total Jacobians
# ---------------------------------------------------------------------------

def message_accounting(network: Network) -> MessageCounts:
    """Message counts implied by the protocol for the network's ω."""
    t = network.t
    graph = network.graph
    setup_messages, setup_scalars = [], []
    for node in network.nodes:
        proj = node.projection
        size = len(proj.projected)
        total = 0
        for i in proj.members:
            outside = [j for j in graph.constraints_of(i) if j not in set(proj.projected)]
            total += size * size + size * t + size * len(outside)
        setup_messages.append(len(proj.members))
        setup_scalars.append(total)
    exchange_messages = sum(len(graph.two_hop_neighbors(node.node)) for node in network.nodes)
    exchange_scalars = sum(len(graph.two_hop_neighbors(node.node)) * len(node.owned) * t
                           for node in network.nodes)
    N = len(network.nodes)
    return MessageCounts(setup_messages, setup_scalars, exchange_messages + N,
                         exchange_scalars, N * network.problem.n_coupling * t)


def sync_matrices(network: Network):
    """
    (Γ, S, Uq) of the compact scheme ŷ ← Γ(S ŷ + Uq).

    Rows of S and Uq stack the nodes' owned rows in node order; Γ averages
    each constraint over its owners with weight 1/δ_j.
    """
    L = network.problem.n_coupling
    stacked = sum(len(node.owned) for node in network.nodes)
    Gamma = np.zeros((L, stacked))
    S = np.zeros((stacked, L))
    Uq = np.zeros((stacked, network.t))
    r = 0
    for node in network.nodes:
        for pos, j in enumerate(node.owned):
            Gamma[j, r + pos] = 1.0 / network.graph.degree(j)
        rows = slice(r, r + len(node.owned))
        if node.projection.exterior:
            S[rows, node.projection.exterior] = node.S
        Uq[rows] = node.Uq
        r += len(node.owned)
    return Gamma, S, Uq


def distributed_total_jacobian(network: Network, local_jacobians) -> TotalJacobian:
    """Each node applies the chain-rule update with its own copy of ŷ."""
    blocks = []
    for node, lj in zip(network.nodes, local_jacobians):
        block = embedded_theta_jacobian(network.problem, lj)
        if node.y.shape[0]:
            block = block + lj.d_coupling @ node.y
        blocks.append(block)
    return TotalJacobian(blocks)


def fitted_rate(errors: List[float], floor: float = 1e-13) -> Optional[float]:
    """Geometric rate from a log-linear fit of the errors above floor·errors[0]."""
    errors = [e for e in errors if e is not None]
    if len(errors) < 2 or errors[0] <= 0.0:
        return None
    kept = [(t, e) for t, e in enumerate(errors) if e > floor * errors[0]]
    if len(kept) < 2:
        return 0.0
    ts, es = zip(*kept)
    return float(np.exp(stats.linregress(ts, np.log(es)).slope))


@dataclass
class DistributedResult:
    network: Network
    result: RunResult
    rate: RateBound
    jacobian: TotalJacobian


def distributed_differentiate(problem: Problem, solution: Solution, omega: int, rounds: int = 100,
                              seed: int = 0, tol: float = DIST_TOL, exterior: str = "omega",
                              threads: Optional[int] = None, reference: Optional[np.ndarray] = None,
                              local_jacobians=None) -> DistributedResult:
    """Setup, rate bound, run and per-node chain rule in one call."""
    if local_jacobians is None:
        local_jacobians = compute_local_jacobians(problem, solution)
    network = setup(problem, solution, local_jacobians, omega, seed=seed, exterior=exterior, threads=threads)
    rate = rate_bound(network)
    result = run(network, tol=tol, max_rounds=rounds, reference=reference)
    return DistributedResult(network, result, rate, distributed_total_jacobian(network, local_jacobians))
