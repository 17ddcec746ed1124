"""
Separable constraint-coupled QP data model and problem generators.

Subproblem i:   min ½ x_iᵀP_ix_i + c_iᵀx_i   s.t.  A_ix_i ≤ b_i,  E_ix_i = e_i
Coupling:       Σ_i H_ix_i = d,   Σ_i F_ix_i ≤ f

Coupling rows are indexed 0..Λ-1 with the Λ_H equality rows first and the Λ_F
inequality rows after them, the same order as the coupling duals y = [ν; λ].
"""
import logging
import re
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from src.config import CURVATURE_EPS, FORMAT_VERSION, RESAMPLE_ATTEMPTS, ZERO_TOL
from src.errors import DegenerateProblemError, InvalidDimensionsError, LengthMismatchError

logger = logging.getLogger(__name__)


def _frozen(array, shape=None) -> np.ndarray:
    out = np.array(array, dtype=float)
    if shape is not None:
        out = out.reshape(shape)
    out.setflags(write=False)
    return out


def _frozen_index(array) -> np.ndarray:
    out = np.array(array, dtype=np.int64).reshape(-1)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class Subproblem:
    index: int
    P: np.ndarray
    c: np.ndarray
    A: np.ndarray
    b: np.ndarray
    E: np.ndarray
    e: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float).reshape(-1)
        n = c.size
        if n < 1:
            raise InvalidDimensionsError(f"subproblem {self.index} has no variables")
        b = np.asarray(self.b, dtype=float).reshape(-1)
        e = np.asarray(self.e, dtype=float).reshape(-1)
        object.__setattr__(self, "c", _frozen(c))
        object.__setattr__(self, "b", _frozen(b))
        object.__setattr__(self, "e", _frozen(e))
        try:
            object.__setattr__(self, "P", _frozen(self.P, (n, n)))
            object.__setattr__(self, "A", _frozen(self.A, (b.size, n)))
            object.__setattr__(self, "E", _frozen(self.E, (e.size, n)))
        except ValueError as exc:
            raise InvalidDimensionsError(f"subproblem {self.index}: {exc}") from exc
        if not np.allclose(self.P, self.P.T, rtol=0.0, atol=1e-12 * max(1.0, np.abs(self.P).max())):
            raise InvalidDimensionsError(f"subproblem {self.index}: P is not symmetric")

    @property
    def n(self) -> int:
        return self.c.size

    @property
    def l(self) -> int:
        return self.b.size

    @property
    def k(self) -> int:
        return self.e.size

    def min_curvature(self) -> float:
        return float(np.linalg.eigvalsh(self.P).min())


def _coupling_block(block, rows: int) -> np.ndarray:
    """Coupling block as a (rows × n_i) array; zero-row blocks must arrive two-dimensional."""
    arr = np.asarray(block, dtype=float)
    if arr.ndim == 2 and arr.shape[0] == rows:
        return _frozen(arr)
    if rows == 0 or arr.size % rows:
        raise InvalidDimensionsError(f"coupling block of shape {arr.shape} does not have {rows} rows")
    return _frozen(arr, (rows, arr.size // rows))


@dataclass(frozen=True, eq=False)
class CouplingConstraints:
    H_blocks: Tuple[np.ndarray, ...]
    d: np.ndarray
    F_blocks: Tuple[np.ndarray, ...]
    f: np.ndarray

    def __post_init__(self):
        d = _frozen(np.asarray(self.d, dtype=float).reshape(-1))
        f = _frozen(np.asarray(self.f, dtype=float).reshape(-1))
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "f", f)
        if len(self.H_blocks) != len(self.F_blocks):
            raise InvalidDimensionsError("H_blocks and F_blocks must have one block per subproblem")
        H = tuple(_coupling_block(block, d.size) for block in self.H_blocks)
        F = tuple(_coupling_block(block, f.size) for block in self.F_blocks)
        object.__setattr__(self, "H_blocks", H)
        object.__setattr__(self, "F_blocks", F)

    @property
    def n_eq(self) -> int:
        return self.d.size

    @property
    def n_ineq(self) -> int:
        return self.f.size

    @property
    def n_rows(self) -> int:
        return self.n_eq + self.n_ineq

    def block(self, i: int) -> np.ndarray:
        """Rows of [H_i; F_i], the coupling gradients of subproblem i."""
        return np.vstack([self.H_blocks[i], self.F_blocks[i]])

    def pattern(self, zero_tol: float = ZERO_TOL) -> np.ndarray:
        """Boolean Λ × N incidence: row j involves subproblem i."""
        out = np.zeros((self.n_rows, len(self.H_blocks)), dtype=bool)
        for i in range(len(self.H_blocks)):
            out[:, i] = np.any(np.abs(self.block(i)) > zero_tol, axis=1)
        return out

    def touching(self, j: int, zero_tol: float = ZERO_TOL) -> List[int]:
        """Subproblems with a nonzero block in coupling row j."""
        return np.flatnonzero(self.pattern(zero_tol)[j]).tolist()

    def rows_of(self, i: int, zero_tol: float = ZERO_TOL) -> np.ndarray:
        """Coupling rows in which subproblem i has a nonzero block."""
        return np.flatnonzero(np.any(np.abs(self.block(i)) > zero_tol, axis=1))


@dataclass(frozen=True, eq=False)
class LocalSelector:
    """Entries of (c_i, b_i, e_i) that are parameters; θ_i = [c-part, b-part, e-part]."""
    c: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    b: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    e: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __post_init__(self):
        for name in ("c", "b", "e"):
            object.__setattr__(self, name, _frozen_index(getattr(self, name)))

    @property
    def size(self) -> int:
        return self.c.size + self.b.size + self.e.size


@dataclass(frozen=True, eq=False)
class ParameterMap:
    local: Tuple[LocalSelector, ...]
    d: np.ndarray
    f: np.ndarray
    # linear costs enter as c = cost_sign * θ (profit convention "−θᵀx")
    cost_sign: float = -1.0

    def __post_init__(self):
        object.__setattr__(self, "local", tuple(self.local))
        object.__setattr__(self, "d", _frozen_index(self.d))
        object.__setattr__(self, "f", _frozen_index(self.f))
        if self.cost_sign not in (-1.0, 1.0):
            raise InvalidDimensionsError("cost_sign must be +1 or -1")

    @classmethod
    def default(cls, subproblems: Sequence[Subproblem], coupling: CouplingConstraints,
                cost_sign: float = -1.0) -> "ParameterMap":
        """θ_i = (c_i, b_i) for every subproblem and θ_c = (d, f)."""
        local = tuple(LocalSelector(c=np.arange(sp.n), b=np.arange(sp.l)) for sp in subproblems)
        return cls(local=local, d=np.arange(coupling.n_eq), f=np.arange(coupling.n_ineq), cost_sign=cost_sign)

    @property
    def local_sizes(self) -> List[int]:
        return [sel.size for sel in self.local]

    @property
    def coupling_size(self) -> int:
        return self.d.size + self.f.size

    @property
    def total(self) -> int:
        return sum(self.local_sizes) + self.coupling_size

    def local_offset(self, i: int) -> int:
        return int(sum(self.local_sizes[:i]))

    @property
    def coupling_offset(self) -> int:
        return int(sum(self.local_sizes))

    def local_columns(self, i: int) -> slice:
        start = self.local_offset(i)
        return slice(start, start + self.local[i].size)

    @property
    def coupling_columns(self) -> slice:
        return slice(self.coupling_offset, self.total)

    # ∂(coefficient)/∂θ blocks ---------------------------------------------

    def cost_jacobian(self, i: int, n: int) -> np.ndarray:
        sel = self.local[i]
        out = np.zeros((n, sel.size))
        out[sel.c, np.arange(sel.c.size)] = self.cost_sign
        return out

    def b_jacobian(self, i: int, l: int) -> np.ndarray:
        sel = self.local[i]
        out = np.zeros((l, sel.size))
        out[sel.b, sel.c.size + np.arange(sel.b.size)] = 1.0
        return out

    def e_jacobian(self, i: int, k: int) -> np.ndarray:
        sel = self.local[i]
        out = np.zeros((k, sel.size))
        out[sel.e, sel.c.size + sel.b.size + np.arange(sel.e.size)] = 1.0
        return out

    def d_jacobian(self, n_eq: int) -> np.ndarray:
        out = np.zeros((n_eq, self.coupling_size))
        out[self.d, np.arange(self.d.size)] = 1.0
        return out

    def f_jacobian(self, n_ineq: int) -> np.ndarray:
        out = np.zeros((n_ineq, self.coupling_size))
        out[self.f, self.d.size + np.arange(self.f.size)] = 1.0
        return out

    def validate(self, subproblems: Sequence[Subproblem], coupling: CouplingConstraints):
        if len(self.local) != len(subproblems):
            raise InvalidDimensionsError("parameter map needs one local selector per subproblem")
        checks = []
        for sel, sp in zip(self.local, subproblems):
            checks += [(sel.c, sp.n, f"c_{sp.index}"), (sel.b, sp.l, f"b_{sp.index}"), (sel.e, sp.k, f"e_{sp.index}")]
        checks += [(self.d, coupling.n_eq, "d"), (self.f, coupling.n_ineq, "f")]
        for idx, size, name in checks:
            if idx.size and (idx.min() < 0 or idx.max() >= size):
                raise InvalidDimensionsError(f"parameter selector for {name} out of range")
            if np.unique(idx).size != idx.size:
                raise InvalidDimensionsError(f"parameter selector for {name} repeats an entry")


@dataclass(frozen=True, eq=False)
class StackedQP:
    """The global QP in stacked form: min ½xᵀPx + cᵀx, A_eq x = b_eq, G x ≤ h."""
    P: np.ndarray
    c: np.ndarray
    A_eq: np.ndarray
    b_eq: np.ndarray
    G: np.ndarray
    h: np.ndarray
    x_slices: Tuple[slice, ...] = ()
    eq_local: Tuple[slice, ...] = ()
    eq_coupling: slice = slice(0, 0)
    ineq_local: Tuple[slice, ...] = ()
    ineq_coupling: slice = slice(0, 0)


def block_diagonal(blocks: Sequence[np.ndarray]) -> np.ndarray:
    """Block-diagonal matrix that keeps zero-row and zero-column blocks."""
    rows = sum(b.shape[0] for b in blocks)
    cols = sum(b.shape[1] for b in blocks)
    out = np.zeros((rows, cols))
    r = c = 0
    for b in blocks:
        out[r:r + b.shape[0], c:c + b.shape[1]] = b
        r += b.shape[0]
        c += b.shape[1]
    return out


def _blocks_to_slices(sizes: Sequence[int], start: int = 0) -> Tuple[slice, ...]:
    out = []
    for size in sizes:
        out.append(slice(start, start + size))
        start += size
    return tuple(out)


@dataclass(frozen=True, eq=False)
class Problem:
    subproblems: Tuple[Subproblem, ...]
    coupling: CouplingConstraints
    params: ParameterMap
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "subproblems", tuple(self.subproblems))
        if len(self.subproblems) < 1:
            raise InvalidDimensionsError("a problem needs at least one subproblem")
        if len(self.coupling.H_blocks) != len(self.subproblems):
            raise InvalidDimensionsError("one coupling block per subproblem is required")
        for sp, H, F in zip(self.subproblems, self.coupling.H_blocks, self.coupling.F_blocks):
            if H.shape[1] != sp.n or F.shape[1] != sp.n:
                raise InvalidDimensionsError(f"coupling block of subproblem {sp.index} has wrong width")
        degrees = self.coupling.pattern().sum(axis=1)
        for j in np.flatnonzero(degrees < 2):
            raise InvalidDimensionsError(f"coupling row {j} must link at least two subproblems")
        self.params.validate(self.subproblems, self.coupling)

    @property
    def N(self) -> int:
        return len(self.subproblems)

    @property
    def sizes(self) -> List[int]:
        return [sp.n for sp in self.subproblems]

    @property
    def n_eq(self) -> int:
        return self.coupling.n_eq

    @property
    def n_ineq(self) -> int:
        return self.coupling.n_ineq

    @property
    def n_coupling(self) -> int:
        return self.coupling.n_rows

    @property
    def x_slices(self) -> Tuple[slice, ...]:
        return _blocks_to_slices(self.sizes)

    def split_x(self, x) -> List[np.ndarray]:
        x = np.asarray(x, dtype=float)
        return [x[s] for s in self.x_slices]

    def coupling_matrix(self) -> np.ndarray:
        """M_C = [∂_x H; ∂_x F], shape Λ × Σn_i."""
        if self.n_coupling == 0:
            return np.zeros((0, sum(self.sizes)))
        return np.hstack([self.coupling.block(i) for i in range(self.N)])

    def objective(self, xs: Sequence[np.ndarray]) -> float:
        return float(sum(0.5 * x @ sp.P @ x + sp.c @ x for sp, x in zip(self.subproblems, xs)))

    def stacked_qp(self) -> StackedQP:
        sps = self.subproblems
        n_total = sum(self.sizes)
        P = block_diagonal([sp.P for sp in sps])
        c = np.concatenate([sp.c for sp in sps])
        E = block_diagonal([sp.E for sp in sps])
        A = block_diagonal([sp.A for sp in sps])
        H = np.hstack(self.coupling.H_blocks).reshape(self.n_eq, n_total)
        F = np.hstack(self.coupling.F_blocks).reshape(self.n_ineq, n_total)
        n_eq_local = sum(sp.k for sp in sps)
        n_ineq_local = sum(sp.l for sp in sps)
        return StackedQP(
            P=P,
            c=c,
            A_eq=np.vstack([E, H]),
            b_eq=np.concatenate([np.concatenate([sp.e for sp in sps]), self.coupling.d]),
            G=np.vstack([A, F]),
            h=np.concatenate([np.concatenate([sp.b for sp in sps]), self.coupling.f]),
            x_slices=self.x_slices,
            eq_local=_blocks_to_slices([sp.k for sp in sps]),
            eq_coupling=slice(n_eq_local, n_eq_local + self.n_eq),
            ineq_local=_blocks_to_slices([sp.l for sp in sps]),
            ineq_coupling=slice(n_ineq_local, n_ineq_local + self.n_ineq),
        )

    def replace(self, subproblems=None, coupling=None, params=None, meta=None) -> "Problem":
        return Problem(
            subproblems=self.subproblems if subproblems is None else subproblems,
            coupling=self.coupling if coupling is None else coupling,
            params=self.params if params is None else params,
            meta=dict(self.meta) if meta is None else meta,
        )


# ---------------------------------------------------------------------------
# Parameter vector plumbing
# ---------------------------------------------------------------------------

def theta_read(problem: Problem) -> np.ndarray:
    pm = problem.params
    parts = []
    for sel, sp in zip(pm.local, problem.subproblems):
        parts += [pm.cost_sign * sp.c[sel.c], sp.b[sel.b], sp.e[sel.e]]
    parts += [problem.coupling.d[pm.d], problem.coupling.f[pm.f]]
    return np.concatenate(parts) if parts else np.zeros(0)


def theta_write(problem: Problem, theta) -> Problem:
    """Copy of the problem with the parameterized coefficients set from θ."""
    pm = problem.params
    theta = np.asarray(theta, dtype=float).reshape(-1)
    if theta.size != pm.total:
        raise LengthMismatchError(pm.total, theta.size)
    subproblems = []
    for i, (sel, sp) in enumerate(zip(pm.local, problem.subproblems)):
        chunk = theta[pm.local_columns(i)]
        c, b, e = sp.c.copy(), sp.b.copy(), sp.e.copy()
        c[sel.c] = pm.cost_sign * chunk[:sel.c.size]
        b[sel.b] = chunk[sel.c.size:sel.c.size + sel.b.size]
        e[sel.e] = chunk[sel.c.size + sel.b.size:]
        subproblems.append(Subproblem(sp.index, sp.P, c, sp.A, b, sp.E, e))
    chunk = theta[pm.coupling_columns]
    d, f = problem.coupling.d.copy(), problem.coupling.f.copy()
    d[pm.d] = chunk[:pm.d.size]
    f[pm.f] = chunk[pm.d.size:]
    coupling = CouplingConstraints(problem.coupling.H_blocks, d, problem.coupling.F_blocks, f)
    return problem.replace(subproblems=subproblems, coupling=coupling)


# ---------------------------------------------------------------------------
# Generators
# ---------------------------------------------------------------------------

def parse_structure(structure: str, bandwidth: Optional[int] = None) -> Tuple[str, int]:
    """'dense' | 'chain' | 'banded' | 'banded(B)' -> (kind, B)."""
    match = re.fullmatch(r"\s*(dense|chain|banded)\s*(?:\(\s*(\d+)\s*\))?\s*", structure or "")
    if not match:
        raise InvalidDimensionsError(f"unknown coupling structure '{structure}'")
    kind, value = match.group(1), match.group(2)
    if kind == "chain":
        return kind, 1
    if kind == "banded":
        B = int(value) if value is not None else int(bandwidth or 1)
        if B < 1:
            raise InvalidDimensionsError("banded structure needs B >= 1")
        return kind, B
    return kind, 0


def _row_members(N: int, rows: int, kind: str, B: int) -> List[List[int]]:
    """Subproblems touched by each coupling row for a layout kind."""
    if rows == 0:
        return []
    if N < 2:
        raise InvalidDimensionsError("coupling rows need at least two subproblems")
    if kind == "dense":
        return [list(range(N)) for _ in range(rows)]
    width = min(B + 1, N)
    span = N - width
    if rows == 1:
        starts = [span // 2]
    else:
        starts = [int(round(j * span / (rows - 1))) for j in range(rows)]
    return [list(range(s, s + width)) for s in starts]


def _curvature(rng, n: int, eps: float) -> np.ndarray:
    L = rng.standard_normal((n, n)) / np.sqrt(n)
    P = L @ L.T + eps * np.eye(n)
    return 0.5 * (P + P.T)


def _draw_random(N, n, l, k, n_eq, n_ineq, kind, B, seed, eps) -> Problem:
    rng = np.random.default_rng(seed)
    eq_members = _row_members(N, n_eq, kind, B)
    ineq_members = _row_members(N, n_ineq, kind, B)
    for i in range(N):
        load = k + sum(i in members for members in eq_members)
        if load > n:
            raise InvalidDimensionsError(
                f"subproblem {i} would carry {load} equality rows for only {n} variables"
            )
    subproblems, anchors = [], []
    for i in range(N):
        P = _curvature(rng, n, eps)
        x_hat = rng.standard_normal(n)
        A = rng.standard_normal((l, n))
        b = A @ x_hat + rng.uniform(0.1, 1.0, l)
        E = rng.standard_normal((k, n))
        e = E @ x_hat
        c = rng.standard_normal(n)
        subproblems.append(Subproblem(i, P, c, A, b, E, e))
        anchors.append(x_hat)
    H = [np.zeros((n_eq, n)) for _ in range(N)]
    F = [np.zeros((n_ineq, n)) for _ in range(N)]
    for j, members in enumerate(eq_members):
        for i in members:
            H[i][j] = rng.standard_normal(n)
    for j, members in enumerate(ineq_members):
        for i in members:
            F[i][j] = rng.standard_normal(n)
    d = sum(H[i] @ anchors[i] for i in range(N)) if n_eq else np.zeros(0)
    f = (sum(F[i] @ anchors[i] for i in range(N)) + rng.uniform(0.1, 1.0, n_ineq)) if n_ineq else np.zeros(0)
    coupling = CouplingConstraints(tuple(H), d, tuple(F), f)
    return Problem(tuple(subproblems), coupling, ParameterMap.default(subproblems, coupling))


def _draw_chain(T, n, buffer, seed, eps, l) -> Problem:
    rng = np.random.default_rng(seed)
    subproblems, anchors = [], []
    for t in range(T):
        P = _curvature(rng, n, eps)
        x_hat = rng.standard_normal(n)
        A = rng.standard_normal((l, n))
        b = A @ x_hat + rng.uniform(0.1, 1.0, l)
        c = rng.standard_normal(n)
        subproblems.append(Subproblem(t, P, c, A, b, np.zeros((0, n)), np.zeros(0)))
        anchors.append(x_hat)
    H = [np.zeros((T - 1, n)) for _ in range(T)]
    for t in range(T - 1):
        # step t releases into the carry-over, step t+1 draws from it
        H[t][t] = rng.uniform(0.5, 1.5, n)
        H[t + 1][t] = -buffer * rng.uniform(0.5, 1.5, n)
    d = sum(H[t] @ anchors[t] for t in range(T))
    F = [np.zeros((0, n)) for _ in range(T)]
    coupling = CouplingConstraints(tuple(H), d, tuple(F), np.zeros(0))
    return Problem(tuple(subproblems), coupling, ParameterMap.default(subproblems, coupling))


def _accept(problem: Problem) -> bool:
    # imported here: the solver depends on this module
    from src.solver import solve, verify_assumptions

    solution = solve(problem)
    if not solution.converged:
        return False
    return verify_assumptions(problem, solution).all_ok


def _resample(draw, seed: int, resample: bool, generator: str, settings: dict) -> Problem:
    attempts = RESAMPLE_ATTEMPTS if resample else 1
    for attempt in range(attempts):
        problem = draw(seed + attempt)
        meta = {"seed": seed + attempt, "requested_seed": seed, "generator": generator,
                "version": FORMAT_VERSION, **settings}
        problem = problem.replace(meta=meta)
        if not resample or _accept(problem):
            return problem
        logger.warning("%s instance with seed %d is degenerate, resampling", generator, seed + attempt)
    raise DegenerateProblemError(f"no non-degenerate {generator} instance after {attempts} attempts from seed {seed}")


def generate_random(N: int, n: int, l: int = 0, k: int = 0, n_eq: int = 0, n_ineq: int = 0,
                    structure: str = "dense", seed: int = 0, bandwidth: Optional[int] = None,
                    eps: float = CURVATURE_EPS, resample: bool = True) -> Problem:
    """
    Random weakly-coupled problem, feasible by construction.

    A strictly feasible anchor x̂ is drawn first and every offset is derived
    from it (b = Ax̂ + s, e = Ex̂, d = ΣH_ix̂_i, f = ΣF_ix̂_i + s'). Instances
    violating the differentiability assumptions at their solution are redrawn
    with an incremented seed.
    """
    if min(N, n) < 1 or min(l, k, n_eq, n_ineq) < 0:
        raise InvalidDimensionsError("counts must be nonnegative with N, n >= 1")
    kind, B = parse_structure(structure, bandwidth)
    settings = {"kind": "random", "N": N, "n": n, "l": l, "k": k, "n_eq": n_eq, "n_ineq": n_ineq,
                "structure": kind, "bandwidth": B, "eps": eps}
    return _resample(lambda s: _draw_random(N, n, l, k, n_eq, n_ineq, kind, B, s, eps),
                     seed, resample, "random", settings)


def generate_chain(T: int, n: int, buffer: float = 1.0, seed: int = 0, l: int = 0,
                   eps: float = CURVATURE_EPS, resample: bool = True) -> Problem:
    """Time-coupled chain: coupling row t links steps t and t+1 only."""
    if T < 2:
        raise InvalidDimensionsError("a chain needs T >= 2")
    if n < 1 or l < 0:
        raise InvalidDimensionsError("n must be >= 1 and l >= 0")
    if not 0.0 < buffer <= 1.0:
        raise InvalidDimensionsError("buffer must lie in (0, 1]")
    settings = {"kind": "chain", "T": T, "n": n, "l": l, "buffer": buffer, "eps": eps}
    return _resample(lambda s: _draw_chain(T, n, buffer, s, eps, l), seed, resample, "chain", settings)
