"""Linear programs in row form and a bounded-variable primal simplex.

The simplex works on a dense tableau: nonbasic variables sit at one of their
bounds, a bound flip replaces a pivot when the entering variable reaches its
own opposite bound first, and Bland's rule takes over after a run of
degenerate pivots.  Larger relaxations can be routed to HiGHS through scipy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

PIVOT_TOL = 1e-9
FEAS_TOL = 1e-7
OPT_TOL = 1e-9


@dataclass
class LinearProgram:
    """minimize c.x  s.t.  rows (<=, >=, =) rhs,  lb <= x <= ub."""

    names: list[str] = field(default_factory=list)
    kinds: list[str] = field(default_factory=list)  # "binary" (relaxed) or "continuous"
    lb: list[float] = field(default_factory=list)
    ub: list[float] = field(default_factory=list)
    c: list[float] = field(default_factory=list)
    row_cols: list[list[int]] = field(default_factory=list)
    row_vals: list[list[float]] = field(default_factory=list)
    senses: list[str] = field(default_factory=list)
    rhs: list[float] = field(default_factory=list)
    row_tags: list[str] = field(default_factory=list)
    _index: dict[str, int] = field(default_factory=dict, repr=False)

    def add_var(self, name: str, kind: str = "continuous", lb: float = 0.0, ub: float = math.inf, cost: float = 0.0) -> int:
        if kind == "binary" and not (0.0 <= lb <= ub <= 1.0):
            raise ValueError("relaxed binaries must be boxed within [0, 1]")
        if name in self._index:
            raise ValueError(f"duplicate column {name}")
        j = len(self.names)
        self._index[name] = j
        self.names.append(name)
        self.kinds.append(kind)
        self.lb.append(lb)
        self.ub.append(ub)
        self.c.append(cost)
        return j

    def add_row(self, coeffs: dict[int, float], sense: str, rhs: float, tag: str = "") -> int:
        if sense not in ("<=", ">=", "="):
            raise ValueError(sense)
        cols = sorted(j for j, v in coeffs.items() if v != 0.0)
        for j in cols:
            if not 0 <= j < len(self.names):
                raise IndexError(j)
        self.row_cols.append(cols)
        self.row_vals.append([float(coeffs[j]) for j in cols])
        self.senses.append(sense)
        self.rhs.append(float(rhs))
        self.row_tags.append(tag)
        return len(self.rhs) - 1

    def col(self, name: str) -> int:
        return self._index[name]

    @property
    def n_cols(self) -> int:
        return len(self.names)

    @property
    def n_rows(self) -> int:
        return len(self.rhs)

    def binary_columns(self) -> np.ndarray:
        return np.array([j for j, k in enumerate(self.kinds) if k == "binary"], dtype=int)

    def matrix(self) -> sp.csr_matrix:
        indptr = np.cumsum([0] + [len(r) for r in self.row_cols])
        indices = np.fromiter((j for r in self.row_cols for j in r), dtype=int, count=int(indptr[-1]))
        data = np.fromiter((v for r in self.row_vals for v in r), dtype=float, count=int(indptr[-1]))
        return sp.csr_matrix((data, indices, indptr), shape=(self.n_rows, self.n_cols))


@dataclass
class LPResult:
    status: str  # "optimal" | "infeasible" | "unbounded"
    x: np.ndarray | None = None
    objective: float = math.nan
    iterations: int = 0


class ModelError(RuntimeError):
    pass


def solve_lp(
    lp: LinearProgram,
    lb: np.ndarray | None = None,
    ub: np.ndarray | None = None,
    engine: str = "auto",
    matrix: sp.csr_matrix | None = None,
) -> LPResult:
    """Solve the relaxation, optionally under tightened column bounds.

    Columns whose bounds coincide are substituted out before solving, so deep
    branch-and-bound nodes see smaller systems.
    """
    lb = np.asarray(lp.lb if lb is None else lb, dtype=float)
    ub = np.asarray(lp.ub if ub is None else ub, dtype=float)
    if (lb > ub + FEAS_TOL).any():
        return LPResult("infeasible")
    A = lp.matrix() if matrix is None else matrix
    c = np.asarray(lp.c, dtype=float)
    rhs = np.asarray(lp.rhs, dtype=float)
    senses = np.asarray(lp.senses)

    fixed = ub - lb <= 0.0
    free = np.flatnonzero(~fixed)
    x_fixed = np.where(fixed, lb, 0.0)
    rhs_adj = rhs - A @ x_fixed
    Af = A[:, free].tocsr()
    nnz = np.diff(Af.indptr)
    empty = nnz == 0
    # empty rows must hold on their own
    for i in np.flatnonzero(empty):
        s, b = senses[i], rhs_adj[i]
        if (s == "<=" and b < -FEAS_TOL) or (s == ">=" and b > FEAS_TOL) or (s == "=" and abs(b) > FEAS_TOL):
            return LPResult("infeasible")
    keep = np.flatnonzero(~empty)
    Af = Af[keep]
    const = float(c @ x_fixed)

    if free.size == 0:
        return LPResult("optimal", x_fixed.copy(), const)

    if engine == "auto":
        engine = "simplex" if free.size * max(keep.size, 1) <= 150_000 else "highs"
    if engine == "simplex":
        res = simplex(Af.toarray(), senses[keep], rhs_adj[keep], c[free], lb[free], ub[free])
    elif engine == "highs":
        res = _highs(Af, senses[keep], rhs_adj[keep], c[free], lb[free], ub[free])
    else:
        raise ValueError(f"unknown LP engine {engine}")
    if res.status != "optimal":
        return res
    x = x_fixed.copy()
    x[free] = res.x
    return LPResult("optimal", x, float(c @ x), res.iterations)


def _highs(A, senses, b, c, lb, ub) -> LPResult:
    from scipy.optimize import linprog

    le = senses == "<="
    ge = senses == ">="
    eq = senses == "="
    A_ub = sp.vstack([A[le], -A[ge]]).tocsr() if (le.any() or ge.any()) else None
    b_ub = np.concatenate([b[le], -b[ge]]) if A_ub is not None else None
    A_eq = A[eq] if eq.any() else None
    b_eq = b[eq] if eq.any() else None
    bounds = list(zip(lb, [None if math.isinf(u) else u for u in ub]))
    out = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq, bounds=bounds, method="highs-ds")
    if out.status == 2:
        return LPResult("infeasible")
    if out.status == 3:
        return LPResult("unbounded")
    if out.status != 0:
        raise ModelError(f"HiGHS failed: {out.message}")
    return LPResult("optimal", np.asarray(out.x), float(out.fun), int(getattr(out, "nit", 0)))


def simplex(
    A: np.ndarray,
    senses,
    b: np.ndarray,
    c: np.ndarray,
    lb: np.ndarray,
    ub: np.ndarray,
    max_iter: int = 50_000,
    degenerate_switch: int = 50,
) -> LPResult:
    """Two-phase bounded-variable primal simplex on a dense tableau.

    Every column needs at least one finite bound.
    """
    A = np.asarray(A, dtype=float)
    m, n = A.shape
    senses = list(senses)
    lb = np.asarray(lb, dtype=float)
    ub = np.asarray(ub, dtype=float)
    if np.any(np.isinf(lb) & np.isinf(ub)):
        raise ModelError("free columns are not supported")

    slack_rows = [i for i, s in enumerate(senses) if s != "="]
    ns = len(slack_rows)
    S = np.zeros((m, ns))
    for j, i in enumerate(slack_rows):
        S[i, j] = 1.0 if senses[i] == "<=" else -1.0
    M = np.hstack([A, S])
    lo = np.concatenate([lb, np.zeros(ns)])
    hi = np.concatenate([ub, np.full(ns, np.inf)])
    N = n + ns

    value = np.where(np.isfinite(lo), lo, hi)
    resid = b - M @ value
    sign = np.where(resid >= 0, 1.0, -1.0)
    # tableau = B^-1 [M | artificials] with B = diag(sign)
    T = np.hstack([M * sign[:, None], np.eye(m)])
    lo = np.concatenate([lo, np.zeros(m)])
    hi = np.concatenate([hi, np.full(m, np.inf)])
    value = np.concatenate([value, np.abs(resid)])
    basis = np.arange(N, N + m)
    is_basic = np.zeros(N + m, dtype=bool)
    is_basic[basis] = True

    iters = 0

    def run(cost: np.ndarray) -> str:
        nonlocal iters
        d = cost - cost[basis] @ T
        degenerate = 0
        while True:
            if iters >= max_iter:
                raise ModelError("simplex iteration limit reached")
            movable = ~is_basic & (hi - lo > 0)
            at_lo = value <= lo + PIVOT_TOL
            at_hi = value >= hi - PIVOT_TOL
            up = movable & (d < -OPT_TOL) & ~at_hi
            down = movable & (d > OPT_TOL) & ~at_lo
            cand = np.flatnonzero(up | down)
            if cand.size == 0:
                return "optimal"
            if degenerate >= degenerate_switch:
                j = int(cand[0])  # Bland
            else:
                j = int(cand[np.argmax(np.abs(d[cand]))])
            direction = 1.0 if up[j] else -1.0
            alpha = direction * T[:, j]
            xb = value[basis]
            t_best = hi[j] - lo[j]
            row = -1
            with np.errstate(divide="ignore", invalid="ignore"):
                dec = alpha > PIVOT_TOL
                inc = alpha < -PIVOT_TOL
                ratios = np.full(m, np.inf)
                ratios[dec] = (xb[dec] - lo[basis][dec]) / alpha[dec]
                ratios[inc] = (hi[basis][inc] - xb[inc]) / -alpha[inc]
            ratios = np.maximum(ratios, 0.0)
            if m:
                r_min = ratios.min()
                if r_min < t_best:
                    ties = np.flatnonzero(ratios <= r_min + PIVOT_TOL)
                    if degenerate >= degenerate_switch:
                        row = int(ties[np.argmin(basis[ties])])
                    else:
                        row = int(ties[np.argmax(np.abs(alpha[ties]))])
                    t_best = ratios[row]
            if math.isinf(t_best):
                return "unbounded"
            iters += 1
            degenerate = degenerate + 1 if t_best <= PIVOT_TOL else 0
            value[basis] = xb - t_best * alpha
            value[j] += direction * t_best
            if row < 0:
                continue
            leaving = basis[row]
            value[leaving] = lo[leaving] if alpha[row] > 0 else hi[leaving]
            piv = T[row, j]
            T[row] /= piv
            colj = T[:, j].copy()
            colj[row] = 0.0
            T[...] -= np.outer(colj, T[row])
            d -= d[j] * T[row]
            basis[row] = j
            is_basic[leaving] = False
            is_basic[j] = True

    phase1 = np.concatenate([np.zeros(N), np.ones(m)])
    status = run(phase1)
    if status != "optimal" or value[N:].sum() > FEAS_TOL * max(1.0, np.abs(b).max(initial=0.0)):
        return LPResult("infeasible", iterations=iters)
    hi[N:] = 0.0
    value[N:] = np.minimum(value[N:], 0.0)
    cost = np.concatenate([np.asarray(c, dtype=float), np.zeros(ns + m)])
    status = run(cost)
    if status != "optimal":
        return LPResult(status, iterations=iters)
    x = np.clip(value[:n], lb, ub)
    return LPResult("optimal", x, float(np.dot(c, x)), iters)
