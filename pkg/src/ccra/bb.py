"""Integer-linear model of the allocation problem and a branch-and-bound search.

Columns (all relaxed binaries except ``D``):

* ``g[r,v]``   request r is served at node v
* ``z[s,v]``   a VNF of service s is placed on node v
* ``rho[r,k]`` request r runs at priority level k
* ``fi[r,p,k]`` / ``fo[r,p,k]`` inquiry / response path p carries r at level k
* ``D[r]``     linearized end-to-end delay of r (continuous)

The per-level delay bounds are constants, so the delay rows only mention the
path columns.  A presolve pins to zero every column that cannot be part of a
feasible assignment on its own (wrong endpoints, delay dominated, capacity
impossible); the search then runs on the remaining columns.
"""

from __future__ import annotations

import heapq
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .allocation import (
    EPS,
    Assignment,
    ConfigurationError,
    Solution,
    check_feasibility,
    objective,
    service_delay,
)
from .lp import LinearProgram, LPResult, ModelError, solve_lp
from .model import Scenario

INT_TOL = 1e-6


class BranchingError(ValueError):
    pass


@dataclass
class LiccraModel:
    lp: LinearProgram
    g: np.ndarray  # [R, V] column ids
    z: np.ndarray  # [S, V]
    rho: np.ndarray  # [R, K]
    fi: np.ndarray  # [R, P, K]
    fo: np.ndarray  # [R, P, K]
    D: np.ndarray  # [R]
    # reason the model is infeasible before any LP is solved, if known
    infeasible: str | None = None

    @property
    def binary_count(self) -> int:
        return len(self.lp.binary_columns())

    def decode(self, scenario: Scenario, x: np.ndarray) -> Solution:
        """Integral column vector -> Solution (only VNFs in use are kept)."""
        assignments = {}
        for r in range(scenario.R):
            v = int(np.argmax(x[self.g[r]]))
            k = int(np.argmax(x[self.rho[r]]))
            inq = int(np.argmax(x[self.fi[r, :, k]]))
            resp = int(np.argmax(x[self.fo[r, :, k]]))
            assignments[r] = Assignment(v, k, inq, resp)
        return Solution.from_assignments(scenario, assignments)

    def encode(self, scenario: Scenario, solution: Solution) -> np.ndarray:
        """Solution -> column vector (inverse of decode for full solutions)."""
        x = np.zeros(self.lp.n_cols)
        for r, a in solution.assignments.items():
            x[self.g[r, a.node]] = 1
            x[self.rho[r, a.level]] = 1
            x[self.fi[r, a.inquiry, a.level]] = 1
            x[self.fo[r, a.response, a.level]] = 1
        for s, v in solution.vnf_at:
            x[self.z[s, v]] = 1
        pd = scenario.path_delay_bounds
        for r, a in solution.assignments.items():
            x[self.D[r]] = pd[a.inquiry][a.level] + pd[a.response][a.level] + service_delay(scenario.requests[r])
        return x


def build_liccra(scenario: Scenario, presolve: bool = True) -> LiccraModel:
    """Build the linearized model; ``presolve`` pins hopeless columns to zero."""
    R, V, S, K, L = scenario.R, scenario.V, scenario.S, scenario.K, scenario.L
    P = len(scenario.paths)
    paths = scenario.paths
    links = scenario.links
    reqs = scenario.requests
    pr = scenario.priorities
    lp = LinearProgram()

    try:
        pd = np.array(scenario.path_delay_bounds, dtype=float).reshape(P, K)
    except ConfigurationError as exc:
        raise ModelError(f"per-level shares leave no bandwidth: {exc}") from exc
    pcost = np.array(scenario.path_cost, dtype=float)

    g = np.array([[lp.add_var(f"g[{r},{v}]", "binary", 0, 1, scenario.nodes[v].unit_cost) for v in range(V)] for r in range(R)], dtype=int).reshape(R, V)
    z = np.array([[lp.add_var(f"z[{s},{v}]", "binary", 0, 1) for v in range(V)] for s in range(S)], dtype=int).reshape(S, V)
    rho = np.array([[lp.add_var(f"rho[{r},{k}]", "binary", 0, 1) for k in range(K)] for r in range(R)], dtype=int).reshape(R, K)
    fi = np.zeros((R, P, K), dtype=int)
    fo = np.zeros((R, P, K), dtype=int)
    for name, arr in (("fi", fi), ("fo", fo)):
        for r in range(R):
            for p in range(P):
                for k in range(K):
                    arr[r, p, k] = lp.add_var(f"{name}[{r},{p},{k}]", "binary", 0, 1, pcost[p])
    D = np.array(
        [lp.add_var(f"D[{r}]", "continuous", 0.0, reqs[r].delay_req) for r in range(R)], dtype=int
    ).reshape(R)

    ub = np.array(lp.ub, dtype=float)
    infeasible = None

    # candidate paths per request and direction
    inq_of = [[p.id for p in paths if p.head == rq.entry_node] for rq in reqs]
    resp_of = [[p.id for p in paths if p.tail == rq.entry_node] for rq in reqs]
    for r, rq in enumerate(reqs):
        ok_v = [v for v in range(V) if scenario.pair_paths(rq.entry_node, v) and scenario.pair_paths(v, rq.entry_node)]
        if not ok_v and infeasible is None:
            infeasible = f"request {r} has no candidate path pair"

    if presolve:
        for r, rq in enumerate(reqs):
            inq, resp = set(inq_of[r]), set(resp_of[r])
            budget = rq.delay_req - service_delay(rq)
            cap = scenario.services[rq.service].vnf_capacity
            for p in range(P):
                for k in range(K):
                    if p not in inq:
                        ub[fi[r, p, k]] = 0
                    if p not in resp:
                        ub[fo[r, p, k]] = 0
            for v in range(V):
                node_ok = rq.capacity_req <= cap + EPS and cap <= scenario.nodes[v].compute_capacity + EPS
                if not node_ok:
                    ub[g[r, v]] = 0
            for k in range(K):
                # cheapest reverse delay for each node at this level
                best_back = {}
                best_fwd = {}
                for p in resp_of[r]:
                    if _path_capacity_ok(scenario, rq, p, k):
                        best_back[paths[p].head] = min(best_back.get(paths[p].head, math.inf), pd[p, k])
                for p in inq_of[r]:
                    if _path_capacity_ok(scenario, rq, p, k):
                        best_fwd[paths[p].tail] = min(best_fwd.get(paths[p].tail, math.inf), pd[p, k])
                for p in inq_of[r]:
                    v = paths[p].tail
                    if (
                        ub[g[r, v]] == 0
                        or not _path_capacity_ok(scenario, rq, p, k)
                        or pd[p, k] + best_back.get(v, math.inf) > budget + EPS
                    ):
                        ub[fi[r, p, k]] = 0
                for p in resp_of[r]:
                    v = paths[p].head
                    if (
                        ub[g[r, v]] == 0
                        or not _path_capacity_ok(scenario, rq, p, k)
                        or pd[p, k] + best_fwd.get(v, math.inf) > budget + EPS
                    ):
                        ub[fo[r, p, k]] = 0
        for s, sv in enumerate(scenario.services):
            for v in range(V):
                if sv.vnf_capacity > scenario.nodes[v].compute_capacity + EPS:
                    ub[z[s, v]] = 0
        lp.ub = ub.tolist()

    # C1: every request is served by exactly one node
    for r in range(R):
        lp.add_row({int(g[r, v]): 1.0 for v in range(V)}, "=", 1.0, f"C1[{r}]")
    # C2: service only where the VNF is placed
    for r, rq in enumerate(reqs):
        for v in range(V):
            lp.add_row({int(g[r, v]): 1.0, int(z[rq.service, v]): -1.0}, "<=", 0.0, f"C2[{r},{v}]")
    # C3: VNF capacity
    for s, sv in enumerate(scenario.services):
        members = [r for r, rq in enumerate(reqs) if rq.service == s]
        for v in range(V):
            row = {int(g[r, v]): reqs[r].capacity_req for r in members}
            row[int(z[s, v])] = -sv.vnf_capacity
            lp.add_row(row, "<=", 0.0, f"C3[{s},{v}]")
    # C4: node capacity
    for v, node in enumerate(scenario.nodes):
        lp.add_row({int(z[s, v]): sv.vnf_capacity for s, sv in enumerate(scenario.services)}, "<=", node.compute_capacity, f"C4[{v}]")
    # C5: one priority level
    for r in range(R):
        lp.add_row({int(rho[r, k]): 1.0 for k in range(K)}, "=", 1.0, f"C5[{r}]")
    # C6-C9: one inquiry and one response path, ending / starting at the serving
    # node and carried at the chosen level
    for r, rq in enumerate(reqs):
        for k in range(K):
            lp.add_row({int(fi[r, p, k]): 1.0 for p in range(P)} | {int(rho[r, k]): -1.0}, "=", 0.0, f"C8[{r},{k}]")
            lp.add_row({int(fo[r, p, k]): 1.0 for p in range(P)} | {int(rho[r, k]): -1.0}, "=", 0.0, f"C9[{r},{k}]")
        for v in range(V):
            into = [p for p in range(P) if paths[p].tail == v]
            back = [p for p in range(P) if paths[p].head == v]
            row = {int(fi[r, p, k]): 1.0 for p in into for k in range(K)}
            row[int(g[r, v])] = -1.0
            lp.add_row(row, "=", 0.0, f"C6[{r},{v}]")
            row = {int(fo[r, p, k]): 1.0 for p in back for k in range(K)}
            row[int(g[r, v])] = -1.0
            lp.add_row(row, "=", 0.0, f"C7[{r},{v}]")
        # paths must start / end at the entry node
        stray_i = {int(fi[r, p, k]): 1.0 for p in range(P) if paths[p].head != rq.entry_node for k in range(K)}
        stray_o = {int(fo[r, p, k]): 1.0 for p in range(P) if paths[p].tail != rq.entry_node for k in range(K)}
        if stray_i:
            lp.add_row(stray_i, "=", 0.0, f"C6e[{r}]")
        if stray_o:
            lp.add_row(stray_o, "=", 0.0, f"C7e[{r}]")

    # link usage rows: C10 (bandwidth), C11 (queue budget), C13' (level share)
    on_link: list[list[int]] = [[] for _ in range(L)]
    for p in paths:
        for l in p.links:
            on_link[l].append(p.id)
    for l in range(L):
        band: dict[int, float] = {}
        for k in range(K):
            burst: dict[int, float] = {}
            share: dict[int, float] = {}
            for r, rq in enumerate(reqs):
                for p in on_link[l]:
                    mult = paths[p].links.count(l)
                    for arr in (fi, fo):
                        j = int(arr[r, p, k])
                        burst[j] = burst.get(j, 0.0) + mult * rq.burstiness
                        share[j] = share.get(j, 0.0) + mult * rq.bandwidth_req
            band.update(share)
            lp.add_row(burst, "<=", pr.queue_size[k], f"C11[{l},{k}]")
            lp.add_row(share, "<=", pr.bandwidth_share[l][k], f"C13p[{l},{k}]")
        lp.add_row(band, "<=", links[l].bandwidth, f"C10[{l}]")

    # C14': linearized delay with constant per-level bounds; C15 is the box on D
    for r, rq in enumerate(reqs):
        row = {int(D[r]): 1.0}
        for p in range(P):
            for k in range(K):
                if pd[p, k] != 0.0:
                    row[int(fi[r, p, k])] = -pd[p, k]
                    row[int(fo[r, p, k])] = -pd[p, k]
        lp.add_row(row, "=", service_delay(rq), f"C14p[{r}]")

    return LiccraModel(lp, g, z, rho, fi, fo, D, infeasible)


def _path_capacity_ok(scenario: Scenario, rq, p: int, k: int) -> bool:
    links = scenario.paths[p].links
    pr = scenario.priorities
    for l in set(links):
        n = links.count(l)
        if (
            n * rq.bandwidth_req > scenario.links[l].bandwidth + EPS
            or n * rq.bandwidth_req > pr.bandwidth_share[l][k] + EPS
            or n * rq.burstiness > pr.queue_size[k] + EPS
        ):
            return False
    return True


# -- search --------------------------------------------------------------------


@dataclass(frozen=True)
class BBNode:
    lb: np.ndarray
    ub: np.ndarray
    bound: float
    depth: int


def branch(node: BBNode, j: int, value: float) -> tuple[BBNode, BBNode]:
    """Split on column ``j``: x_j <= floor(value) and x_j >= ceil(value)."""
    lo, hi = math.floor(value), math.ceil(value)
    if min(value - lo, hi - value) <= INT_TOL * (1 + 1e-9):
        raise BranchingError(f"column {j} value {value} is integral within tolerance")
    down_ub = node.ub.copy()
    down_ub[j] = lo
    up_lb = node.lb.copy()
    up_lb[j] = hi
    return (
        BBNode(node.lb, down_ub, node.bound, node.depth + 1),
        BBNode(up_lb, node.ub, node.bound, node.depth + 1),
    )


@dataclass
class BBConfig:
    time_limit: float = 60.0  # seconds
    gap_limit: float = 0.0
    node_limit: int | None = None
    node_selection: str = "best-bound"  # or "depth-first"
    branch_rule: str = "most-fractional"  # or "first-fractional"
    engine: str = "auto"
    # "tree": the search below; "highs": hand the same model to HiGHS'
    # branch-and-cut (used as the reference where the plain tree is too slow)
    search: str = "tree"
    # objective coefficients are all integers: prune nodes that cannot beat
    # the incumbent by at least one unit
    integral_objective: bool | None = None


@dataclass
class BBResult:
    status: str  # "optimal" | "feasible" | "infeasible" | "unknown"
    solution: Solution | None
    incumbent: float
    bound: float
    nodes: int
    trace: list[tuple[float, float, float, int]] = field(default_factory=list)
    runtime_ms: float = 0.0

    @property
    def gap(self) -> float:
        if self.solution is None or not math.isfinite(self.incumbent):
            return math.inf
        return max(0.0, (self.incumbent - self.bound) / max(abs(self.incumbent), EPS))

    def trace_csv(self) -> str:
        lines = ["t_ms,incumbent,bound,nodes"]
        for t, inc, bnd, n in self.trace:
            lines.append(f"{t:.6f},{inc:.6f},{bnd:.6f},{n}")
        return "\n".join(lines) + "\n"


def _restrict(lp: LinearProgram, keep: np.ndarray) -> tuple[LinearProgram, np.ndarray]:
    """Drop columns fixed at zero (they contribute nothing to any row)."""
    pos = np.full(lp.n_cols, -1, dtype=int)
    pos[keep] = np.arange(keep.size)
    out = LinearProgram()
    for j in keep:
        out.add_var(lp.names[j], lp.kinds[j], lp.lb[j], lp.ub[j], lp.c[j])
    for cols, vals, s, b, tag in zip(lp.row_cols, lp.row_vals, lp.senses, lp.rhs, lp.row_tags):
        row = {int(pos[j]): v for j, v in zip(cols, vals) if pos[j] >= 0}
        if not row:
            if (s == "<=" and b < -1e-7) or (s == ">=" and b > 1e-7) or (s == "=" and abs(b) > 1e-7):
                raise _Infeasible(tag)
            continue
        out.add_row(row, s, b, tag)
    return out, pos


class _Infeasible(Exception):
    pass


def bb_solve(scenario: Scenario, cfg: BBConfig | None = None, model: LiccraModel | None = None, clock=time.perf_counter) -> BBResult:
    """Best-bound branch and bound over the LP relaxation of the linearized model.

    The trace holds (elapsed ms, incumbent, global bound, nodes explored) rows,
    one per change of either value.
    """
    cfg = cfg or BBConfig()
    t0 = clock()
    model = model or build_liccra(scenario)

    def elapsed_ms() -> float:
        return (clock() - t0) * 1000.0

    if model.infeasible:
        return BBResult("infeasible", None, math.inf, math.inf, 0, [], elapsed_ms())

    full = model.lp
    ub_full = np.asarray(full.ub, dtype=float)
    keep = np.flatnonzero(ub_full > 0)
    try:
        lp, pos = _restrict(full, keep)
    except _Infeasible:
        return BBResult("infeasible", None, math.inf, math.inf, 0, [], elapsed_ms())
    A = lp.matrix()
    if cfg.search == "highs":
        return _highs_mip(scenario, model, lp, keep, A, cfg, elapsed_ms)
    if cfg.search != "tree":
        raise ValueError(f"unknown search {cfg.search}")
    binaries = lp.binary_columns()
    c = np.asarray(lp.c, dtype=float)
    integral = cfg.integral_objective
    if integral is None:
        integral = bool(np.all(np.abs(c - np.round(c)) < 1e-12))
    prune_margin = 1.0 - 1e-6 if integral else 1e-9

    incumbent = math.inf
    inc_x: np.ndarray | None = None
    trace: list[tuple[float, float, float, int]] = []
    seq = 0
    nodes = 0
    bound_seen = -math.inf

    def record(bnd: float) -> None:
        nonlocal bound_seen
        bnd = max(bnd, bound_seen)
        if incumbent < math.inf:
            bnd = min(bnd, incumbent)
        bound_seen = bnd
        row = (elapsed_ms(), incumbent, bnd, nodes)
        if not trace or trace[-1][1:3] != row[1:3]:
            trace.append(row)

    root = BBNode(np.asarray(lp.lb, dtype=float), np.asarray(lp.ub, dtype=float), -math.inf, 0)
    heap: list[tuple] = [(root.bound, 0, seq, root)]
    stopped = False

    while heap:
        if cfg.time_limit is not None and elapsed_ms() > cfg.time_limit * 1000.0:
            stopped = True
            break
        if cfg.node_limit is not None and nodes >= cfg.node_limit:
            stopped = True
            break
        if incumbent < math.inf:
            gap = (incumbent - max(heap[0][0], bound_seen)) / max(abs(incumbent), EPS)
            if gap <= cfg.gap_limit:
                stopped = cfg.gap_limit > 0
                break
        _, _, _, node = heapq.heappop(heap)
        if node.bound > incumbent - prune_margin:
            continue
        nodes += 1
        res: LPResult = solve_lp(lp, node.lb, node.ub, engine=cfg.engine, matrix=A)
        if res.status == "unbounded":
            raise ModelError("relaxation is unbounded")
        if res.status != "optimal":
            _update_bound(heap, record)
            continue
        phi = max(res.objective, node.bound)
        if phi > incumbent - prune_margin:
            _update_bound(heap, record)
            continue
        xb = res.x[binaries]
        frac = np.minimum(xb - np.floor(xb), np.ceil(xb) - xb)
        fractional = np.flatnonzero(frac > INT_TOL)
        if fractional.size == 0:
            incumbent = float(res.objective)
            inc_x = res.x.copy()
            inc_x[binaries] = np.round(xb)
            # drop open nodes that can no longer improve
            heap = [e for e in heap if e[0] <= incumbent - prune_margin]
            heapq.heapify(heap)
            _update_bound(heap, record, fallback=incumbent)
            continue
        if cfg.branch_rule == "most-fractional":
            pick = fractional[np.argmax(frac[fractional])]  # argmax keeps the lowest index on ties
        else:
            pick = fractional[0]
        j = int(binaries[pick])
        down, up = branch(BBNode(node.lb, node.ub, phi, node.depth), j, float(res.x[j]))
        for child in (down, up):
            seq += 1
            if cfg.node_selection == "best-bound":
                heapq.heappush(heap, (phi, 0, seq, child))
            else:
                heapq.heappush(heap, (-child.depth, phi, seq, child))
        _update_bound(heap, record)

    if heap:
        final_bound = min(max(bound_seen, min(e[3].bound for e in heap)), incumbent)
    else:
        final_bound = incumbent
    record(final_bound)

    solution = None
    if inc_x is not None:
        x = np.zeros(full.n_cols)
        x[keep] = inc_x
        solution = _verified(scenario, model.decode(scenario, x))
        incumbent = objective(scenario, solution)
        status = "feasible" if stopped and final_bound < incumbent - prune_margin else "optimal"
    else:
        status = "unknown" if stopped else "infeasible"
    return BBResult(status, solution, incumbent, final_bound, nodes, trace, elapsed_ms())


def _verified(scenario: Scenario, solution: Solution) -> Solution:
    verdict = check_feasibility(scenario, solution, "linearized")
    if not verdict.feasible:
        raise ModelError(f"decoded incumbent violates {sorted(verdict.tags())}")
    return solution


def _update_bound(heap, record, fallback: float = math.inf) -> None:
    record(min((e[3].bound for e in heap), default=fallback))


def _highs_mip(scenario, model, lp, keep, A, cfg, elapsed_ms) -> BBResult:
    from scipy.optimize import Bounds, LinearConstraint, milp

    senses = np.asarray(lp.senses)
    b = np.asarray(lp.rhs, dtype=float)
    lo = np.where(senses == "<=", -np.inf, b)
    hi = np.where(senses == ">=", np.inf, b)
    integrality = np.array([1 if k == "binary" else 0 for k in lp.kinds])
    options = {"disp": False, "mip_rel_gap": cfg.gap_limit}
    if cfg.time_limit is not None:
        options["time_limit"] = float(cfg.time_limit)
    res = milp(
        np.asarray(lp.c, dtype=float),
        constraints=LinearConstraint(A, lo, hi),
        integrality=integrality,
        bounds=Bounds(np.asarray(lp.lb, dtype=float), np.asarray(lp.ub, dtype=float)),
        options=options,
    )
    bound = getattr(res, "mip_dual_bound", None)
    bound = -math.inf if bound is None or not np.isfinite(bound) else float(bound)
    nodes = int(getattr(res, "mip_node_count", 0) or 0)
    if res.x is None:
        status = "infeasible" if res.status == 2 else "unknown"
        t = elapsed_ms()
        return BBResult(status, None, math.inf, math.inf if status == "infeasible" else bound, nodes, [(t, math.inf, bound, nodes)], t)
    x = np.zeros(model.lp.n_cols)
    x[keep] = np.round(res.x) * (integrality == 1) + res.x * (integrality == 0)
    solution = _verified(scenario, model.decode(scenario, x))
    incumbent = objective(scenario, solution)
    status = "optimal" if res.status == 0 else "feasible"
    bound = incumbent if status == "optimal" and cfg.gap_limit == 0 else min(bound, incumbent)
    t = elapsed_ms()
    return BBResult(status, solution, incumbent, bound, nodes, [(t, incumbent, bound, nodes)], t)
