"""Solutions, residual capacities, the ATS delay model and constraint checking.

Constraint tags in verdicts follow the formulation: ``C1`` .. ``C15`` plus
``C13p`` (per-level bandwidth caps), ``C13pp`` (bound configuration) and
``C14p`` (linearized end-to-end delay).
"""

from __future__ import annotations

import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Literal, Sequence

import numpy as np

from .model import LinkSpec, PriorityConfig, RequestSpec, Scenario

Mode = Literal["exact", "linearized"]
EPS = 1e-9


class SaturationError(ArithmeticError):
    """Higher-priority load leaves no bandwidth for a flow (C13 denominator <= 0)."""


class ConfigurationError(ValueError):
    """Per-level bandwidth shares exhaust a link (C13'' denominator <= 0)."""


@dataclass(frozen=True, order=True)
class Assignment:
    node: int
    level: int
    inquiry: int
    response: int


@dataclass
class Solution:
    assignments: dict[int, Assignment] = field(default_factory=dict)
    vnf_at: frozenset[tuple[int, int]] = frozenset()

    @classmethod
    def from_assignments(cls, scenario: Scenario, assignments: dict[int, Assignment]) -> "Solution":
        """Build a solution placing exactly the VNFs its requests use."""
        vnf = frozenset((scenario.requests[r].service, a.node) for r, a in assignments.items())
        return cls(dict(sorted(assignments.items())), vnf)

    @property
    def supported(self) -> frozenset[int]:
        return frozenset(self.assignments)

    @property
    def placement(self) -> dict[int, int]:
        return {r: a.node for r, a in self.assignments.items()}

    @property
    def priority(self) -> dict[int, int]:
        return {r: a.level for r, a in self.assignments.items()}

    @property
    def inquiry_path(self) -> dict[int, int]:
        return {r: a.inquiry for r, a in self.assignments.items()}

    @property
    def response_path(self) -> dict[int, int]:
        return {r: a.response for r, a in self.assignments.items()}

    def restricted(self, requests: Iterable[int]) -> "Solution":
        keep = set(requests)
        return Solution({r: a for r, a in self.assignments.items() if r in keep}, self.vnf_at)

    def to_dict(self) -> dict:
        return {
            "assignments": [
                {"request": r, "node": a.node, "level": a.level, "inquiry_path": a.inquiry, "response_path": a.response}
                for r, a in sorted(self.assignments.items())
            ],
            "vnf_at": [{"service": s, "node": v} for s, v in sorted(self.vnf_at)],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Solution":
        assignments = {
            e["request"]: Assignment(e["node"], e["level"], e["inquiry_path"], e["response_path"])
            for e in d["assignments"]
        }
        return cls(dict(sorted(assignments.items())), frozenset((e["service"], e["node"]) for e in d["vnf_at"]))


@dataclass(frozen=True)
class AllocationOption:
    node: int
    level: int
    inquiry: int
    response: int
    cost: float
    delay: float

    @property
    def assignment(self) -> Assignment:
        return Assignment(self.node, self.level, self.inquiry, self.response)

    def key(self) -> tuple:
        return (self.node, self.level, self.inquiry, self.response)


# -- residual capacities -------------------------------------------------------


@dataclass
class CommitRecord:
    request: int
    assignment: Assignment
    opened_vnf: bool


class ResidualState:
    """Remaining node, VNF, link, per-level share and per-level queue capacity."""

    def __init__(self, scenario: Scenario):
        self.scenario = scenario
        self.node_free = np.array([n.compute_capacity for n in scenario.nodes], dtype=float)
        self.link_free = np.array([l.bandwidth for l in scenario.links], dtype=float)
        self.share_free = np.array(scenario.priorities.bandwidth_share, dtype=float).reshape(scenario.L, scenario.K)
        self.queue_free = np.tile(np.array(scenario.priorities.queue_size, dtype=float), (scenario.L, 1))
        self.vnf_free: dict[tuple[int, int], float] = {}

    def copy(self) -> "ResidualState":
        out = ResidualState.__new__(ResidualState)
        out.scenario = self.scenario
        out.node_free = self.node_free.copy()
        out.link_free = self.link_free.copy()
        out.share_free = self.share_free.copy()
        out.queue_free = self.queue_free.copy()
        out.vnf_free = dict(self.vnf_free)
        return out

    def is_nonnegative(self) -> bool:
        return bool(
            (self.node_free >= -EPS).all()
            and (self.link_free >= -EPS).all()
            and (self.share_free >= -EPS).all()
            and (self.queue_free >= -EPS).all()
            and all(v >= -EPS for v in self.vnf_free.values())
        )

    def link_usage(self, inquiry: int, response: int) -> Counter:
        paths = self.scenario.paths
        return Counter(paths[inquiry].links) + Counter(paths[response].links)

    def node_fits(self, r: RequestSpec, v: int) -> bool:
        spare = self.vnf_free.get((r.service, v))
        if spare is not None:
            return r.capacity_req <= spare + EPS
        cap = self.scenario.services[r.service].vnf_capacity
        return cap <= self.node_free[v] + EPS and r.capacity_req <= cap + EPS

    def path_fits(self, r: RequestSpec, links: Iterable[int], k: int, times: int = 1) -> bool:
        for l in links:
            if (
                times * r.bandwidth_req > self.link_free[l] + EPS
                or times * r.bandwidth_req > self.share_free[l, k] + EPS
                or times * r.burstiness > self.queue_free[l, k] + EPS
            ):
                return False
        return True

    def violation(self, r: RequestSpec, a: Assignment) -> str | None:
        """First capacity constraint the assignment would break, or None."""
        if not self.node_fits(r, a.node):
            return "C3" if (r.service, a.node) in self.vnf_free else "C4"
        for l, n in self.link_usage(a.inquiry, a.response).items():
            if n * r.bandwidth_req > self.link_free[l] + EPS:
                return "C10"
            if n * r.burstiness > self.queue_free[l, a.level] + EPS:
                return "C11"
            if n * r.bandwidth_req > self.share_free[l, a.level] + EPS:
                return "C13p"
        return None

    def commit(self, r: RequestSpec, a: Assignment) -> CommitRecord:
        key = (r.service, a.node)
        opened = key not in self.vnf_free
        if opened:
            cap = self.scenario.services[r.service].vnf_capacity
            self.node_free[a.node] -= cap
            self.vnf_free[key] = cap
        self.vnf_free[key] -= r.capacity_req
        for l, n in self.link_usage(a.inquiry, a.response).items():
            self.link_free[l] -= n * r.bandwidth_req
            self.share_free[l, a.level] -= n * r.bandwidth_req
            self.queue_free[l, a.level] -= n * r.burstiness
        return CommitRecord(r.id, a, opened)

    def rollback(self, rec: CommitRecord) -> None:
        r = self.scenario.requests[rec.request]
        a = rec.assignment
        key = (r.service, a.node)
        self.vnf_free[key] += r.capacity_req
        if rec.opened_vnf:
            self.node_free[a.node] += self.vnf_free.pop(key)
        for l, n in self.link_usage(a.inquiry, a.response).items():
            self.link_free[l] += n * r.bandwidth_req
            self.share_free[l, a.level] += n * r.bandwidth_req
            self.queue_free[l, a.level] += n * r.burstiness


# -- delay model ---------------------------------------------------------------


def service_delay(r: RequestSpec) -> float:
    """Computing delay H/C: the packet is processed at the reserved VNF rate."""
    if r.capacity_req <= 0:
        raise ZeroDivisionError(f"request {r.id} has no capacity requirement")
    return r.packet_size / r.capacity_req


def link_delay_bound(priorities: PriorityConfig, link: LinkSpec, k: int) -> float:
    shares = priorities.bandwidth_share[link.id]
    denom = link.bandwidth - sum(shares[:k])
    if denom <= 0:
        raise ConfigurationError(f"link {link.id}: shares of levels < {k} exhaust the bandwidth")
    burst = sum(priorities.queue_size[: k + 1])
    return (burst + priorities.max_packet) / denom + priorities.max_packet / link.bandwidth


def link_users(scenario: Scenario, solution: Solution) -> dict[int, list[int]]:
    """Requests whose inquiry or response path crosses each link (each listed once)."""
    users: dict[int, list[int]] = defaultdict(list)
    paths = scenario.paths
    for r, a in solution.assignments.items():
        for l in set(paths[a.inquiry].links) | set(paths[a.response].links):
            users[l].append(r)
    return users


def link_delay_exact(
    scenario: Scenario,
    solution: Solution,
    r: int,
    k: int,
    l: int,
    users: dict[int, list[int]] | None = None,
) -> float:
    if users is None:
        users = link_users(scenario, solution)
    sharing = users.get(l, ())
    if r not in sharing:
        raise ValueError(f"request {r} does not traverse link {l}")
    reqs = scenario.requests
    level = solution.assignments
    burst = 0.0
    max_lower = 0.0
    higher_rate = 0.0
    for q in sharing:
        kq = level[q].level
        if kq <= k:
            burst += reqs[q].burstiness
        else:
            max_lower = max(max_lower, reqs[q].packet_size)
        if kq < k:
            higher_rate += reqs[q].bandwidth_req
    bw = scenario.links[l].bandwidth
    denom = bw - higher_rate
    if denom <= 0:
        raise SaturationError(f"link {l}: higher-priority traffic saturates level {k}")
    return (burst + max_lower) / denom + reqs[r].packet_size / bw


@dataclass
class DelayReport:
    request: int
    mode: str
    link_terms: list[tuple[str, int, float]]
    compute: float
    total: float


def e2e_delay(
    scenario: Scenario,
    solution: Solution,
    r: int,
    mode: Mode = "exact",
    users: dict[int, list[int]] | None = None,
) -> DelayReport:
    a = solution.assignments[r]
    terms: list[tuple[str, int, float]] = []
    if mode == "exact" and users is None:
        users = link_users(scenario, solution)
    bounds = scenario.delay_bounds if mode == "linearized" else None
    for direction, pid in (("inquiry", a.inquiry), ("response", a.response)):
        for l in scenario.paths[pid].links:
            if mode == "exact":
                d = link_delay_exact(scenario, solution, r, a.level, l, users)
            else:
                d = bounds[l][a.level]
            terms.append((direction, l, d))
    compute = service_delay(scenario.requests[r])
    return DelayReport(r, mode, terms, compute, sum(t[2] for t in terms) + compute)


def option_delay_bound(scenario: Scenario, r: RequestSpec, k: int, inquiry: int, response: int) -> float:
    pd = scenario.path_delay_bounds
    return pd[inquiry][k] + pd[response][k] + service_delay(r)


def option_cost(scenario: Scenario, v: int, inquiry: int, response: int) -> float:
    return scenario.nodes[v].unit_cost + scenario.path_cost[inquiry] + scenario.path_cost[response]


def objective(scenario: Scenario, solution: Solution) -> float:
    return float(
        sum(option_cost(scenario, a.node, a.inquiry, a.response) for a in solution.assignments.values())
    )


def structural_options(scenario: Scenario, r: RequestSpec) -> list[AllocationOption]:
    """All (node, level, inquiry, response) combinations with matching endpoints."""
    out = []
    for v in range(scenario.V):
        inq = scenario.pair_paths(r.entry_node, v)
        resp = scenario.pair_paths(v, r.entry_node)
        if not inq or not resp:
            continue
        for k in range(scenario.K):
            for p in inq:
                for q in resp:
                    out.append(
                        AllocationOption(
                            v, k, p, q, option_cost(scenario, v, p, q), option_delay_bound(scenario, r, k, p, q)
                        )
                    )
    return out


# -- feasibility ---------------------------------------------------------------


@dataclass(frozen=True)
class Violation:
    tag: str
    entity: tuple
    slack: float


@dataclass
class Verdict:
    violations: list[Violation]

    @property
    def feasible(self) -> bool:
        return not self.violations

    def tags(self) -> set[str]:
        return {v.tag for v in self.violations}

    def to_dict(self) -> dict:
        return {
            "feasible": self.feasible,
            "violations": [{"tag": v.tag, "entity": list(v.entity), "slack": v.slack} for v in self.violations],
        }


def check_feasibility(scenario: Scenario, solution: Solution, mode: Mode = "exact") -> Verdict:
    out: list[Violation] = []
    reqs = scenario.requests
    paths = scenario.paths
    V, K = scenario.V, scenario.K
    sound: dict[int, Assignment] = {}
    for r, a in solution.assignments.items():
        if not 0 <= r < scenario.R:
            out.append(Violation("C1", (r,), -1.0))
            continue
        rq = reqs[r]
        ok = True
        if not 0 <= a.node < V:
            out.append(Violation("C1", (r,), -1.0))
            continue
        if (rq.service, a.node) not in solution.vnf_at:
            out.append(Violation("C2", (r, a.node), -1.0))
        if not 0 <= a.level < K:
            out.append(Violation("C5", (r,), -1.0))
            ok = False
        if not 0 <= a.inquiry < len(paths) or (paths[a.inquiry].head, paths[a.inquiry].tail) != (rq.entry_node, a.node):
            out.append(Violation("C6", (r, a.node), -1.0))
            ok = False
        if not 0 <= a.response < len(paths) or (paths[a.response].head, paths[a.response].tail) != (a.node, rq.entry_node):
            out.append(Violation("C7", (r, a.node), -1.0))
            ok = False
        if ok:
            sound[r] = a

    vnf_load: dict[tuple[int, int], float] = defaultdict(float)
    for r, a in solution.assignments.items():
        if 0 <= r < scenario.R and 0 <= a.node < V:
            vnf_load[(reqs[r].service, a.node)] += reqs[r].capacity_req
    for (s, v), load in sorted(vnf_load.items()):
        slack = scenario.services[s].vnf_capacity - load
        if slack < -EPS:
            out.append(Violation("C3", (v, s), slack))
    node_load: dict[int, float] = defaultdict(float)
    for s, v in solution.vnf_at:
        node_load[v] += scenario.services[s].vnf_capacity
    for v, load in sorted(node_load.items()):
        slack = scenario.nodes[v].compute_capacity - load
        if slack < -EPS:
            out.append(Violation("C4", (v,), slack))

    band = np.zeros(scenario.L)
    band_k = np.zeros((scenario.L, K))
    burst_k = np.zeros((scenario.L, K))
    for r, a in sound.items():
        for pid in (a.inquiry, a.response):
            for l in paths[pid].links:
                band[l] += reqs[r].bandwidth_req
                band_k[l, a.level] += reqs[r].bandwidth_req
                burst_k[l, a.level] += reqs[r].burstiness
    for l, link in enumerate(scenario.links):
        if band[l] > link.bandwidth + EPS:
            out.append(Violation("C10", (l,), link.bandwidth - band[l]))
        for k in range(K):
            if burst_k[l, k] > scenario.priorities.queue_size[k] + EPS:
                out.append(Violation("C11", (l, k), scenario.priorities.queue_size[k] - burst_k[l, k]))
            if mode == "linearized" and band_k[l, k] > scenario.priorities.bandwidth_share[l][k] + EPS:
                out.append(Violation("C13p", (l, k), scenario.priorities.bandwidth_share[l][k] - band_k[l, k]))

    if mode == "linearized":
        try:
            scenario.delay_bounds
        except ConfigurationError:
            out.append(Violation("C13pp", (), -1.0))
            return Verdict(out)
    partial = Solution(sound, solution.vnf_at)
    users = link_users(scenario, partial)
    for r in sorted(sound):
        try:
            d = e2e_delay(scenario, partial, r, mode, users).total
        except SaturationError:
            out.append(Violation("C13", (r,), -math.inf))
            continue
        slack = reqs[r].delay_req - d
        if slack < -EPS:
            out.append(Violation("C15", (r,), slack))
    return Verdict(out)


# -- reward and accuracy -------------------------------------------------------


def cost_range(
    scenario: Scenario,
    residual: ResidualState,
    r: RequestSpec,
    nodes: Sequence[int] | None = None,
    inquiry: Sequence[int] | None = None,
    response: Sequence[int] | None = None,
) -> tuple[float, float] | None:
    """Min and max single-request cost over choices that still have free resources.

    Requirements of ``r`` are ignored: a node counts as available when it has
    a VNF of the service with spare capacity or room for a new one, a path
    when none of its links is exhausted.
    """
    nodes = range(scenario.V) if nodes is None else nodes
    inq_pool = set(inquiry) if inquiry is not None else None
    resp_pool = set(response) if response is not None else None
    cap = scenario.services[r.service].vnf_capacity
    paths = scenario.paths

    def open_paths(ids, pool):
        return [
            scenario.path_cost[p]
            for p in ids
            if (pool is None or p in pool) and all(residual.link_free[l] > EPS for l in paths[p].links)
        ]

    lo, hi = math.inf, -math.inf
    for v in nodes:
        spare = residual.vnf_free.get((r.service, v))
        if not ((spare is not None and spare > EPS) or residual.node_free[v] + EPS >= cap):
            continue
        a = open_paths(scenario.pair_paths(r.entry_node, v), inq_pool)
        b = open_paths(scenario.pair_paths(v, r.entry_node), resp_pool)
        if not a or not b:
            continue
        psi = scenario.nodes[v].unit_cost
        lo = min(lo, psi + min(a) + min(b))
        hi = max(hi, psi + max(a) + max(b))
    if lo == math.inf:
        return None
    return lo, hi


def reward_value(cost: float, bounds: tuple[float, float] | None, chi: bool) -> float:
    if not chi:
        return 0.0
    if bounds is None:
        return 100.0
    lo, hi = bounds
    if hi - lo <= EPS:
        return 100.0
    return float(min(100.0, max(0.0, 100.0 * (1.0 - (cost - lo) / (hi - lo)))))


def reward(
    scenario: Scenario,
    residual: ResidualState,
    r: int,
    action: Assignment,
    chi: bool,
    nodes: Sequence[int] | None = None,
    inquiry: Sequence[int] | None = None,
    response: Sequence[int] | None = None,
) -> float:
    """Normalized cost reward in [0, 100]; ``residual`` is the pre-commit state."""
    if not chi:
        return 0.0
    rq = scenario.requests[r]
    bounds = cost_range(scenario, residual, rq, nodes, inquiry, response)
    return reward_value(option_cost(scenario, action.node, action.inquiry, action.response), bounds, chi)


class OracleMismatch(ValueError):
    """The claimed optimum is worse than the evaluated solution."""


def accuracy(eta: float, eta_star: float, tol: float = 1e-9) -> float:
    if eta_star <= 0:
        raise ValueError("optimal cost must be positive")
    if eta < eta_star - tol * max(1.0, abs(eta_star)):
        raise OracleMismatch(f"cost {eta} is below the reference optimum {eta_star}")
    return 1.0 - (eta - eta_star) / eta_star
