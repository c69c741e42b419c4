"""Environment adapter: state vector, pruned action sets, joint-action evaluation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..allocation import (
    EPS,
    Assignment,
    ResidualState,
    option_delay_bound,
    reward,
    service_delay,
)
from ..model import Scenario


@dataclass(frozen=True)
class ActionSets:
    service: int
    nodes: tuple[int, ...]
    levels: tuple[int, ...]
    inquiry: tuple[int, ...]
    response: tuple[int, ...]
    # > 0: path agents pick a cost rank among the paths to the chosen node
    path_rank: int = 0

    def sizes(self) -> tuple[int, int, int, int]:
        return tuple(len(p) for p in self.pools())  # type: ignore[return-value]

    def pools(self) -> tuple[tuple[int, ...], ...]:
        """Action set of each agent (SP, PA, QPS, PPS)."""
        if self.path_rank:
            ranks = tuple(range(self.path_rank))
            return self.nodes, self.levels, ranks, ranks
        return self.nodes, self.levels, self.inquiry, self.response

    def resolve(self, scenario: Scenario, r: int, actions) -> Assignment | None:
        """Assignment named by a joint action; None if a path rank has no path."""
        a_sp, a_pa, a_qps, a_pps = (int(x) for x in actions)
        v = self.nodes[a_sp]
        k = self.levels[a_pa]
        if not self.path_rank:
            return Assignment(v, k, self.inquiry[a_qps], self.response[a_pps])
        e = scenario.requests[r].entry_node
        pc = scenario.path_cost_array
        inq = sorted(scenario.pair_paths(e, v), key=lambda p: (pc[p], p))
        resp = sorted(scenario.pair_paths(v, e), key=lambda p: (pc[p], p))
        if a_qps >= len(inq) or a_pps >= len(resp):
            return None
        return Assignment(v, k, inq[a_qps], resp[a_pps])

    def empty(self) -> bool:
        return not self.nodes

    def to_dict(self) -> dict:
        return {
            "service": self.service,
            "nodes": list(self.nodes),
            "levels": list(self.levels),
            "inquiry": list(self.inquiry),
            "response": list(self.response),
            "path_rank": self.path_rank,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ActionSets":
        return cls(
            d["service"],
            tuple(d["nodes"]),
            tuple(d["levels"]),
            tuple(d["inquiry"]),
            tuple(d["response"]),
            int(d.get("path_rank", 0)),
        )


def prune_action_sets(
    scenario: Scenario, service: int, v_limit: int, p_limit: int, ranked: bool = False
) -> ActionSets:
    """Fixed-size action sets for one service.

    Nodes: the ``v_limit`` cheapest nodes (ties by id) that can host the
    service's VNF and reach at least one of its requests within that request's
    delay bound.  Paths: per (entry, node) pair the ``p_limit`` cheapest paths
    in each direction.  With ``ranked`` the path agents choose among
    ``p_limit`` cost ranks instead of path ids.
    """
    if v_limit < 1 or p_limit < 1:
        raise ValueError("limits must be >= 1")
    reqs = [r for r in scenario.requests if r.service == service]
    entries = sorted({r.entry_node for r in reqs})
    cap = scenario.services[service].vnf_capacity
    pd = scenario.path_delay_array
    pc = scenario.path_cost_array

    def qos_ok(v: int) -> bool:
        if cap > scenario.nodes[v].compute_capacity + EPS:
            return False
        for r in reqs:
            inq = list(scenario.pair_paths(r.entry_node, v))
            resp = list(scenario.pair_paths(v, r.entry_node))
            if not inq or not resp:
                continue
            best = pd[inq].min(axis=0) + pd[resp].min(axis=0) + service_delay(r)
            if (best <= r.delay_req + EPS).any():
                return True
        return False

    nodes = sorted((v for v in range(scenario.V) if qos_ok(v)), key=lambda v: (scenario.nodes[v].unit_cost, v))
    nodes = tuple(nodes[:v_limit])

    def cheapest(ids) -> list[int]:
        return sorted(ids, key=lambda p: (pc[p], p))[:p_limit]

    inquiry: list[int] = []
    response: list[int] = []
    for e in entries:
        for v in nodes:
            inquiry += cheapest(scenario.pair_paths(e, v))
            response += cheapest(scenario.pair_paths(v, e))
    if not nodes:
        return ActionSets(service, (), tuple(range(scenario.K)), (), ())
    return ActionSets(
        service,
        nodes,
        tuple(range(scenario.K)),
        tuple(sorted(set(inquiry))),
        tuple(sorted(set(response))),
        p_limit if ranked else 0,
    )


def state_dim(scenario: Scenario) -> int:
    return 2 * scenario.V + 2 * scenario.L + scenario.K * scenario.L


def occupancy_delay_bounds(scenario: Scenario, residual: ResidualState) -> np.ndarray:
    """Per-(link, level) delay bound given what is already committed, ``[l, k]``.

    Bursts and higher-priority rates are the amounts in use, so the value grows
    with the load and never exceeds the static per-level bound.
    """
    pr = scenario.priorities
    queue = np.asarray(pr.queue_size, dtype=float)
    share = np.asarray(pr.bandwidth_share, dtype=float).reshape(scenario.L, scenario.K)
    bw = np.array([l.bandwidth for l in scenario.links])
    burst_used = queue[None, :] - residual.queue_free
    rate_used = share - residual.share_free
    burst = np.cumsum(burst_used, axis=1)
    higher = np.cumsum(rate_used, axis=1) - rate_used
    H = pr.max_packet
    return (burst + H) / (bw[:, None] - higher) + H / bw[:, None]


def encode_state(scenario: Scenario, residual: ResidualState, raw: bool = False) -> np.ndarray:
    """[free compute | node cost | free bandwidth | link cost | delay bounds (l-major)].

    With ``raw=False`` each block is divided by its nominal maximum.
    """
    psi = np.array([n.unit_cost for n in scenario.nodes])
    xi = np.array([l.unit_cost for l in scenario.links])
    dhat = occupancy_delay_bounds(scenario, residual)
    # compute not yet consumed by requests: free node capacity plus unused VNF capacity
    free = residual.node_free.copy()
    for (_, v), spare in residual.vnf_free.items():
        free[v] += spare
    blocks = [free, psi, residual.link_free, xi, dhat.ravel()]
    if not raw:
        cap = max(n.compute_capacity for n in scenario.nodes)
        bw = max(l.bandwidth for l in scenario.links)
        dmax = float(np.max(scenario.delay_bounds))
        scales = [cap, psi.max(), bw, xi.max(), dmax]
        blocks = [b / s for b, s in zip(blocks, scales)]
    return np.maximum(np.concatenate(blocks), 0.0)


def request_features(scenario: Scenario, r: int, progress: float) -> np.ndarray:
    """Requirements of request ``r`` scaled to about [0, 1], plus episode progress."""
    rq = scenario.requests[r]
    cap = max(sv.vnf_capacity for sv in scenario.services)
    bw = max(l.bandwidth for l in scenario.links)
    q = max(scenario.priorities.queue_size)
    dmax = 2.0 * float(np.max(scenario.path_delay_array))
    return np.array([
        rq.capacity_req / cap,
        10.0 * rq.bandwidth_req / bw,
        10.0 * rq.burstiness / q,
        min(rq.delay_req, dmax) / dmax,
        progress,
    ])


@dataclass
class StepOutcome:
    chi: bool
    beta: float
    reason: str | None
    assignment: Assignment | None


def check_joint(scenario: Scenario, residual: ResidualState, r: int, a: Assignment) -> str | None:
    """Why the joint allocation is infeasible for request r, or None."""
    rq = scenario.requests[r]
    paths = scenario.paths
    if (paths[a.inquiry].head, paths[a.inquiry].tail) != (rq.entry_node, a.node):
        return "C6"
    if (paths[a.response].head, paths[a.response].tail) != (a.node, rq.entry_node):
        return "C7"
    tag = residual.violation(rq, a)
    if tag is not None:
        return tag
    if option_delay_bound(scenario, rq, a.level, a.inquiry, a.response) > rq.delay_req + EPS:
        return "C15"
    return None


def apply_actions(
    scenario: Scenario,
    residual: ResidualState,
    r: int,
    actions: tuple[int, int, int, int],
    sets: ActionSets,
    reward_sets: ActionSets | None = None,
) -> StepOutcome:
    """Evaluate and, when feasible, commit the joint action for request ``r``.

    ``actions`` index into ``sets``; the reward normalization range is taken
    over ``reward_sets`` (defaults to ``sets``).
    """
    if len(actions) != 4:
        raise ValueError("expected four sub-actions (SP, PA, QPS, PPS)")
    a_sp, a_pa, a_qps, a_pps = (int(x) for x in actions)
    for idx, n in zip((a_sp, a_pa, a_qps, a_pps), sets.sizes()):
        if not 0 <= idx < n:
            raise ValueError(f"sub-action {idx} outside its set of {n}")
    if scenario.requests[r].service != sets.service:
        raise ValueError(f"request {r} does not belong to service {sets.service}")
    a = sets.resolve(scenario, r, actions)
    if a is None:
        return StepOutcome(False, 0.0, "no-path", None)
    why = check_joint(scenario, residual, r, a)
    if why is not None:
        return StepOutcome(False, 0.0, why, None)
    rs = reward_sets or sets
    beta = reward(scenario, residual, r, a, True, rs.nodes, rs.inquiry, rs.response)
    residual.commit(scenario.requests[r], a)
    return StepOutcome(True, beta, None, a)


class ServiceEnv:
    """The requests of one service, resolved one at a time in id order."""

    def __init__(self, scenario: Scenario, sets: ActionSets, reward_sets: ActionSets | None = None):
        self.scenario = scenario
        self.sets = sets
        self.reward_sets = reward_sets or sets
        self.requests = [r.id for r in scenario.requests if r.service == sets.service]
        if not self.requests:
            raise ValueError(f"service {sets.service} has no requests")
        self.reset()

    def reset(self) -> None:
        self.residual = ResidualState(self.scenario)
        self.pos = 0

    @property
    def current(self) -> int:
        return self.requests[self.pos]

    @property
    def last(self) -> bool:
        return self.pos == len(self.requests) - 1

    def state(self) -> np.ndarray:
        return encode_state(self.scenario, self.residual)

    def request_features(self) -> np.ndarray:
        r = self.requests[min(self.pos, len(self.requests) - 1)]
        return request_features(self.scenario, r, self.pos / len(self.requests))

    def step(self, actions) -> tuple[StepOutcome, bool]:
        """Resolve the current request; returns the outcome and whether it ended the episode."""
        out = apply_actions(self.scenario, self.residual, self.current, actions, self.sets, self.reward_sets)
        done = self.last
        self.pos += 1
        return out, done
