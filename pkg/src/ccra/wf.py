"""Water-filling heuristic: serve the most urgent request first, cheapest option wins."""

from __future__ import annotations

import math
import time
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .allocation import (
    EPS,
    AllocationOption,
    ResidualState,
    Solution,
    service_delay,
)
from .model import RequestSpec, Scenario


@dataclass
class WFResult:
    solution: Solution
    accepted: list[int]
    rejected: dict[int, str]  # request -> reason tag
    chosen: dict[int, AllocationOption] = field(default_factory=dict)
    runtime_ms: float = 0.0

    @property
    def supported(self) -> int:
        return len(self.accepted)

    def to_dict(self) -> dict:
        return {
            "solution": self.solution.to_dict(),
            "accepted": sorted(self.accepted),
            "rejected": [{"request": r, "reason": why} for r, why in sorted(self.rejected.items())],
        }


def _option_table(scenario: Scenario, residual: ResidualState, r: RequestSpec):
    """Vectorized check of every (node, inquiry, response, level) choice of ``r``.

    Returns (nodes, inquiry ids, response ids, cost per row, delay ``[row, k]``,
    ok mask ``[row, k]``, tally of failure tags).  Each infeasible choice is
    charged to the first constraint it breaks.
    """
    vs, ps, qs, U = scenario.entry_triples[r.entry_node]
    K = scenario.K
    why: Counter = Counter()
    node_ok = np.array([residual.node_fits(r, v) for v in range(scenario.V)])
    for v in np.flatnonzero(~node_ok):
        n = int(np.count_nonzero(vs == v)) * K
        if n:
            why["C3" if (r.service, int(v)) in residual.vnf_free else "C4"] += n
    live = node_ok[vs]
    # traversal counts are small integers: split them into one indicator
    # matrix per count, then a link is "bad" for a row when the demand it
    # would carry exceeds what is left
    c10 = np.zeros(len(vs), dtype=bool)
    c11 = np.zeros((len(vs), K), dtype=bool)
    c13 = np.zeros((len(vs), K), dtype=bool)
    for n, Un in scenario.entry_count_layers[r.entry_node]:
        c10 |= Un @ (n * r.bandwidth_req > residual.link_free + EPS) > 0
        c11 |= Un @ (n * r.burstiness > residual.queue_free + EPS) > 0
        c13 |= Un @ (n * r.bandwidth_req > residual.share_free + EPS) > 0
    pd = scenario.path_delay_array
    delay = pd[ps] + pd[qs] + service_delay(r)
    c15 = delay > r.delay_req + EPS
    live2 = live[:, None]
    c10 = np.broadcast_to((c10 & live)[:, None], (len(vs), K))
    c11 = c11 & live2 & ~c10
    c13 = c13 & live2 & ~c10 & ~c11
    c15 = c15 & live2 & ~c10 & ~c11 & ~c13
    for tag, mask in (("C10", c10), ("C11", c11), ("C13p", c13), ("C15", c15)):
        n = int(np.count_nonzero(mask))
        if n:
            why[tag] += n
    ok = live2 & ~(c10 | c11 | c13 | c15)
    pc = scenario.path_cost_array
    psi = np.array([n.unit_cost for n in scenario.nodes])
    cost = psi[vs] + pc[ps] + pc[qs]
    return vs, ps, qs, cost, delay, ok, why


def _scan(scenario: Scenario, residual: ResidualState, r: RequestSpec, keep_all: bool):
    vs, ps, qs, cost, delay, ok, why = _option_table(scenario, residual, r)
    options: list[AllocationOption] = []
    best = None
    if keep_all:
        for v in np.unique(vs):
            rows = np.flatnonzero(vs == v)
            for k in range(scenario.K - 1, -1, -1):
                for t in rows[ok[rows, k]]:
                    options.append(
                        AllocationOption(int(v), k, int(ps[t]), int(qs[t]), float(cost[t]), float(delay[t, k]))
                    )
    elif ok.any():
        t_idx, k_idx = np.nonzero(ok)
        c = cost[t_idx]
        sel = np.flatnonzero(c == c.min())
        # lexicographic (v, k, p, q) among the cheapest
        order = np.lexsort((qs[t_idx[sel]], ps[t_idx[sel]], k_idx[sel], vs[t_idx[sel]]))
        pick = sel[order[0]]
        t, k = int(t_idx[pick]), int(k_idx[pick])
        best = AllocationOption(int(vs[t]), k, int(ps[t]), int(qs[t]), float(cost[t]), float(delay[t, k]))
    return options, best, why


def screen_options(
    scenario: Scenario, residual: ResidualState, r: RequestSpec
) -> tuple[list[AllocationOption], Counter]:
    """Feasible options for ``r`` plus a tally of why the others fail.

    Options are listed by node, then from the lowest priority level upward.
    """
    options, _, why = _scan(scenario, residual, r, keep_all=True)
    return options, why


def cheapest_option(
    scenario: Scenario, residual: ResidualState, r: RequestSpec
) -> tuple[AllocationOption | None, Counter]:
    """argmin of cost over the feasible options, ties by (node, level, paths)."""
    _, best, why = _scan(scenario, residual, r, keep_all=False)
    return best, why


def feasible_allocations(scenario: Scenario, residual: ResidualState, r: RequestSpec) -> list[AllocationOption]:
    """Every (node, level, inquiry, response) option ``r`` can take right now."""
    return screen_options(scenario, residual, r)[0]


def rejection_reason(why: Counter) -> str:
    if not why:
        return "no-path"
    top = max(why.values())
    return min(tag for tag, n in why.items() if n == top)


def wf_solve(scenario: Scenario, clock=time.perf_counter) -> WFResult:
    t0 = clock()
    residual = ResidualState(scenario)
    order = sorted(range(scenario.R), key=lambda i: (scenario.requests[i].delay_req, i))
    chosen: dict[int, AllocationOption] = {}
    rejected: dict[int, str] = {}
    for i in order:
        r = scenario.requests[i]
        best, why = cheapest_option(scenario, residual, r)
        if best is None:
            rejected[i] = rejection_reason(why)
            continue
        residual.commit(r, best.assignment)
        chosen[i] = best
    solution = Solution.from_assignments(scenario, {i: o.assignment for i, o in chosen.items()})
    return WFResult(solution, sorted(chosen), rejected, dict(sorted(chosen.items())), (clock() - t0) * 1000.0)


def accepted_cost_mean(result: WFResult) -> float:
    if not result.chosen:
        return math.nan
    return sum(o.cost for o in result.chosen.values()) / len(result.chosen)
