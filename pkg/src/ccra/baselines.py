"""Reference allocation strategies.

Every strategy picks one option per request by its own rule and then commits
it only if it is feasible against the residual state (capacities and
linearized delay); otherwise the request is rejected.  R, CM and DM choose from
all structurally valid options, so their picks can be infeasible; FSA, BSA and
CEP choose among feasible options only.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .allocation import (
    EPS,
    AllocationOption,
    ResidualState,
    Solution,
    option_cost,
    option_delay_bound,
)
from .model import RequestSpec, Scenario
from .wf import WFResult, _option_table, rejection_reason


class Kind(str, Enum):
    R = "r"
    CM = "cm"
    DM = "dm"
    FSA = "fsa"
    BSA = "bsa"
    CEP = "cep"


@dataclass(frozen=True)
class BaselineStrategy:
    kind: Kind
    seed: int = 0

    @classmethod
    def parse(cls, name: str, seed: int = 0) -> "BaselineStrategy":
        try:
            return cls(Kind(name.lower()), seed)
        except ValueError:
            raise ValueError(f"unknown baseline {name!r}; expected one of {[k.value for k in Kind]}") from None


def _structural(scenario: Scenario, r: RequestSpec):
    vs, ps, qs, _ = scenario.entry_triples[r.entry_node]
    return vs, ps, qs


def _commit_or_reject(
    scenario: Scenario, residual: ResidualState, r: RequestSpec, opt: AllocationOption | None
) -> str | None:
    """Commit ``opt`` if feasible; return the rejection tag otherwise."""
    if opt is None:
        return "no-option"
    tag = residual.violation(r, opt.assignment)
    if tag is None and opt.delay > r.delay_req + EPS:
        tag = "C15"
    if tag is None:
        residual.commit(r, opt.assignment)
    return tag


def _option(scenario: Scenario, r: RequestSpec, v: int, k: int, p: int, q: int) -> AllocationOption:
    return AllocationOption(v, k, p, q, option_cost(scenario, v, p, q), option_delay_bound(scenario, r, k, p, q))


def _feasible_rows(scenario: Scenario, residual: ResidualState, r: RequestSpec):
    vs, ps, qs, cost, delay, ok, why = _option_table(scenario, residual, r)
    t_idx, k_idx = np.nonzero(ok)
    return vs, ps, qs, cost, t_idx, k_idx, why


def _pick_random(scenario, r, rng) -> AllocationOption:
    vs, ps, qs = _structural(scenario, r)
    n = len(vs) * scenario.K
    i = int(rng.integers(n))
    t, k = divmod(i, scenario.K)
    return _option(scenario, r, int(vs[t]), k, int(ps[t]), int(qs[t]))


def _pick_cm(scenario, r) -> AllocationOption:
    vs, ps, qs = _structural(scenario, r)
    psi = np.array([n.unit_cost for n in scenario.nodes])
    v = min(np.unique(vs), key=lambda u: (psi[u], u))
    rows = np.flatnonzero(vs == v)
    pc = scenario.path_cost_array
    t = min(rows, key=lambda t: (pc[ps[t]] + pc[qs[t]], ps[t], qs[t]))
    # lowest priority level: the choice does not look at delay
    return _option(scenario, r, int(v), scenario.K - 1, int(ps[t]), int(qs[t]))


def _pick_dm(scenario, r) -> AllocationOption:
    vs, ps, qs = _structural(scenario, r)
    pd = scenario.path_delay_array
    pc = scenario.path_cost_array
    psi = np.array([n.unit_cost for n in scenario.nodes])
    delay = pd[ps] + pd[qs]  # [row, k]
    cost = psi[vs] + pc[ps] + pc[qs]
    T, K = delay.shape
    t_idx = np.repeat(np.arange(T), K)
    k_idx = np.tile(np.arange(K), T)
    i = int(np.lexsort((qs[t_idx], ps[t_idx], k_idx, vs[t_idx], cost[t_idx], delay.ravel()))[0])
    t, k = int(t_idx[i]), int(k_idx[i])
    return _option(scenario, r, int(vs[t]), k, int(ps[t]), int(qs[t]))


def _pick_feasible(scenario, residual, r, kind: Kind, rng):
    vs, ps, qs, cost, t_idx, k_idx, why = _feasible_rows(scenario, residual, r)
    if t_idx.size == 0:
        return None, why
    if kind is Kind.FSA:
        i = int(rng.integers(t_idx.size))
    elif kind is Kind.BSA:
        # server with the most remaining compute (spare VNF capacity counts)
        remaining = residual.node_free.copy()
        for (s, v), spare in residual.vnf_free.items():
            if s == r.service:
                remaining[v] += spare
        rv = remaining[vs[t_idx]]
        keys = (qs[t_idx], ps[t_idx], k_idx, vs[t_idx], cost[t_idx], -rv)
        i = int(np.lexsort(keys)[0])
    elif kind is Kind.CEP:
        pc = scenario.path_cost_array
        link_cost = pc[ps[t_idx]] + pc[qs[t_idx]]
        i = int(np.lexsort((qs[t_idx], ps[t_idx], k_idx, vs[t_idx], cost[t_idx], link_cost))[0])
    else:
        raise ValueError(kind)
    t, k = int(t_idx[i]), int(k_idx[i])
    return _option(scenario, r, int(vs[t]), k, int(ps[t]), int(qs[t])), why


def baseline_solve(scenario: Scenario, strategy: BaselineStrategy, clock=time.perf_counter) -> WFResult:
    t0 = clock()
    rng = np.random.default_rng(strategy.seed)
    residual = ResidualState(scenario)
    kind = strategy.kind
    order = list(range(scenario.R))
    if kind in (Kind.FSA, Kind.BSA):
        order.sort(key=lambda i: (-scenario.requests[i].capacity_req, i))
    chosen: dict[int, AllocationOption] = {}
    rejected: dict[int, str] = {}
    for i in order:
        r = scenario.requests[i]
        if not scenario.entry_triples[r.entry_node][0].size:
            rejected[i] = "no-path"
            continue
        if kind is Kind.R:
            opt = _pick_random(scenario, r, rng)
        elif kind is Kind.CM:
            opt = _pick_cm(scenario, r)
        elif kind is Kind.DM:
            opt = _pick_dm(scenario, r)
        else:
            opt, why = _pick_feasible(scenario, residual, r, kind, rng)
            if opt is None:
                rejected[i] = rejection_reason(why)
                continue
        tag = _commit_or_reject(scenario, residual, r, opt)
        if tag is None:
            chosen[i] = opt
        else:
            rejected[i] = tag
    solution = Solution.from_assignments(scenario, {i: o.assignment for i, o in chosen.items()})
    return WFResult(solution, sorted(chosen), dict(sorted(rejected.items())), dict(sorted(chosen.items())), (clock() - t0) * 1000.0)
