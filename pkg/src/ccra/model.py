"""Problem-instance data model: nodes, links, paths, priorities, services, requests.

Conventions used throughout the package:

* ids are 0-based and equal to the position of the entity in its tuple;
* tier 0 is the edge tier (entry nodes live there);
* priority level 0 is the *highest* priority (lower index = more urgent);
* bandwidth and capacity are in Mbps, burst and packet sizes in kbit, so every
  delay formula yields milliseconds.
"""

from __future__ import annotations

import hashlib
import heapq
import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence


class ScenarioError(ValueError):
    """Raised when a scenario violates a structural invariant."""


@dataclass(frozen=True)
class NodeSpec:
    id: int
    tier: int
    compute_capacity: float
    unit_cost: float
    is_entry: bool = False


@dataclass(frozen=True)
class LinkSpec:
    id: int
    src: int
    dst: int
    bandwidth: float
    unit_cost: float


@dataclass(frozen=True)
class PathSpec:
    id: int
    head: int
    tail: int
    links: tuple[int, ...]


@dataclass(frozen=True)
class PriorityConfig:
    level_count: int
    queue_size: tuple[float, ...]
    # bandwidth_share[l][k] caps the aggregate rate of level k on link l
    bandwidth_share: tuple[tuple[float, ...], ...]
    max_packet: float


@dataclass(frozen=True)
class ServiceSpec:
    id: int
    vnf_capacity: float


@dataclass(frozen=True)
class RequestSpec:
    id: int
    entry_node: int
    service: int
    capacity_req: float
    bandwidth_req: float
    delay_req: float
    burstiness: float
    packet_size: float


@dataclass(frozen=True)
class Scenario:
    nodes: tuple[NodeSpec, ...]
    links: tuple[LinkSpec, ...]
    paths: tuple[PathSpec, ...]
    priorities: PriorityConfig
    services: tuple[ServiceSpec, ...]
    requests: tuple[RequestSpec, ...]
    rng_seed: int = 0
    tier_count: int = field(default=0)

    @property
    def V(self) -> int:
        return len(self.nodes)

    @property
    def L(self) -> int:
        return len(self.links)

    @property
    def K(self) -> int:
        return self.priorities.level_count

    @property
    def S(self) -> int:
        return len(self.services)

    @property
    def R(self) -> int:
        return len(self.requests)

    @cached_property
    def paths_by_pair(self) -> dict[tuple[int, int], tuple[int, ...]]:
        out: dict[tuple[int, int], list[int]] = {}
        for p in self.paths:
            out.setdefault((p.head, p.tail), []).append(p.id)
        return {key: tuple(ids) for key, ids in out.items()}

    @cached_property
    def path_cost(self) -> tuple[float, ...]:
        return tuple(sum(self.links[l].unit_cost for l in p.links) for p in self.paths)

    @cached_property
    def delay_bounds(self) -> tuple[tuple[float, ...], ...]:
        """Per-(link, level) delay upper bounds, indexed ``[l][k]``."""
        from .allocation import link_delay_bound

        return tuple(
            tuple(link_delay_bound(self.priorities, link, k) for k in range(self.K))
            for link in self.links
        )

    @cached_property
    def path_delay_bounds(self) -> tuple[tuple[float, ...], ...]:
        """Sum of per-link bounds along each path, indexed ``[p][k]``."""
        bounds = self.delay_bounds
        return tuple(
            tuple(sum(bounds[l][k] for l in p.links) for k in range(self.K))
            for p in self.paths
        )

    @cached_property
    def path_link_counts(self):
        """Matrix ``[p, l]`` = how many times path p traverses link l."""
        import numpy as np

        m = np.zeros((len(self.paths), self.L))
        for p in self.paths:
            for l in p.links:
                m[p.id, l] += 1
        return m

    @cached_property
    def path_delay_array(self):
        import numpy as np

        return np.array(self.path_delay_bounds, dtype=float).reshape(len(self.paths), self.K)

    @cached_property
    def path_cost_array(self):
        import numpy as np

        return np.array(self.path_cost, dtype=float)

    @cached_property
    def entry_triples(self) -> dict:
        """Per entry node: arrays (node, inquiry, response, link traversals).

        Rows are every (v, p, q) with p from the entry to v and q back,
        sorted by (v, p, q); the last array is ``[row, link]`` counts.
        """
        import numpy as np

        M = self.path_link_counts
        out = {}
        for e in self.entry_nodes() or range(self.V):
            rows = [
                (v, p, q)
                for v in range(self.V)
                for p in self.pair_paths(e, v)
                for q in self.pair_paths(v, e)
            ]
            arr = np.array(rows, dtype=int).reshape(-1, 3)
            out[e] = (arr[:, 0], arr[:, 1], arr[:, 2], M[arr[:, 1]] + M[arr[:, 2]])
        return out

    @cached_property
    def entry_count_layers(self) -> dict:
        """``entry_triples`` traversal counts split into 0/1 matrices per count value."""
        import numpy as np

        out = {}
        for e, (_, _, _, U) in self.entry_triples.items():
            out[e] = [(int(n), (U == n).astype(float)) for n in np.unique(U) if n > 0]
        return out

    def pair_paths(self, head: int, tail: int) -> tuple[int, ...]:
        return self.paths_by_pair.get((head, tail), ())

    def entry_nodes(self) -> list[int]:
        return [n.id for n in self.nodes if n.is_entry]

    def digest(self) -> str:
        blob = json.dumps(scenario_to_dict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def path_contains(scenario: Scenario, path_id: int, link_id: int) -> bool:
    """delta_{p,l}: whether path ``path_id`` traverses link ``link_id``."""
    if not 0 <= path_id < len(scenario.paths):
        raise KeyError(f"unknown path {path_id}")
    if not 0 <= link_id < len(scenario.links):
        raise KeyError(f"unknown link {link_id}")
    return link_id in scenario.paths[path_id].links


def enumerate_paths(
    node_count: int,
    links: Sequence[LinkSpec],
    per_pair_limit: int | None = 8,
) -> tuple[PathSpec, ...]:
    """Loop-free paths for every ordered node pair, up to ``per_pair_limit`` each.

    Paths of a pair are ordered by (total link cost, link count, link ids).  A
    best-first search over partial paths pops complete paths in exactly that
    order because every extension strictly increases the cost.  ``None`` as the
    limit means all loop-free paths.
    """
    if per_pair_limit is not None and per_pair_limit < 1:
        raise ValueError("per_pair_limit must be >= 1")
    out_links: list[list[LinkSpec]] = [[] for _ in range(node_count)]
    for link in links:
        out_links[link.src].append(link)

    found: list[tuple[int, int, tuple[int, ...]]] = []
    for src in range(node_count):
        counts = [0] * node_count
        wanted = node_count - 1
        full = 0
        heap: list[tuple[float, int, tuple[int, ...], int, frozenset[int]]] = [
            (0.0, 0, (), src, frozenset([src]))
        ]
        while heap:
            cost, n_links, ids, at, seen = heapq.heappop(heap)
            if ids:
                if per_pair_limit is None or counts[at] < per_pair_limit:
                    counts[at] += 1
                    found.append((src, at, ids))
                    if per_pair_limit is not None and counts[at] == per_pair_limit:
                        full += 1
                        if full == wanted:
                            break
            for link in out_links[at]:
                if link.dst in seen:
                    continue
                heapq.heappush(
                    heap,
                    (cost + link.unit_cost, n_links + 1, ids + (link.id,), link.dst, seen | {link.dst}),
                )
    return tuple(
        PathSpec(id=i, head=h, tail=t, links=ids) for i, (h, t, ids) in enumerate(found)
    )


def validate_scenario(scenario: Scenario) -> list[str]:
    """Return a list of invariant violations (empty when the scenario is valid)."""
    problems: list[str] = []
    V, K = scenario.V, scenario.K
    for i, n in enumerate(scenario.nodes):
        if n.id != i:
            problems.append(f"node {i}: id mismatch")
        if n.compute_capacity < 0:
            problems.append(f"node {i}: negative capacity")
        if n.unit_cost <= 0:
            problems.append(f"node {i}: non-positive cost")
        if scenario.tier_count and not 0 <= n.tier < scenario.tier_count:
            problems.append(f"node {i}: tier out of range")
    for i, l in enumerate(scenario.links):
        if l.id != i:
            problems.append(f"link {i}: id mismatch")
        if not (0 <= l.src < V and 0 <= l.dst < V) or l.src == l.dst:
            problems.append(f"link {i}: bad endpoints")
        if l.bandwidth <= 0 or l.unit_cost <= 0:
            problems.append(f"link {i}: non-positive bandwidth or cost")
    for i, p in enumerate(scenario.paths):
        if p.id != i:
            problems.append(f"path {i}: id mismatch")
        if not p.links:
            problems.append(f"path {i}: empty")
            continue
        at = p.head
        visited = {at}
        for lid in p.links:
            if not 0 <= lid < scenario.L or scenario.links[lid].src != at:
                problems.append(f"path {i}: links do not chain")
                break
            at = scenario.links[lid].dst
            if at in visited:
                problems.append(f"path {i}: repeats node {at}")
                break
            visited.add(at)
        else:
            if at != p.tail:
                problems.append(f"path {i}: does not end at tail")
    pr = scenario.priorities
    if pr.level_count < 1 or len(pr.queue_size) != K:
        problems.append("priorities: bad level count")
    if any(q <= 0 for q in pr.queue_size):
        problems.append("priorities: non-positive queue size")
    if len(pr.bandwidth_share) != scenario.L:
        problems.append("priorities: bandwidth_share must have one row per link")
    else:
        for l, row in zip(scenario.links, pr.bandwidth_share):
            if len(row) != K or sum(row) > l.bandwidth * (1 + 1e-12):
                problems.append(f"priorities: shares of link {l.id} exceed its bandwidth")
    for i, s in enumerate(scenario.services):
        if s.id != i or s.vnf_capacity <= 0:
            problems.append(f"service {i}: bad spec")
    for i, r in enumerate(scenario.requests):
        if r.id != i:
            problems.append(f"request {i}: id mismatch")
        if not 0 <= r.entry_node < V or not scenario.nodes[r.entry_node].is_entry:
            problems.append(f"request {i}: entry node is not an entry")
            continue
        if not 0 <= r.service < scenario.S:
            problems.append(f"request {i}: unknown service")
        if min(r.capacity_req, r.bandwidth_req, r.burstiness, r.packet_size, r.delay_req) <= 0:
            problems.append(f"request {i}: non-positive requirement")
        if r.packet_size > pr.max_packet:
            problems.append(f"request {i}: packet larger than max_packet")
        if not any(
            scenario.pair_paths(r.entry_node, v) and scenario.pair_paths(v, r.entry_node)
            for v in range(V)
        ):
            problems.append(f"request {i}: no candidate path pair")
    return problems


# -- JSON ---------------------------------------------------------------------

SCHEMA_VERSION = 1


def scenario_to_dict(s: Scenario) -> dict:
    return {
        "schema": SCHEMA_VERSION,
        "rng_seed": s.rng_seed,
        "tier_count": s.tier_count,
        "nodes": [
            {
                "id": n.id,
                "tier": n.tier,
                "compute_capacity": n.compute_capacity,
                "unit_cost": n.unit_cost,
                "is_entry": n.is_entry,
            }
            for n in s.nodes
        ],
        "links": [
            {"id": l.id, "from": l.src, "to": l.dst, "bandwidth": l.bandwidth, "unit_cost": l.unit_cost}
            for l in s.links
        ],
        "paths": [{"id": p.id, "head": p.head, "tail": p.tail, "links": list(p.links)} for p in s.paths],
        "priorities": {
            "level_count": s.priorities.level_count,
            "queue_size": list(s.priorities.queue_size),
            "bandwidth_share": [
                {"link": l, "per_level": list(row)} for l, row in enumerate(s.priorities.bandwidth_share)
            ],
            "max_packet": s.priorities.max_packet,
        },
        "services": [{"id": sv.id, "vnf_capacity": sv.vnf_capacity} for sv in s.services],
        "requests": [
            {
                "id": r.id,
                "entry_node": r.entry_node,
                "service": r.service,
                "capacity_req": r.capacity_req,
                "bandwidth_req": r.bandwidth_req,
                "delay_req": r.delay_req,
                "burstiness": r.burstiness,
                "packet_size": r.packet_size,
            }
            for r in s.requests
        ],
    }


def _by_id(items: Iterable[dict], kind: str) -> list[dict]:
    items = sorted(items, key=lambda d: d["id"])
    for i, d in enumerate(items):
        if d["id"] != i:
            raise ScenarioError(f"{kind} ids must be 0..n-1 without gaps")
    return items


def scenario_from_dict(d: dict) -> Scenario:
    if d.get("schema", SCHEMA_VERSION) != SCHEMA_VERSION:
        raise ScenarioError(f"unsupported scenario schema {d.get('schema')}")
    nodes = tuple(
        NodeSpec(n["id"], n["tier"], float(n["compute_capacity"]), float(n["unit_cost"]), bool(n["is_entry"]))
        for n in _by_id(d["nodes"], "node")
    )
    links = tuple(
        LinkSpec(l["id"], l["from"], l["to"], float(l["bandwidth"]), float(l["unit_cost"]))
        for l in _by_id(d["links"], "link")
    )
    paths = tuple(
        PathSpec(p["id"], p["head"], p["tail"], tuple(p["links"])) for p in _by_id(d["paths"], "path")
    )
    pr = d["priorities"]
    shares = sorted(pr["bandwidth_share"], key=lambda e: e["link"])
    priorities = PriorityConfig(
        level_count=int(pr["level_count"]),
        queue_size=tuple(float(q) for q in pr["queue_size"]),
        bandwidth_share=tuple(tuple(float(x) for x in e["per_level"]) for e in shares),
        max_packet=float(pr["max_packet"]),
    )
    services = tuple(ServiceSpec(s["id"], float(s["vnf_capacity"])) for s in _by_id(d["services"], "service"))
    requests = tuple(
        RequestSpec(
            r["id"],
            r["entry_node"],
            r["service"],
            float(r["capacity_req"]),
            float(r["bandwidth_req"]),
            float(r["delay_req"]),
            float(r["burstiness"]),
            float(r["packet_size"]),
        )
        for r in _by_id(d["requests"], "request")
    )
    scenario = Scenario(
        nodes, links, paths, priorities, services, requests,
        rng_seed=int(d.get("rng_seed", 0)), tier_count=int(d.get("tier_count", 0)),
    )
    problems = validate_scenario(scenario)
    if problems:
        raise ScenarioError("; ".join(problems[:5]))
    return scenario


def dump_scenario(s: Scenario) -> str:
    return json.dumps(scenario_to_dict(s), indent=1, sort_keys=True) + "\n"


def load_scenario(text: str) -> Scenario:
    return scenario_from_dict(json.loads(text))


def replace_requests(s: Scenario, requests: Sequence[RequestSpec]) -> Scenario:
    """Copy of ``s`` with a different request list (ids are renumbered)."""
    from dataclasses import replace

    renumbered = tuple(replace(r, id=i) for i, r in enumerate(requests))
    return Scenario(s.nodes, s.links, s.paths, s.priorities, s.services, renumbered, s.rng_seed, s.tier_count)
