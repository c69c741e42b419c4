"""Random scenario generation following the simulation-parameter table."""

from __future__ import annotations

import functools
import json
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .model import (
    LinkSpec,
    NodeSpec,
    PriorityConfig,
    RequestSpec,
    Scenario,
    ServiceSpec,
    enumerate_paths,
)


class GenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class RequestRanges:
    capacity: tuple[int, int] = (4, 8)  # discrete uniform, Mbps
    bandwidth: tuple[int, int] = (2, 10)  # discrete uniform, Mbps
    burstiness: tuple[int, int] = (1, 4)  # discrete uniform, kbit
    packet_size: float = 1.0  # kbit
    # continuous uniform, ms; inf means "no delay requirement"
    delay: tuple[float, float] = (10.0, 10.0)


@dataclass(frozen=True)
class GeneratorConfig:
    node_count: int = 9
    tier_count: int = 3
    entry_tier: int = 0
    # number of links ~ U{lo*V, hi*V}
    link_count_range: tuple[int, int] = (3, 5)
    bandwidth_range: tuple[int, int] = (250, 300)
    link_cost_range: tuple[int, int] = (10, 20)
    # "table": capacity 100*U(x, x+1) with x = tier_count - tier (edge largest);
    # "prose": capacity uses x = tier + 1 so the core holds the largest capacity
    node_capacity_rule: str = "table"
    capacity_scale: float = 100.0
    # cost per capacity unit = cost_base ** (x + 1), x = tier_count - tier
    node_cost_rule: str = "table"
    cost_base: float = 10.0
    priority_count: int = 4
    queue_total: float = 200.0
    service_count: int = 3
    vnf_capacity: float = 20.0
    request_count: int = 50
    request_ranges: RequestRanges = field(default_factory=RequestRanges)
    paths_per_pair_limit: int | None = 8
    # None: every node of the entry tier hosts a radio access point
    entry_count: int | None = None
    retry_budget: int = 200

    def validate(self) -> None:
        if self.node_count < 2:
            raise GenerationError("node_count must be >= 2")
        if self.tier_count < 1 or not 0 <= self.entry_tier < self.tier_count:
            raise GenerationError("invalid tier configuration")
        if self.node_count < self.tier_count:
            raise GenerationError("need at least one node per tier")
        for name in ("link_count_range", "bandwidth_range", "link_cost_range"):
            lo, hi = getattr(self, name)
            if lo > hi or lo <= 0:
                raise GenerationError(f"{name} is not a valid interval")
        rr = self.request_ranges
        for name in ("capacity", "bandwidth", "burstiness", "delay"):
            lo, hi = getattr(rr, name)
            if lo > hi or lo <= 0:
                raise GenerationError(f"request_ranges.{name} is not a valid interval")
        if self.node_capacity_rule not in ("table", "prose") or self.node_cost_rule != "table":
            raise GenerationError("unknown capacity/cost rule")
        if self.priority_count < 1 or self.service_count < 1 or self.request_count < 0:
            raise GenerationError("counts must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorConfig":
        d = dict(d)
        rr = d.pop("request_ranges", None)
        for key in ("link_count_range", "bandwidth_range", "link_cost_range"):
            if key in d:
                d[key] = tuple(d[key])
        cfg = cls(**d)
        if rr is not None:
            rr = {k: (tuple(v) if isinstance(v, list) else v) for k, v in rr.items()}
            cfg = replace(cfg, request_ranges=RequestRanges(**rr))
        return cfg


PROFILES: dict[str, GeneratorConfig] = {
    "paper-default": GeneratorConfig(),
    "desk": GeneratorConfig(node_count=8, request_count=20),
}


def load_generator_config(text: str) -> GeneratorConfig:
    d = json.loads(text)
    base = PROFILES[d.pop("profile", "paper-default")]
    merged = {**base.to_dict(), **d}
    if "request_ranges" in d:
        merged["request_ranges"] = {**base.to_dict()["request_ranges"], **d["request_ranges"]}
    return GeneratorConfig.from_dict(merged)


def tier_of(index: int, node_count: int, tier_count: int) -> int:
    """Spread nodes evenly over tiers; lower tiers take the remainder."""
    base, extra = divmod(node_count, tier_count)
    bound = 0
    for t in range(tier_count):
        bound += base + (1 if t < extra else 0)
        if index < bound:
            return t
    raise IndexError(index)


def strongly_connected(n: int, edges: list[tuple[int, int]]) -> bool:
    fwd: list[list[int]] = [[] for _ in range(n)]
    bwd: list[list[int]] = [[] for _ in range(n)]
    for a, b in edges:
        fwd[a].append(b)
        bwd[b].append(a)
    for adj in (fwd, bwd):
        seen = {0}
        stack = [0]
        while stack:
            u = stack.pop()
            for w in adj[u]:
                if w not in seen:
                    seen.add(w)
                    stack.append(w)
        if len(seen) != n:
            return False
    return True


def generate_scenario(cfg: GeneratorConfig, seed: int) -> Scenario:
    cfg.validate()
    rng = np.random.default_rng(seed)
    V = cfg.node_count
    lo, hi = cfg.link_count_range
    max_links = V * (V - 1)
    if hi * V > max_links:
        raise GenerationError(
            f"{V} nodes admit at most {max_links} directed links; U{{{lo * V},{hi * V}}} cannot be met"
        )

    L = int(rng.integers(lo * V, hi * V + 1))
    pairs = [(a, b) for a in range(V) for b in range(V) if a != b]
    for _ in range(cfg.retry_budget):
        chosen = np.sort(rng.choice(len(pairs), size=L, replace=False))
        edges = [pairs[i] for i in chosen]
        if strongly_connected(V, edges):
            break
    else:
        raise GenerationError(f"no strongly connected graph after {cfg.retry_budget} draws")

    bw = rng.integers(cfg.bandwidth_range[0], cfg.bandwidth_range[1] + 1, size=L)
    lc = rng.integers(cfg.link_cost_range[0], cfg.link_cost_range[1] + 1, size=L)
    links = tuple(
        LinkSpec(i, a, b, float(bw[i]), float(lc[i])) for i, (a, b) in enumerate(edges)
    )

    tiers = [tier_of(i, V, cfg.tier_count) for i in range(V)]
    entry_pool = [i for i in range(V) if tiers[i] == cfg.entry_tier]
    if cfg.entry_count is not None:
        entry_pool = entry_pool[: cfg.entry_count]
    if not entry_pool:
        raise GenerationError("no entry nodes")
    u = rng.random(V)
    nodes = []
    for i in range(V):
        x_cost = cfg.tier_count - tiers[i]
        x_cap = x_cost if cfg.node_capacity_rule == "table" else tiers[i] + 1
        nodes.append(
            NodeSpec(
                id=i,
                tier=tiers[i],
                compute_capacity=float(cfg.capacity_scale * (x_cap + u[i])),
                unit_cost=float(cfg.cost_base ** (x_cost + 1)),
                is_entry=i in entry_pool,
            )
        )

    K = cfg.priority_count
    priorities = PriorityConfig(
        level_count=K,
        queue_size=tuple([cfg.queue_total / K] * K),
        bandwidth_share=tuple(tuple([l.bandwidth / K] * K) for l in links),
        max_packet=cfg.request_ranges.packet_size,
    )
    services = tuple(ServiceSpec(s, cfg.vnf_capacity) for s in range(cfg.service_count))

    rr = cfg.request_ranges
    requests = []
    for r in range(cfg.request_count):
        entry = entry_pool[int(rng.integers(len(entry_pool)))]
        service = int(rng.integers(cfg.service_count))
        cap = int(rng.integers(rr.capacity[0], rr.capacity[1] + 1))
        band = int(rng.integers(rr.bandwidth[0], rr.bandwidth[1] + 1))
        burst = int(rng.integers(rr.burstiness[0], rr.burstiness[1] + 1))
        delay = float(rng.uniform(rr.delay[0], rr.delay[1])) if rr.delay[0] < rr.delay[1] else float(rr.delay[0])
        requests.append(
            RequestSpec(r, entry, service, float(cap), float(band), delay, float(burst), rr.packet_size)
        )

    paths = enumerate_paths(V, links, cfg.paths_per_pair_limit)
    return Scenario(
        nodes=tuple(nodes),
        links=links,
        paths=paths,
        priorities=priorities,
        services=services,
        requests=tuple(requests),
        rng_seed=seed,
        tier_count=cfg.tier_count,
    )


@functools.lru_cache(maxsize=8)
def _tier_topology(n: int, priority_count: int):
    tiers = 3
    V = tiers * n
    edges: list[tuple[int, int, float, float]] = []  # (src, dst, bandwidth, cost)
    fast, mesh, slow = 40_000.0, 300.0, 100.0
    for t in range(tiers):
        for a in range(n):
            for b in range(n):
                if a != b:
                    edges.append((t * n + a, t * n + b, fast if t == 0 else mesh, 10.0))
    for t in range(tiers - 1):
        for i in range(n):
            edges.append((t * n + i, (t + 1) * n + i, slow, 15.0))
            edges.append(((t + 1) * n + i, t * n + i, slow, 15.0))
    edges.sort()
    links = tuple(LinkSpec(i, a, b, bw, c) for i, (a, b, bw, c) in enumerate(edges))
    K = priority_count
    queue_total = 200.0
    priorities = PriorityConfig(
        level_count=K,
        queue_size=tuple([queue_total / K] * K),
        bandwidth_share=tuple(tuple([l.bandwidth / K] * K) for l in links),
        max_packet=1.0,
    )
    return links, enumerate_paths(V, links, 8), priorities


def tier_signature_scenario(
    seed: int,
    nodes_per_tier: int = 10,
    request_count: int = 20,
    delay_req: float = 0.5,
    node_capacity: float = 1000.0,
    vnf_capacity: float = 20.0,
    priority_count: int = 4,
) -> Scenario:
    """Three equal-capacity tiers where only tier-0 hosts can meet a tight delay.

    Each tier is a full mesh.  Tier-0 links are very fast, the links joining
    tiers (node i of one tier to node i of the next, both ways) are slow enough
    that a single traversal breaks ``delay_req`` at any priority.  Requests all
    enter at node 0 and ask for one service.
    """
    n = nodes_per_tier
    tiers = 3
    V = tiers * n
    links, paths, priorities = _tier_topology(n, priority_count)
    nodes = tuple(
        NodeSpec(i, i // n, node_capacity, 10.0 ** (tiers - i // n + 1), is_entry=(i == 0)) for i in range(V)
    )
    rr = RequestRanges()
    rng = np.random.default_rng(seed)
    requests = []
    for r in range(request_count):
        cap = int(rng.integers(rr.capacity[0], rr.capacity[1] + 1))
        band = int(rng.integers(rr.bandwidth[0], rr.bandwidth[1] + 1))
        burst = int(rng.integers(rr.burstiness[0], rr.burstiness[1] + 1))
        requests.append(RequestSpec(r, 0, 0, float(cap), float(band), delay_req, float(burst), 1.0))
    return Scenario(
        nodes=nodes,
        links=links,
        paths=paths,
        priorities=priorities,
        services=(ServiceSpec(0, vnf_capacity),),
        requests=tuple(requests),
        rng_seed=seed,
        tier_count=tiers,
    )
