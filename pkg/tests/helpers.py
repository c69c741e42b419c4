"""Small hand-built scenarios shared by the tests."""

from __future__ import annotations

from ccra.generator import GeneratorConfig, RequestRanges, generate_scenario
from ccra.model import (
    LinkSpec,
    NodeSpec,
    PriorityConfig,
    RequestSpec,
    Scenario,
    ServiceSpec,
    enumerate_paths,
)


def build(
    nodes,
    links,
    requests,
    K=2,
    queue=50.0,
    share=None,
    vnf_capacity=20.0,
    services=1,
    max_packet=1.0,
    path_limit=None,
) -> Scenario:
    """``nodes``: (capacity, cost, is_entry); ``links``: (src, dst, bandwidth, cost);
    ``requests``: (entry, service, C, B, D, T, H)."""
    ns = tuple(NodeSpec(i, 0, float(c), float(psi), bool(e)) for i, (c, psi, e) in enumerate(nodes))
    ls = tuple(LinkSpec(i, s, d, float(b), float(x)) for i, (s, d, b, x) in enumerate(links))
    paths = enumerate_paths(len(ns), ls, path_limit)
    shares = tuple(tuple([float(share if share is not None else l.bandwidth / K)] * K) for l in ls)
    pr = PriorityConfig(K, tuple([float(queue)] * K), shares, float(max_packet))
    svcs = tuple(ServiceSpec(i, float(vnf_capacity)) for i in range(services))
    reqs = tuple(
        RequestSpec(i, int(e), int(s), float(C), float(B), float(D), float(T), float(H))
        for i, (e, s, C, B, D, T, H) in enumerate(requests)
    )
    return Scenario(ns, ls, paths, pr, svcs, reqs)


def pair(requests=((0, 0, 4, 10, 100.0, 2, 1),), **kw) -> Scenario:
    """Entry node 0 (expensive) and a cheap node 1, one link each way."""
    return build(
        [(100, 1000, True), (100, 10, False)],
        [(0, 1, 100, 10), (1, 0, 100, 10)],
        requests,
        **kw,
    )


TINY = GeneratorConfig(
    node_count=4,
    tier_count=2,
    link_count_range=(2, 3),
    priority_count=2,
    service_count=2,
    request_count=3,
    paths_per_pair_limit=2,
    request_ranges=RequestRanges(delay=(1.0, 4.0)),
)


def tiny(seed: int) -> Scenario:
    return generate_scenario(TINY, seed)
