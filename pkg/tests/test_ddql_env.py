import numpy as np
import pytest

from ccra.allocation import Assignment, ResidualState, Solution, check_feasibility
from ccra.ddql import ActionSets, ServiceEnv, apply_actions, encode_state, prune_action_sets
from ccra.ddql.env import occupancy_delay_bounds, request_features, state_dim
from ccra.generator import PROFILES, generate_scenario

from helpers import build, pair


def req(D=100.0, C=4, B=10, T=2):
    return (0, 0, C, B, D, T, 1)


def two_path_pair(requests=(req(),), **kw):
    return build(
        [(100, 1000, True), (100, 10, False)],
        [(0, 1, 100, 10), (0, 1, 100, 12), (1, 0, 100, 10), (1, 0, 100, 12)],
        list(requests),
        **kw,
    )


def triangle(requests=(req(),)):
    # 0 -> 2 directly (cost 25) or via 1 (cost 10 + 10)
    return build(
        [(100, 1000, True), (100, 50, False), (100, 10, False)],
        [(0, 1, 100, 10), (1, 2, 100, 10), (0, 2, 100, 25), (2, 0, 100, 25), (2, 1, 100, 10), (1, 0, 100, 10)],
        list(requests),
    )


class TestState:
    def test_length_example(self):
        s = build(
            [(100, 1000, True), (100, 10, False), (100, 50, False)],
            [(0, 1, 100, 10), (1, 0, 100, 10), (0, 2, 100, 10), (2, 0, 100, 10)],
            [req()],
        )
        assert (s.V, s.L, s.K) == (3, 4, 2)
        assert state_dim(s) == 22
        assert encode_state(s, ResidualState(s)).shape == (22,)

    def test_bandwidth_block_after_commit(self):
        s = pair([req(B=20)])
        res = ResidualState(s)
        before = encode_state(s, res, raw=True)
        res.commit(s.requests[0], Assignment(1, 0, 0, 1))
        after = encode_state(s, res, raw=True)
        blk = slice(2 * s.V, 2 * s.V + s.L)
        assert after[blk][0] == before[blk][0] - 20
        assert after[blk][1] == before[blk][1] - 20  # the response path uses link 1
        # a fresh VNF of 20 holds 4 of the request: free compute counts the spare
        assert after[1] == before[1] - 4

    def test_untouched_links_unchanged(self):
        s = two_path_pair([req(B=20)])
        res = ResidualState(s)
        before = encode_state(s, res, raw=True)
        res.commit(s.requests[0], Assignment(1, 0, 0, 2))
        after = encode_state(s, res, raw=True)
        blk = slice(2 * s.V, 2 * s.V + s.L)
        assert list(before[blk] - after[blk]) == [20, 0, 20, 0]

    def test_deterministic(self):
        s = generate_scenario(PROFILES["desk"], 1)
        assert np.array_equal(encode_state(s, ResidualState(s)), encode_state(s, ResidualState(s)))

    def test_normalized_nonnegative(self):
        s = generate_scenario(PROFILES["desk"], 2)
        x = encode_state(s, ResidualState(s))
        assert x.min() >= 0 and x.max() <= 1 + 1e-12

    def test_occupancy_bounds(self):
        s = pair([req(), req()])
        res = ResidualState(s)
        empty = occupancy_delay_bounds(s, res)
        res.commit(s.requests[0], Assignment(1, 0, 0, 1))
        loaded = occupancy_delay_bounds(s, res)
        static = np.array(s.delay_bounds)
        assert (loaded >= empty).all() and (loaded <= static + 1e-12).all()
        assert loaded[0, 0] > empty[0, 0]

    def test_request_features(self):
        s = pair([req(D=1.0, C=8, B=10, T=5)], vnf_capacity=20)
        f = request_features(s, 0, 0.5)
        assert f.shape == (5,) and f[0] == pytest.approx(0.4) and f[-1] == 0.5


class TestPrune:
    def test_large_limit_keeps_all_feasible(self):
        s = triangle()
        sets = prune_action_sets(s, 0, 10, 5)
        assert set(sets.nodes) == {1, 2}  # the entry has no path to itself

    def test_cheapest_node(self):
        s = build(
            [(100, 1000, True), (100, 100, False), (100, 10, False)],
            [(0, 1, 100, 10), (1, 0, 100, 10), (0, 2, 100, 10), (2, 0, 100, 10)],
            [req()],
        )
        assert prune_action_sets(s, 0, 1, 1).nodes == (2,)

    def test_qos_infeasible_node_dropped(self):
        s = build(
            [(100, 1000, True), (100, 10, False), (100, 50, False)],
            [(0, 1, 1, 10), (1, 0, 1, 10), (0, 2, 100, 10), (2, 0, 100, 10)],
            [req(D=2.0, B=0.5, T=0.1)],
        )
        assert prune_action_sets(s, 0, 5, 1).nodes == (2,)

    def test_no_node(self):
        s = pair([req(D=0.01)])
        sets = prune_action_sets(s, 0, 3, 2)
        assert sets.empty()

    def test_p_limit_one_triangle(self):
        s = triangle()
        sets = prune_action_sets(s, 0, 10, 1)
        pc = s.path_cost_array
        for v in sets.nodes:
            want_in = min(s.pair_paths(0, v), key=lambda p: (pc[p], p))
            want_out = min(s.pair_paths(v, 0), key=lambda p: (pc[p], p))
            assert want_in in sets.inquiry and want_out in sets.response
        assert len(sets.inquiry) == len(sets.response) == len(sets.nodes)
        # to node 2 the two-hop route is cheaper than the direct link
        assert s.paths[[p for p in sets.inquiry if s.paths[p].tail == 2][0]].links == (0, 1)

    def test_bad_limits(self):
        with pytest.raises(ValueError):
            prune_action_sets(pair(), 0, 0, 1)

    def test_ranked(self):
        s = two_path_pair()
        sets = prune_action_sets(s, 0, 2, 2, ranked=True)
        assert sets.sizes() == (1, 2, 2, 2)
        a = sets.resolve(s, 0, (0, 0, 1, 0))
        assert s.path_cost[a.inquiry] == 12 and s.path_cost[a.response] == 10
        assert ActionSets.from_dict(sets.to_dict()) == sets


class TestApply:
    def sets(self, s):
        return prune_action_sets(s, 0, 5, 5)

    def test_vnf_overload(self):
        s = pair([req(C=30)], vnf_capacity=20)
        sets = self.sets(s)
        res = ResidualState(s)
        snap = encode_state(s, res, raw=True)
        out = apply_actions(s, res, 0, (0, 0, 0, 0), sets)
        assert not out.chi and out.beta == 0
        assert np.array_equal(encode_state(s, res, raw=True), snap)

    def test_cheapest_gets_full_reward(self):
        s = two_path_pair()
        sets = self.sets(s)
        assert sets.inquiry == (0, 1) and sets.response == (2, 3)
        assert apply_actions(s, ResidualState(s), 0, (0, 0, 0, 0), sets).beta == pytest.approx(100)
        assert apply_actions(s, ResidualState(s), 0, (0, 0, 1, 1), sets).beta == pytest.approx(0)
        assert apply_actions(s, ResidualState(s), 0, (0, 0, 1, 0), sets).beta == pytest.approx(50)

    def test_delay_violation(self):
        s = pair([req(D=2.0)])
        sets = self.sets(s)
        out = apply_actions(s, ResidualState(s), 0, (0, 1, 0, 0), sets)
        assert not out.chi and out.reason == "C15"
        assert apply_actions(s, ResidualState(s), 0, (0, 0, 0, 0), sets).chi

    def test_malformed(self):
        s = pair()
        sets = self.sets(s)
        with pytest.raises(ValueError):
            apply_actions(s, ResidualState(s), 0, (0, 0, 0), sets)
        with pytest.raises(ValueError):
            apply_actions(s, ResidualState(s), 0, (0, 9, 0, 0), sets)

    def test_chi_soundness(self):
        rng = np.random.default_rng(0)
        for seed in range(3):
            s = generate_scenario(PROFILES["desk"], seed)
            for svc in range(s.S):
                sets = prune_action_sets(s, svc, 4, 2)
                if sets.empty():
                    continue
                res = ResidualState(s)
                done: dict[int, Assignment] = {}
                for r in [q.id for q in s.requests if q.service == svc]:
                    acts = tuple(int(rng.integers(n)) for n in sets.sizes())
                    a = sets.resolve(s, r, acts)
                    out = apply_actions(s, res, r, acts, sets)
                    trial = Solution.from_assignments(s, {**done, r: a})
                    ok = check_feasibility(s, trial, "linearized").feasible
                    assert ok == out.chi
                    assert 0 <= out.beta <= 100
                    if out.chi:
                        done[r] = a

    def test_env_episode(self):
        s = pair([req(), req(), req()])
        env = ServiceEnv(s, prune_action_sets(s, 0, 2, 2))
        dones = [env.step((0, 0, 0, 0))[1] for _ in range(3)]
        assert dones == [False, False, True]
        env.reset()
        assert env.current == 0 and env.residual.is_nonnegative()
