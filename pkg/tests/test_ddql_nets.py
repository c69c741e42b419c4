import numpy as np
import pytest
from scipy import stats

from ccra.ddql import MLP, AdamState, ReplayMemory, adam_update, ddql_target, q_forward, select_action
from ccra.ddql.agent import Agent
from ccra.ddql.nets import TrainingError, td_loss_grads


def rel_err(a, b):
    return np.abs(a - b).max() / max(1e-8, np.abs(a).max(), np.abs(b).max())


def random_net(sizes, rng):
    # random biases keep pre-activations off the ReLU kink at exactly zero
    net = MLP(sizes, rng)
    for b in net.b:
        b[:] = rng.normal(size=b.shape)
    return net


def fixed_net(values):
    """One-layer net whose output is ``values`` for any input of width 1."""
    net = MLP((1, len(values)))
    net.b[0][:] = values
    return net


class TestForward:
    def test_zero_net(self):
        assert np.array_equal(q_forward(MLP((5, 8, 3)), np.ones(5)), np.zeros(3))

    def test_batch_equals_rows(self):
        rng = np.random.default_rng(0)
        net = MLP((6, 16, 16, 4), rng)
        X = rng.normal(size=(7, 6))
        rows = np.stack([q_forward(net, x) for x in X])
        assert np.allclose(q_forward(net, X), rows, rtol=0, atol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            q_forward(MLP((3, 2)), np.ones(4))

    def test_input_gradient(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            net = random_net((5, 7, 6, 3), rng)
            x = rng.normal(size=5)
            w = rng.normal(size=3)
            _, acts = net.forward(x[None, :], keep=True)
            _, gx = net.backward(acts, w[None, :])
            h = 1e-6
            fd = np.array([(w @ net.forward(x + h * e) - w @ net.forward(x - h * e)) / (2 * h) for e in np.eye(5)])
            assert rel_err(gx[0], fd) <= 1e-4

    def test_parameter_gradients(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            net = random_net((4, 6, 5, 3), rng)
            S = rng.normal(size=(8, 4))
            A = rng.integers(3, size=8)
            Y = rng.normal(size=8)
            _, grads = td_loss_grads(net, S, A, Y)
            h = 1e-6
            for p, g in zip(net.params, grads):
                fd = np.zeros_like(p)
                for idx in np.ndindex(p.shape):
                    old = p[idx]
                    p[idx] = old + h
                    up = td_loss_grads(net, S, A, Y)[0]
                    p[idx] = old - h
                    down = td_loss_grads(net, S, A, Y)[0]
                    p[idx] = old
                    fd[idx] = (up - down) / (2 * h)
                assert rel_err(g, fd) <= 1e-4

    def test_only_taken_action_gets_error(self):
        rng = np.random.default_rng(3)
        net = MLP((3, 4), rng)
        _, grads = td_loss_grads(net, rng.normal(size=(1, 3)), np.array([2]), np.array([1.0]))
        gW = grads[0]
        assert np.count_nonzero(gW[:, [0, 1, 3]]) == 0 and np.count_nonzero(gW[:, 2]) > 0


class TestAdam:
    def test_zero_gradient(self):
        p = [np.array([1.0, -2.0])]
        adam_update(p, [np.zeros(2)], AdamState(lr=0.1))
        assert np.array_equal(p[0], [1.0, -2.0])

    def test_first_step_identity(self):
        for g in (3.7, -0.02):
            p = [np.array([0.0])]
            adam_update(p, [np.array([g])], AdamState(lr=0.01))
            assert p[0][0] == pytest.approx(-0.01 * np.sign(g), rel=1e-6)

    def test_quadratic(self):
        w = [np.array([0.0])]
        opt = AdamState(lr=1e-2)
        for _ in range(10_000):
            adam_update(w, [2 * (w[0] - 3.0)], opt)
        assert abs(w[0][0] - 3.0) <= 1e-3

    def test_non_finite(self):
        with pytest.raises(TrainingError):
            adam_update([np.zeros(1)], [np.array([np.nan])], AdamState())


class TestTarget:
    def test_hand_example(self):
        q, qh = fixed_net([1.0, 2.0]), fixed_net([5.0, 7.0])
        assert ddql_target(1.0, np.zeros(1), False, q, qh, 0.5) == pytest.approx(4.5)

    def test_decoupled(self):
        # evaluation net prefers action 0, target net values it at 5
        q, qh = fixed_net([3.0, 2.0]), fixed_net([5.0, 7.0])
        assert ddql_target(1.0, np.zeros(1), False, q, qh, 0.5) == pytest.approx(3.5)

    def test_gamma_zero_and_terminal(self):
        q, qh = fixed_net([1.0, 2.0]), fixed_net([5.0, 7.0])
        assert ddql_target(2.0, np.zeros(1), False, q, qh, 0.0) == 2.0
        assert ddql_target(2.0, np.zeros(1), True, q, qh, 0.9) == 2.0

    def test_single_action_is_dqn(self):
        q = fixed_net([4.0])
        assert ddql_target(1.0, np.zeros(1), False, q, q, 0.9) == pytest.approx(1.0 + 0.9 * 4.0)

    def test_batch(self):
        q, qh = fixed_net([1.0, 2.0]), fixed_net([5.0, 7.0])
        y = ddql_target(np.array([1.0, 0.0]), np.zeros((2, 1)), np.array([False, True]), q, qh, 0.5)
        assert np.allclose(y, [4.5, 0.0])

    def test_width_mismatch(self):
        with pytest.raises(ValueError):
            ddql_target(0.0, np.zeros(1), False, fixed_net([1.0]), fixed_net([1.0, 2.0]), 0.5)


class TestSelect:
    def agent(self, values):
        net = fixed_net(values)
        return Agent("SP", tuple(range(len(values))), net, net.copy())

    def test_greedy(self):
        rng = np.random.default_rng(0)
        assert select_action(self.agent([1, 3, 2]), np.zeros(1), 0.0, rng) == 1

    def test_tie_lowest(self):
        rng = np.random.default_rng(0)
        assert select_action(self.agent([2, 2, 1]), np.zeros(1), 0.0, rng) == 0

    def test_uniform(self):
        rng = np.random.default_rng(11)
        ag = self.agent([5, 1, 1, 1, 1])
        draws = [select_action(ag, np.zeros(1), 1.0, rng) for _ in range(10_000)]
        counts = np.bincount(draws, minlength=5)
        assert stats.chisquare(counts).pvalue > 0.01

    def test_bad_epsilon(self):
        with pytest.raises(ValueError):
            select_action(self.agent([1]), np.zeros(1), 1.5, np.random.default_rng(0))

    def test_empty_set(self):
        with pytest.raises(ValueError):
            Agent.create("SP", (), 3, (4,), 1e-3, np.random.default_rng(0))


class TestReplay:
    def test_bounded(self):
        mem = ReplayMemory(5, 2)
        for i in range(12):
            mem.push(np.full(2, i), (0, 0, 0, 0), float(i), np.zeros(2), False)
        assert len(mem) == 5
        assert sorted(mem.rewards) == [7, 8, 9, 10, 11]

    def test_sample_uniform(self):
        mem = ReplayMemory(4, 1)
        for i in range(4):
            mem.push(np.array([i]), (0, 0, 0, 0), float(i), np.zeros(1), False)
        _, _, r, _, _ = mem.sample(8000, np.random.default_rng(0))
        assert stats.chisquare(np.bincount(r.astype(int), minlength=4)).pvalue > 0.01

    def test_empty(self):
        with pytest.raises(ValueError):
            ReplayMemory(3, 1).sample(1, np.random.default_rng(0))
