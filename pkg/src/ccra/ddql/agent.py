"""One decision agent: evaluation net, periodically synced target net, optimizer."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .nets import MLP, AdamState, adam_update, td_loss_grads

ROLES = ("SP", "PA", "QPS", "PPS")


@dataclass
class Agent:
    role: str
    actions: tuple[int, ...]
    q: MLP
    q_target: MLP
    opt: AdamState = field(default_factory=AdamState)

    @classmethod
    def create(cls, role: str, actions, state_dim: int, hidden: tuple[int, ...], lr: float, rng) -> "Agent":
        if role not in ROLES:
            raise ValueError(f"unknown role {role}")
        if not actions:
            raise ValueError(f"{role}: empty action set")
        q = MLP((state_dim, *hidden, len(actions)), rng)
        return cls(role, tuple(actions), q, q.copy(), AdamState(lr=lr).init(q.params))

    def sync(self) -> None:
        self.q_target.load_from(self.q)

    def train_batch(self, states, actions, targets) -> float:
        loss, grads = td_loss_grads(self.q, states, actions, targets)
        adam_update(self.q.params, grads, self.opt)
        return loss


def greedy(values: np.ndarray) -> int:
    """argmax with ties going to the lowest index."""
    return int(np.argmax(values))


def select_action(agent: Agent, state: np.ndarray, epsilon: float, rng: np.random.Generator) -> int:
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must lie in [0, 1]")
    n = len(agent.actions)
    if n == 0:
        raise ValueError("empty action set")
    if rng.random() < epsilon:
        return int(rng.integers(n))
    return greedy(agent.q.forward(state))


def ddql_target(reward, next_state, terminal, q: MLP, q_target: MLP, gamma: float):
    """Double-Q target: the evaluation net picks a', the target net values it.

    Works on a single transition or on a batch (arrays).
    """
    if q.sizes[-1] != q_target.sizes[-1]:
        raise ValueError("evaluation and target nets differ in action width")
    next_state = np.asarray(next_state, dtype=float)
    single = next_state.ndim == 1
    ns = next_state[None, :] if single else next_state
    a_next = np.argmax(q.forward(ns), axis=1)
    q_hat = q_target.forward(ns)[np.arange(len(ns)), a_next]
    y = np.asarray(reward, dtype=float) + gamma * q_hat * (1.0 - np.asarray(terminal, dtype=float))
    return float(y[0]) if single else y
