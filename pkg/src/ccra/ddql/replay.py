"""Bounded ring buffer of transitions."""

from __future__ import annotations

import numpy as np


class ReplayMemory:
    def __init__(self, capacity: int, state_dim: int, n_agents: int = 4):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.states = np.zeros((capacity, state_dim))
        self.next_states = np.zeros((capacity, state_dim))
        self.actions = np.zeros((capacity, n_agents), dtype=np.int64)
        self.rewards = np.zeros(capacity)
        self.terminal = np.zeros(capacity, dtype=bool)
        self._next = 0
        self._size = 0

    def __len__(self) -> int:
        return self._size

    def push(self, state, actions, reward: float, next_state, terminal: bool) -> None:
        i = self._next
        self.states[i] = state
        self.actions[i] = actions
        self.rewards[i] = reward
        self.next_states[i] = next_state
        self.terminal[i] = terminal
        self._next = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def sample(self, batch: int, rng: np.random.Generator):
        if self._size == 0:
            raise ValueError("memory is empty")
        idx = rng.integers(self._size, size=batch)
        return self.states[idx], self.actions[idx], self.rewards[idx], self.next_states[idx], self.terminal[idx]
