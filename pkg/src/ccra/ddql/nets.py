"""Small fully connected Q-networks with hand-written backprop and Adam."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class TrainingError(FloatingPointError):
    pass


class MLP:
    """ReLU hidden layers, linear output head."""

    def __init__(self, sizes: tuple[int, ...], rng: np.random.Generator | None = None):
        if len(sizes) < 2 or any(s < 1 for s in sizes):
            raise ValueError(f"bad layer sizes {sizes}")
        self.sizes = tuple(int(s) for s in sizes)
        self.W: list[np.ndarray] = []
        self.b: list[np.ndarray] = []
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            if rng is None:
                self.W.append(np.zeros((fan_in, fan_out)))
            else:
                self.W.append(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out)))
            self.b.append(np.zeros(fan_out))

    @property
    def params(self) -> list[np.ndarray]:
        return [p for pair in zip(self.W, self.b) for p in pair]

    def copy(self) -> "MLP":
        out = MLP.__new__(MLP)
        out.sizes = self.sizes
        out.W = [w.copy() for w in self.W]
        out.b = [b.copy() for b in self.b]
        return out

    def load_from(self, other: "MLP") -> None:
        for dst, src in zip(self.params, other.params):
            dst[...] = src

    def forward(self, x: np.ndarray, keep: bool = False):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.sizes[0]:
            raise ValueError(f"input width {x.shape[-1]} != {self.sizes[0]}")
        acts = [x]
        h = x
        last = len(self.W) - 1
        for i, (w, b) in enumerate(zip(self.W, self.b)):
            h = h @ w + b
            if i < last:
                h = np.maximum(h, 0.0)
            acts.append(h)
        return (h, acts) if keep else h

    def backward(self, acts: list[np.ndarray], grad_out: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
        """Parameter gradients (ordered like ``params``) and the input gradient."""
        grads: list[np.ndarray] = [None] * (2 * len(self.W))  # type: ignore[list-item]
        g = grad_out
        for i in range(len(self.W) - 1, -1, -1):
            a_in = acts[i]
            grads[2 * i] = a_in.reshape(-1, a_in.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            grads[2 * i + 1] = g.reshape(-1, g.shape[-1]).sum(axis=0)
            g = g @ self.W[i].T
            if i > 0:
                g = g * (acts[i] > 0)
        return grads, g


def q_forward(net: MLP, state: np.ndarray) -> np.ndarray:
    """Action values for one state (vector) or a batch (matrix)."""
    return net.forward(state)


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def init(self, params: list[np.ndarray]) -> "AdamState":
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.step = 0
        return self


def adam_update(params: list[np.ndarray], grads: list[np.ndarray], opt: AdamState) -> None:
    """One in-place Adam step (minimization)."""
    if not opt.m:
        opt.init(params)
    if len(grads) != len(params) or any(g.shape != p.shape for g, p in zip(grads, params)):
        raise ValueError("gradient shapes do not match parameters")
    if not all(np.isfinite(g).all() for g in grads):
        raise TrainingError("non-finite gradient")
    opt.step += 1
    c1 = 1.0 - opt.beta1**opt.step
    c2 = 1.0 - opt.beta2**opt.step
    for p, g, m, v in zip(params, grads, opt.m, opt.v):
        m *= opt.beta1
        m += (1.0 - opt.beta1) * g
        v *= opt.beta2
        v += (1.0 - opt.beta2) * g * g
        p -= opt.lr * (m / c1) / (np.sqrt(v / c2) + opt.eps)


def td_loss_grads(net: MLP, states: np.ndarray, actions: np.ndarray, targets: np.ndarray):
    """Mean squared TD error on the taken actions and its parameter gradients."""
    q, acts = net.forward(states, keep=True)
    rows = np.arange(len(actions))
    err = q[rows, actions] - targets
    grad_out = np.zeros_like(q)
    grad_out[rows, actions] = 2.0 * err / len(actions)
    grads, _ = net.backward(acts, grad_out)
    return float(np.mean(err**2)), grads
