"""The four-agent chain: training with replay, greedy decisions, drift detection."""

from __future__ import annotations

import io
import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from ..allocation import Assignment, ResidualState, Solution
from ..model import Scenario
from .agent import ROLES, Agent, ddql_target, greedy, select_action
from .env import (
    ActionSets,
    ServiceEnv,
    apply_actions,
    encode_state,
    prune_action_sets,
    request_features,
    state_dim,
)
from .nets import MLP, AdamState
from .replay import ReplayMemory

MAGIC = b"CCRADDQL"
REQUEST_FEATURES = 5
FORMAT_VERSION = 1


@dataclass
class TrainConfig:
    steps: int = 10_000
    lr: float = 1e-4
    memory: int = 50_000
    batch: int = 32
    gamma: float = 0.99
    # per-step epsilon decrement, or "auto": reach the floor at 80% of the steps
    eps_decay: float | str = 5e-6
    eps_floor: float = 0.05
    sync_period: int = 200
    hidden: tuple[int, ...] = (128, 128)
    drift_threshold: float = 40.0
    # weight of the newest reward in the running mean (None: use gamma)
    ema_weight: float | None = None
    # rewards enter the TD targets divided by this
    reward_scale: float = 100.0
    v_limit: int = 4
    p_limit: int = 2
    # append the active request's requirements to the agents' input
    request_features: bool = False
    # path agents pick the j-th cheapest path to the chosen node
    ranked_paths: bool = False

    def validate(self) -> None:
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if not 0.0 < self.eps_floor < 1.0:
            raise ValueError("eps_floor must lie in (0, 1)")
        if self.batch > self.memory or self.batch < 1:
            raise ValueError("batch must be between 1 and the memory size")
        if self.steps < 0 or self.sync_period < 1:
            raise ValueError("steps must be >= 0 and sync_period >= 1")
        if isinstance(self.eps_decay, str) and self.eps_decay != "auto":
            raise ValueError("eps_decay must be a number or 'auto'")

    def decrement(self) -> float:
        if self.eps_decay == "auto":
            return (1.0 - self.eps_floor) / max(1.0, 0.8 * self.steps)
        return float(self.eps_decay)

    def epsilon(self, step: int) -> float:
        return max(self.eps_floor, 1.0 - step * self.decrement())

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "hidden" in d:
            d["hidden"] = tuple(d["hidden"])
        return cls(**d)


@dataclass
class AgentChain:
    sets: ActionSets
    agents: list[Agent]
    cfg: TrainConfig
    scenario_hash: str
    state_dim: int

    @classmethod
    def create(cls, scenario: Scenario, sets: ActionSets, cfg: TrainConfig, rng: np.random.Generator) -> "AgentChain":
        if sets.empty():
            raise ValueError(f"service {sets.service} has no placeable node")
        dim = state_dim(scenario) + (REQUEST_FEATURES if cfg.request_features else 0)
        pools = sets.pools()
        agents = [Agent.create(role, pool, dim, cfg.hidden, cfg.lr, rng) for role, pool in zip(ROLES, pools)]
        return cls(sets, agents, cfg, scenario.digest(), dim)

    def observe(self, env: ServiceEnv) -> np.ndarray:
        """Network input for the environment's current position."""
        s = env.state()
        if self.cfg.request_features:
            s = np.concatenate([s, env.request_features()])
        return s

    def act(self, state: np.ndarray, epsilon: float, rng: np.random.Generator) -> tuple[int, int, int, int]:
        return tuple(select_action(a, state, epsilon, rng) for a in self.agents)  # type: ignore[return-value]

    def greedy(self, state: np.ndarray) -> tuple[int, int, int, int]:
        return tuple(greedy(a.q.forward(state)) for a in self.agents)  # type: ignore[return-value]

    # -- serialization ---------------------------------------------------------

    def to_bytes(self) -> bytes:
        header = {
            "version": FORMAT_VERSION,
            "scenario_hash": self.scenario_hash,
            "state_dim": self.state_dim,
            "sets": self.sets.to_dict(),
            "cfg": self.cfg.to_dict(),
            "layers": [list(a.q.sizes) for a in self.agents],
        }
        blob = json.dumps(header, sort_keys=True).encode()
        buf = io.BytesIO()
        buf.write(MAGIC)
        buf.write(struct.pack("<II", FORMAT_VERSION, len(blob)))
        buf.write(blob)
        for a in self.agents:
            for net in (a.q, a.q_target):
                for p in net.params:
                    buf.write(np.ascontiguousarray(p, dtype="<f8").tobytes())
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes, scenario: Scenario | None = None) -> "AgentChain":
        if data[: len(MAGIC)] != MAGIC:
            raise ValueError("not a chain file")
        version, n = struct.unpack_from("<II", data, len(MAGIC))
        if version != FORMAT_VERSION:
            raise ValueError(f"unsupported chain format version {version}")
        off = len(MAGIC) + 8
        header = json.loads(data[off : off + n])
        off += n
        if scenario is not None and scenario.digest() != header["scenario_hash"]:
            raise ValueError("chain was trained on a different scenario")
        cfg = TrainConfig.from_dict(header["cfg"])
        sets = ActionSets.from_dict(header["sets"])
        agents = []
        pools = sets.pools()
        for role, pool, sizes in zip(ROLES, pools, header["layers"]):
            nets = []
            for _ in range(2):
                net = MLP(tuple(sizes))
                for p in net.params:
                    count = p.size
                    p[...] = np.frombuffer(data, dtype="<f8", count=count, offset=off).reshape(p.shape)
                    off += 8 * count
                nets.append(net)
            agents.append(Agent(role, tuple(pool), nets[0], nets[1], AdamState(lr=cfg.lr).init(nets[0].params)))
        if off != len(data):
            raise ValueError("trailing bytes in chain file")
        return cls(sets, agents, cfg, header["scenario_hash"], header["state_dim"])


@dataclass
class TraceRow:
    step: int
    epsilon: float
    beta: float
    beta_ma100: float
    # whether the joint action was feasible (not part of the CSV)
    chi: bool = True


@dataclass
class TrainResult:
    chain: AgentChain
    trace: list[TraceRow] = field(default_factory=list)
    losses: list[float] = field(default_factory=list)

    def trace_csv(self) -> str:
        lines = ["step,epsilon,beta,beta_ma100"]
        for t in self.trace:
            lines.append(f"{t.step},{t.epsilon:.6f},{t.beta:.6f},{t.beta_ma100:.6f}")
        return "\n".join(lines) + "\n"


def train(env: ServiceEnv, chain: AgentChain, rng: np.random.Generator, cfg: TrainConfig | None = None) -> TrainResult:
    cfg = cfg or chain.cfg
    cfg.validate()
    memory = ReplayMemory(cfg.memory, chain.state_dim, len(chain.agents))
    out = TrainResult(chain)
    window: list[float] = []
    total = 0.0
    env.reset()
    for a in chain.agents:
        a.sync()
    for step in range(cfg.steps):
        eps = cfg.epsilon(step)
        state = chain.observe(env)
        actions = chain.act(state, eps, rng)
        outcome, done = env.step(actions)
        next_state = chain.observe(env)
        memory.push(state, actions, outcome.beta / cfg.reward_scale, next_state, done)
        if len(memory) >= cfg.batch:
            s, acts, rew, ns, term = memory.sample(cfg.batch, rng)
            loss = 0.0
            for i, agent in enumerate(chain.agents):
                y = ddql_target(rew, ns, term, agent.q, agent.q_target, cfg.gamma)
                loss += agent.train_batch(s, acts[:, i], y)
            out.losses.append(loss)
        if (step + 1) % cfg.sync_period == 0:
            for a in chain.agents:
                a.sync()
        window.append(outcome.beta)
        total += outcome.beta
        if len(window) > 100:
            total -= window.pop(0)
        out.trace.append(TraceRow(step, eps, outcome.beta, total / len(window), outcome.chi))
        if done:
            env.reset()
    return out


@dataclass
class Decision:
    request: int
    actions: tuple[int, int, int, int]
    chi: bool
    beta: float
    beta_bar: float
    drift: bool
    assignment: Assignment | None = None


@dataclass
class DecideResult:
    solution: Solution
    decisions: list[Decision]
    drift: bool
    beta_bar: float

    @property
    def supported(self) -> int:
        return len(self.solution.assignments)


class DriftMonitor:
    """Running reward mean; flags drift once it falls below the threshold."""

    def __init__(self, weight: float, threshold: float, start: float = 100.0):
        self.weight = weight
        self.threshold = threshold
        self.value = start
        self.flagged = False

    def update(self, beta: float) -> bool:
        self.value = self.weight * beta + (1.0 - self.weight) * self.value
        if self.value < self.threshold:
            self.flagged = True
        return self.value < self.threshold


def decide(env: ServiceEnv, chain: AgentChain, monitor: DriftMonitor | None = None) -> DecideResult:
    """One greedy pass over the environment's requests (ascending id)."""
    cfg = chain.cfg
    if monitor is None:
        weight = cfg.gamma if cfg.ema_weight is None else cfg.ema_weight
        monitor = DriftMonitor(weight, cfg.drift_threshold)
    env.reset()
    decisions: list[Decision] = []
    assignments: dict[int, Assignment] = {}
    while True:
        r = env.current
        actions = chain.greedy(chain.observe(env))
        outcome, done = env.step(actions)
        low = monitor.update(outcome.beta)
        decisions.append(Decision(r, actions, outcome.chi, outcome.beta, monitor.value, low, outcome.assignment))
        if outcome.chi:
            assignments[r] = outcome.assignment
        if done:
            break
    solution = Solution.from_assignments(env.scenario, assignments)
    return DecideResult(solution, decisions, monitor.flagged, monitor.value)


def train_service(
    scenario: Scenario, service: int, cfg: TrainConfig, rng: np.random.Generator
) -> TrainResult:
    """Prune, build and train the chain of one service."""
    sets = prune_action_sets(scenario, service, cfg.v_limit, cfg.p_limit, cfg.ranked_paths)
    chain = AgentChain.create(scenario, sets, cfg, rng)
    return train(ServiceEnv(scenario, sets), chain, rng, cfg)


def decide_all(scenario: Scenario, chains: dict[int, AgentChain]) -> DecideResult:
    """Greedy pass over every request (ascending id) against one shared residual.

    Each request is handled by its service's chain; requests of services
    without a chain are rejected.
    """
    residual = ResidualState(scenario)
    decisions: list[Decision] = []
    assignments: dict[int, Assignment] = {}
    per_service = {s: [r.id for r in scenario.requests if r.service == s] for s in chains}
    monitor = None
    for rq in scenario.requests:
        chain = chains.get(rq.service)
        if chain is None:
            continue
        if monitor is None:
            weight = chain.cfg.gamma if chain.cfg.ema_weight is None else chain.cfg.ema_weight
            monitor = DriftMonitor(weight, chain.cfg.drift_threshold)
        x = encode_state(scenario, residual)
        if chain.cfg.request_features:
            ids = per_service[rq.service]
            x = np.concatenate([x, request_features(scenario, rq.id, ids.index(rq.id) / len(ids))])
        actions = chain.greedy(x)
        outcome = apply_actions(scenario, residual, rq.id, actions, chain.sets)
        low = monitor.update(outcome.beta)
        decisions.append(Decision(rq.id, actions, outcome.chi, outcome.beta, monitor.value, low, outcome.assignment))
        if outcome.chi:
            assignments[rq.id] = outcome.assignment
    solution = Solution.from_assignments(scenario, assignments)
    if monitor is None:
        return DecideResult(solution, decisions, False, 100.0)
    return DecideResult(solution, decisions, monitor.flagged, monitor.value)


def solve_all(scenario: Scenario, seed: int = 0, steps: int | None = None, cfg: TrainConfig | None = None) -> Solution:
    """Train one chain per placeable service, then decide every request."""
    cfg = cfg or TrainConfig(eps_decay="auto")
    if steps is not None:
        cfg = TrainConfig.from_dict({**cfg.to_dict(), "steps": steps})
    rng = np.random.default_rng(seed)
    chains = {}
    for s in range(scenario.S):
        if not any(r.service == s for r in scenario.requests):
            continue
        sets = prune_action_sets(scenario, s, cfg.v_limit, cfg.p_limit, cfg.ranked_paths)
        if sets.empty():
            continue
        chain = AgentChain.create(scenario, sets, cfg, rng)
        train(ServiceEnv(scenario, sets), chain, rng, cfg)
        chains[s] = chain
    return decide_all(scenario, chains).solution
