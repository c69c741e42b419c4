"""Partially-informed solver: a chain of four double-Q agents per service."""

from .agent import Agent, ddql_target, select_action
from .chain import (
    AgentChain,
    DecideResult,
    DriftMonitor,
    TrainConfig,
    TrainResult,
    decide,
    decide_all,
    solve_all,
    train,
    train_service,
)
from .env import ActionSets, ServiceEnv, apply_actions, encode_state, prune_action_sets
from .nets import MLP, AdamState, adam_update, q_forward
from .replay import ReplayMemory

__all__ = [
    "Agent", "AgentChain", "ActionSets", "AdamState", "DecideResult", "DriftMonitor", "MLP",
    "ReplayMemory", "ServiceEnv", "TrainConfig", "TrainResult", "adam_update", "apply_actions",
    "ddql_target", "decide", "encode_state", "prune_action_sets", "q_forward", "select_action", "train",
    "decide_all", "solve_all", "train_service",
]
