"""Centralised-training, decentralised-execution learners."""
from tpavc.marl.agents import ALGORITHMS, Ablation, AgentSet, Critic, TrainConfig, soft_update
from tpavc.marl.buffer import Batch, ReplayBuffer
from tpavc.marl.train import TrainResult, exploration_sigma, load_agents, save_agents, train

__all__ = [
    "ALGORITHMS", "Ablation", "AgentSet", "Batch", "Critic", "ReplayBuffer", "TrainConfig", "TrainResult",
    "exploration_sigma", "load_agents", "save_agents", "soft_update", "train",
]
