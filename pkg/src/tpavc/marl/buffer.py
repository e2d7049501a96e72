"""Fixed-capacity FIFO replay buffer over preallocated arrays."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from tpavc.errors import ConfigError, SamplingError


@dataclass
class Batch:
    state: np.ndarray  # [N, S]
    obs: list[np.ndarray]  # per agent [N, D_i]
    actions: np.ndarray  # [N, n_agents]
    reward: np.ndarray  # [N]
    next_state: np.ndarray
    next_obs: list[np.ndarray]
    terminal: np.ndarray  # [N] bool, True where the target must not bootstrap
    done: np.ndarray  # [N] bool, episode boundary


class ReplayBuffer:
    def __init__(self, capacity: int, state_dim: int, obs_dims: list[int], n_agents: int) -> None:
        if capacity < 1:
            raise ConfigError("buffer capacity must be >= 1")
        self.capacity = capacity
        self._state = np.zeros((capacity, state_dim))
        self._next_state = np.zeros((capacity, state_dim))
        self._obs = [np.zeros((capacity, d)) for d in obs_dims]
        self._next_obs = [np.zeros((capacity, d)) for d in obs_dims]
        self._actions = np.zeros((capacity, n_agents))
        self._reward = np.zeros(capacity)
        self._terminal = np.zeros(capacity, dtype=bool)
        self._done = np.zeros(capacity, dtype=bool)
        self._head = 0
        self._size = 0
        self.inserted = 0

    def __len__(self) -> int:
        return self._size

    def add(self, state, obs, actions, reward, next_state, next_obs, terminal=False, done=False) -> None:
        """Store one transition; ``obs``/``next_obs`` are per-agent vectors."""
        i = self._head
        self._state[i] = state
        self._next_state[i] = next_state
        for k in range(len(self._obs)):
            self._obs[k][i] = obs[k]
            self._next_obs[k][i] = next_obs[k]
        self._actions[i] = actions
        self._reward[i] = reward
        self._terminal[i] = terminal
        self._done[i] = done
        self._head = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)
        self.inserted += 1

    def _slots(self) -> np.ndarray:
        """Slot indices from oldest to newest."""
        if self._size < self.capacity:
            return np.arange(self._size)
        return (np.arange(self.capacity) + self._head) % self.capacity

    def rewards_in_order(self) -> np.ndarray:
        return self._reward[self._slots()].copy()

    def sample(self, batch_size: int, rng: np.random.Generator) -> Batch:
        if batch_size > self._size:
            raise SamplingError(f"requested {batch_size} transitions but the buffer holds {self._size}")
        idx = rng.choice(self._size, size=batch_size, replace=False)
        return Batch(
            self._state[idx], [o[idx] for o in self._obs], self._actions[idx], self._reward[idx],
            self._next_state[idx], [o[idx] for o in self._next_obs], self._terminal[idx], self._done[idx],
        )
