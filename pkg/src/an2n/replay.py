"""Transition ring buffer, evaluation trajectories, and the bounded key-state queue."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Iterable

import numpy as np


@dataclass
class Transition:
    state: np.ndarray
    action: np.ndarray
    reward: float
    next_state: np.ndarray
    done: bool


@dataclass
class Batch:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray

    def __len__(self):
        return len(self.rewards)

    def transitions(self) -> list[Transition]:
        return [
            Transition(self.states[i], self.actions[i], float(self.rewards[i]), self.next_states[i], bool(self.dones[i]))
            for i in range(len(self))
        ]


class ReplayBuffer:
    """Fixed-capacity ring of transitions stored column-wise.

    ``done`` must mark true terminal states only; horizon truncation is not
    stored as done.
    """

    def __init__(self, capacity: int, state_dim: int, action_dim: int):
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        self.capacity = int(capacity)
        self.states = np.zeros((capacity, state_dim))
        self.actions = np.zeros((capacity, action_dim))
        self.rewards = np.zeros(capacity)
        self.next_states = np.zeros((capacity, state_dim))
        self.dones = np.zeros(capacity, dtype=bool)
        self.cursor = 0
        self.count = 0
        self.wraps = 0

    def __len__(self):
        return self.count

    def push(self, t: Transition) -> None:
        if not np.isfinite(t.reward):
            raise ValueError(f"non-finite reward {t.reward}")
        i = self.cursor
        if i == 0 and self.count == self.capacity:
            self.wraps += 1  # first overwrite of a new pass
        self.states[i] = t.state
        self.actions[i] = t.action
        self.rewards[i] = t.reward
        self.next_states[i] = t.next_state
        self.dones[i] = t.done
        self.cursor += 1
        if self.cursor == self.capacity:
            self.cursor = 0
        self.count = min(self.count + 1, self.capacity)

    def sample(self, n: int, rng: np.random.Generator) -> Batch:
        """Uniform draw of ``n`` transitions with replacement."""
        if self.count == 0:
            raise ValueError("cannot sample from an empty replay buffer")
        idx = rng.integers(0, self.count, size=n)
        return Batch(self.states[idx], self.actions[idx], self.rewards[idx], self.next_states[idx], self.dones[idx])

    def contents(self) -> list[Transition]:
        """Stored transitions, oldest first."""
        if self.count < self.capacity:
            order = range(self.count)
        else:
            order = [(self.cursor + k) % self.capacity for k in range(self.capacity)]
        return [
            Transition(self.states[i].copy(), self.actions[i].copy(), float(self.rewards[i]), self.next_states[i].copy(), bool(self.dones[i]))
            for i in order
        ]


@dataclass
class EvalTrajectory:
    """States s_0..s_{T-1}, rewards r_0..r_{T-1} and the final state s_T."""

    states: np.ndarray
    rewards: np.ndarray
    final_state: np.ndarray
    terminal: bool = False

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.float64)
        self.rewards = np.asarray(self.rewards, dtype=np.float64)
        if len(self.rewards) == 0:
            raise ValueError("trajectory must contain at least one step")
        if len(self.states) != len(self.rewards):
            raise ValueError(f"{len(self.states)} states but {len(self.rewards)} rewards")

    def __len__(self):
        return len(self.rewards)

    @property
    def total_reward(self) -> float:
        return float(self.rewards.sum())


@dataclass
class KeyStateEntry:
    state: np.ndarray
    score: float
    epoch: int = 0

    def __post_init__(self):
        if not np.isfinite(self.score):
            raise ValueError(f"key state score must be finite, got {self.score}")


class KeyStateQueue:
    """FIFO of remembered bad states with capacity kept in ``[k_lower, k_upper]``.

    Shrinking the capacity evicts the oldest entries immediately.
    """

    def __init__(self, k_lower: int = 5, k_upper: int = 20, capacity: int | None = None):
        if not 0 < k_lower <= k_upper:
            raise ValueError(f"need 0 < k_lower <= k_upper, got {k_lower}, {k_upper}")
        self.k_lower = int(k_lower)
        self.k_upper = int(k_upper)
        self.capacity = self.k_upper
        self._items: deque[KeyStateEntry] = deque()
        self._matrix: np.ndarray | None = None
        if capacity is not None:
            self.resize(capacity)

    def __len__(self):
        return len(self._items)

    def __iter__(self):
        return iter(self._items)

    def entries(self) -> list[KeyStateEntry]:
        return list(self._items)

    def _evict(self) -> None:
        while len(self._items) > self.capacity:
            self._items.popleft()

    def admit(self, candidates: Iterable[KeyStateEntry]) -> None:
        for c in candidates:
            self._items.append(c)
        self._evict()
        self._matrix = None

    def resize(self, capacity: int) -> None:
        self.capacity = min(max(int(capacity), self.k_lower), self.k_upper)
        self._evict()
        self._matrix = None

    def clear(self) -> None:
        self._items.clear()
        self._matrix = None

    def state_matrix(self) -> np.ndarray:
        """Queue states stacked as rows (cached until the next mutation)."""
        if self._matrix is None:
            self._matrix = np.array([e.state for e in self._items], dtype=np.float64) if self._items else np.zeros((0, 0))
        return self._matrix
