"""Key-state exploration: find bad states, recognise similar ones, add noise there.

Pipeline per evaluation:
    score_returns -> key_state_count -> select_worst -> KeyStateQueue.admit
Per environment step:
    gate -> noise_for, with ThresholdController steering the similarity
    threshold so the big-noise fraction tracks the decaying target.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from .replay import EvalTrajectory, KeyStateEntry, KeyStateQueue

METRICS = ("cosine", "manhattan")
CENTER_GUARD = 1e-12


def _check_gamma(gamma: float) -> None:
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"discount must lie in [0, 1], got {gamma}")


def score_returns(traj: EvalTrajectory, terminal_value: float, gamma: float) -> np.ndarray:
    """Discounted return-to-go of every state, bootstrapped with ``terminal_value`` at s_T.

    ``Reward(s_t) = sum_{k=t}^{T-1} gamma^(k-t) r_k + gamma^(T-t) * terminal_value``
    computed with one backward sweep.
    """
    _check_gamma(gamma)
    rewards = traj.rewards
    out = np.empty(len(rewards))
    acc = float(terminal_value)
    for t in range(len(rewards) - 1, -1, -1):
        acc = rewards[t] + gamma * acc
        out[t] = acc
    return out


def select_worst(states, returns, count: int, epoch: int = 0) -> list[KeyStateEntry]:
    """The ``count`` lowest-return states, ascending; ties go to the earlier index."""
    returns = np.asarray(returns, dtype=np.float64)
    if len(states) != len(returns):
        raise ValueError(f"{len(states)} states but {len(returns)} returns")
    if count <= 0:
        return []
    order = np.argsort(returns, kind="stable")[:count]
    return [KeyStateEntry(np.array(states[i], dtype=np.float64), float(returns[i]), epoch) for i in order]


def key_state_count(avg_reward: float, traj_reward: float, k_lower: int, k_upper: int, eps: float = 1e-8) -> int:
    """How many worst states of a trajectory to remember: ``clip(20 (avg/traj)^2, K_lower, K_upper)``.

    A near-zero trajectory reward, or one whose sign disagrees with the
    average, counts as catastrophic and yields ``k_upper``. Rounds half up.
    """
    if abs(traj_reward) < eps or avg_reward * traj_reward < 0.0:
        return int(k_upper)
    raw = 20.0 * (avg_reward / traj_reward) ** 2
    return int(math.floor(min(max(raw, k_lower), k_upper) + 0.5))


def manhattan_similarity(s_i, s_j) -> float:
    a = np.asarray(s_i, dtype=np.float64)
    b = np.asarray(s_j, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    return 1.0 / (1.0 + float(np.abs(a - b).sum()))


def cosine_similarity(s_i, s_j, mean=None) -> float:
    """Cosine of the angle between ``s_i - mean`` and ``s_j - mean``; 0 if either is ~zero."""
    a = np.asarray(s_i, dtype=np.float64)
    b = np.asarray(s_j, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    if mean is not None:
        m = np.asarray(mean, dtype=np.float64)
        if m.shape != a.shape:
            raise ValueError(f"mean length {m.shape} does not match state length {a.shape}")
        a = a - m
        b = b - m
    na = math.sqrt(float(a @ a))
    nb = math.sqrt(float(b @ b))
    if na < CENTER_GUARD or nb < CENTER_GUARD:
        return 0.0
    return float(a @ b) / (na * nb)


def similarities(state, matrix: np.ndarray, metric: str, mean=None) -> np.ndarray:
    """Similarity of ``state`` to every row of ``matrix`` (vectorised twin of the scalar metrics)."""
    s = np.asarray(state, dtype=np.float64)
    if matrix.shape[0] == 0:
        return np.zeros(0)
    if matrix.shape[1] != s.shape[0]:
        raise ValueError(f"state length {s.shape[0]} does not match queue states of length {matrix.shape[1]}")
    if metric == "manhattan":
        return 1.0 / (1.0 + np.abs(matrix - s).sum(axis=1))
    if metric != "cosine":
        raise ValueError(f"unknown metric {metric!r}")
    if mean is not None:
        s = s - mean
        matrix = matrix - mean
    ns = math.sqrt(float(s @ s))
    nm = np.sqrt(np.einsum("ij,ij->i", matrix, matrix))
    out = np.zeros(matrix.shape[0])
    if ns < CENTER_GUARD:
        return out
    ok = nm >= CENTER_GUARD
    out[ok] = (matrix[ok] @ s) / (nm[ok] * ns)
    return out


@dataclass
class SimilarityConfig:
    metric: str = "cosine"
    mean: np.ndarray | None = None
    threshold: float = 0.95
    eta: float = 0.05
    min_threshold: float = 0.5
    max_threshold: float = 0.999

    def __post_init__(self):
        if self.metric not in METRICS:
            raise ValueError(f"unknown metric {self.metric!r}")
        if not self.min_threshold <= self.max_threshold:
            raise ValueError("min_threshold must not exceed max_threshold")
        self.threshold = min(max(self.threshold, self.min_threshold), self.max_threshold)


@dataclass(frozen=True)
class GateDecision:
    best: float
    threshold: float
    is_key: bool
    metric: str


def gate(state, queue: KeyStateQueue, cfg: SimilarityConfig) -> GateDecision:
    """Compare ``state`` against every remembered key state; key if the best match clears the threshold."""
    if len(queue) == 0:
        return GateDecision(-math.inf, cfg.threshold, False, cfg.metric)
    sims = similarities(state, queue.state_matrix(), cfg.metric, cfg.mean if cfg.metric == "cosine" else None)
    best = float(sims.max())
    return GateDecision(best, cfg.threshold, best >= cfg.threshold, cfg.metric)


def adapt_threshold(cfg: SimilarityConfig, observed_fraction: float, target_fraction: float) -> SimilarityConfig:
    """Raise the threshold when too many states are flagged as key, lower it when too few."""
    new = cfg.threshold + cfg.eta * (observed_fraction - target_fraction)
    cfg.threshold = min(max(new, cfg.min_threshold), cfg.max_threshold)
    return cfg


class ThresholdController:
    """Keeps the key-state fraction near a target by nudging the similarity threshold.

    The window keeps raw best-similarity scores so the observed fraction is
    always measured against the *current* threshold; a window of stale
    yes/no flags lags by ``window`` calls and makes the per-call update
    oscillate between the clamps.
    """

    def __init__(self, cfg: SimilarityConfig, window: int = 1000):
        self.cfg = cfg
        self.window = int(window)
        self._scores: deque[float] = deque(maxlen=self.window)
        self._flags: deque[bool] = deque(maxlen=self.window)

    def observed_fraction(self) -> float:
        if not self._scores:
            return 0.0
        return float(np.count_nonzero(np.fromiter(self._scores, float) >= self.cfg.threshold)) / len(self._scores)

    def realized_fraction(self) -> float:
        """Fraction of the last ``window`` decisions that actually used the big noise."""
        return sum(self._flags) / len(self._flags) if self._flags else 0.0

    def update(self, decision: GateDecision, target_fraction: float) -> float:
        self._scores.append(decision.best)
        self._flags.append(decision.is_key)
        adapt_threshold(self.cfg, self.observed_fraction(), target_fraction)
        return self.cfg.threshold


@dataclass(frozen=True)
class PctAddSchedule:
    start: float = 0.4
    end: float = 0.2
    total_steps: int = 50_000

    def __post_init__(self):
        if not (0.0 <= self.end <= self.start <= 1.0):
            raise ValueError(f"need 0 <= end <= start <= 1, got {self.start}, {self.end}")


def pct_add_at(step: int, schedule: PctAddSchedule) -> float:
    """Target big-noise fraction: linear from ``start`` to ``end``, flat afterwards."""
    if step < 0:
        raise ValueError("step must be non-negative")
    if schedule.total_steps <= 0 or step >= schedule.total_steps:
        return schedule.end
    frac = step / schedule.total_steps
    return schedule.start + (schedule.end - schedule.start) * frac


@dataclass(frozen=True)
class NoiseTier:
    small: float = 0.05
    add: float = 0.35
    sac_up: float = 1.5
    sac_down: float = 0.5

    def __post_init__(self):
        if self.small < 0 or self.add <= 0:
            raise ValueError("need small >= 0 and add > 0 so that big > small")

    @property
    def big(self) -> float:
        return self.small + self.add


def noise_for(decision: GateDecision | None, tier: NoiseTier, mode: str = "ddpg") -> float:
    """Gaussian noise scale (ddpg) or std-range multiplier (sac) for one step.

    ``decision=None`` means the gate is switched off: plain small noise or
    an unscaled SAC policy.
    """
    if mode == "ddpg":
        return tier.big if decision is not None and decision.is_key else tier.small
    if mode == "sac":
        if decision is None:
            return 1.0
        return tier.sac_up if decision.is_key else tier.sac_down
    raise ValueError(f"unknown mode {mode!r}")


def update_running_mean(mean: np.ndarray | None, state, count: int) -> np.ndarray:
    """Incremental mean after ``count`` observations (``count`` includes ``state``)."""
    s = np.asarray(state, dtype=np.float64)
    if mean is None or count <= 1:
        return s.copy()
    if mean.shape != s.shape:
        raise ValueError(f"mean length {mean.shape} does not match state length {s.shape}")
    return mean + (s - mean) / count


@dataclass
class RunningMean:
    mean: np.ndarray | None = None
    count: int = 0

    def update(self, state) -> np.ndarray:
        self.count += 1
        self.mean = update_running_mean(self.mean, state, self.count)
        return self.mean
