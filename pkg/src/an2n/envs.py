"""Seeded continuous-control tasks: pendulum swing-up, continuous mountain car, cliff field.

``step`` is a pure function of ``(state, action, t)`` where ``t`` is the
zero-based index of the step inside the episode; it only matters for the
horizon. ``StepResult.terminal`` marks true terminal states (bootstrap 0),
``truncated`` marks the horizon cut.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class EnvSpec:
    name: str
    state_dim: int
    action_dim: int
    action_bound: float
    max_steps: int

    def __post_init__(self):
        if self.state_dim <= 0 or self.action_dim <= 0:
            raise ValueError("dimensions must be positive")
        if self.action_bound <= 0:
            raise ValueError("action bound must be positive")


@dataclass
class StepResult:
    state: np.ndarray
    reward: float
    terminal: bool
    truncated: bool = False

    @property
    def done(self) -> bool:
        return self.terminal or self.truncated


class Env:
    spec: EnvSpec

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def _dynamics(self, state: np.ndarray, action: np.ndarray) -> tuple[np.ndarray, float, bool]:
        raise NotImplementedError

    def step(self, state, action, t: int = 0) -> StepResult:
        action = np.asarray(action, dtype=np.float64).reshape(self.spec.action_dim)
        if not np.all(np.isfinite(action)):
            raise ValueError(f"{self.spec.name}: non-finite action {action}")
        state = np.asarray(state, dtype=np.float64)
        nxt, reward, terminal = self._dynamics(state, action)
        return StepResult(nxt, float(reward), terminal, (not terminal) and t + 1 >= self.spec.max_steps)

    def random_action(self, rng: np.random.Generator) -> np.ndarray:
        b = self.spec.action_bound
        return rng.uniform(-b, b, size=self.spec.action_dim)


def wrap_angle(theta: float) -> float:
    """Map an angle into (-pi, pi]."""
    w = math.fmod(theta + math.pi, 2.0 * math.pi)
    if w <= 0.0:
        w += 2.0 * math.pi
    return w - math.pi


class Pendulum(Env):
    g, m, l, dt = 10.0, 1.0, 1.0, 0.05
    max_speed = 8.0

    def __init__(self):
        self.spec = EnvSpec("pendulum", 3, 1, 2.0, 200)

    @staticmethod
    def observe(theta: float, theta_dot: float) -> np.ndarray:
        return np.array([math.cos(theta), math.sin(theta), theta_dot])

    def reset(self, rng):
        theta = rng.uniform(-math.pi, math.pi)
        theta_dot = rng.uniform(-1.0, 1.0)
        return self.observe(theta, theta_dot)

    def _dynamics(self, state, action):
        theta = math.atan2(state[1], state[0])
        theta_dot = float(state[2])
        u = min(max(float(action[0]), -self.spec.action_bound), self.spec.action_bound)
        th = wrap_angle(theta)
        reward = -(th * th + 0.1 * theta_dot * theta_dot + 0.001 * u * u)
        theta_dot += (3.0 * self.g / (2.0 * self.l) * math.sin(theta) + 3.0 / (self.m * self.l**2) * u) * self.dt
        theta_dot = min(max(theta_dot, -self.max_speed), self.max_speed)
        theta = theta + theta_dot * self.dt
        return self.observe(theta, theta_dot), reward, False


class MountainCarContinuous(Env):
    min_pos, max_pos, goal_pos = -1.2, 0.6, 0.45
    max_speed = 0.07

    def __init__(self):
        self.spec = EnvSpec("mcc", 2, 1, 1.0, 999)

    def reset(self, rng):
        return np.array([rng.uniform(-0.6, -0.4), 0.0])

    def _dynamics(self, state, action):
        p, v = float(state[0]), float(state[1])
        u = min(max(float(action[0]), -1.0), 1.0)
        v = v + 0.0015 * u - 0.0025 * math.cos(3.0 * p)
        v = min(max(v, -self.max_speed), self.max_speed)
        p = min(max(p + v, self.min_pos), self.max_pos)
        reward = -0.1 * u * u
        terminal = p >= self.goal_pos
        if terminal:
            reward += 100.0
        return np.array([p, v]), reward, terminal


class CliffField(Env):
    """Point mass in the unit square with a penalty strip between start and goal."""

    dt = 0.05
    goal = (1.0, 1.0)
    goal_radius = 0.1
    strip_x = (0.4, 0.6)
    strip_y_max = 0.5

    def __init__(self):
        self.spec = EnvSpec("cliff", 4, 2, 1.0, 400)

    def reset(self, rng):
        return np.zeros(4)

    @classmethod
    def in_strip(cls, x: float, y: float) -> bool:
        return cls.strip_x[0] <= x <= cls.strip_x[1] and y <= cls.strip_y_max

    @classmethod
    def strip_distance(cls, x: float, y: float) -> float:
        """L-infinity distance from a position to the penalty strip."""
        dx = max(cls.strip_x[0] - x, 0.0, x - cls.strip_x[1])
        dy = max(y - cls.strip_y_max, 0.0)
        return max(dx, dy)

    def _dynamics(self, state, action):
        ax = min(max(float(action[0]), -1.0), 1.0)
        ay = min(max(float(action[1]), -1.0), 1.0)
        vx = min(max(float(state[2]) + ax * self.dt, -1.0), 1.0)
        vy = min(max(float(state[3]) + ay * self.dt, -1.0), 1.0)
        x = min(max(float(state[0]) + vx * self.dt, 0.0), 1.0)
        y = min(max(float(state[1]) + vy * self.dt, 0.0), 1.0)
        dist = math.hypot(x - self.goal[0], y - self.goal[1])
        if dist <= self.goal_radius:
            reward, terminal = 100.0, True
        elif self.in_strip(x, y):
            reward, terminal = -10.0, False
        else:
            reward, terminal = -0.1 * dist, False
        return np.array([x, y, vx, vy]), reward, terminal


ENVIRONMENTS = {"pendulum": Pendulum, "mcc": MountainCarContinuous, "cliff": CliffField}


def make_env(name: str) -> Env:
    try:
        return ENVIRONMENTS[name]()
    except KeyError:
        raise ValueError(f"unknown environment {name!r}; choose from {sorted(ENVIRONMENTS)}") from None
