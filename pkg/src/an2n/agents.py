"""DDPG and SAC learners on top of the numpy MLPs in :mod:`an2n.nn`.

Both agents store plain float64 networks and Adam states and are updated by
explicit calls from the training loop. Target networks are only read when
building TD targets, so no gradient ever reaches them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .envs import EnvSpec
from .nn import AdamState, GradientBundle, Mlp, NonFiniteError, adam_step, backward, forward, forward_traced, init_mlp, soft_update
from .replay import Batch

LOG_STD_HARD = (-20.0, 2.0)
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
_LOG2 = math.log(2.0)


@dataclass
class AgentConfig:
    hidden: tuple[int, ...] = (64, 64)
    gamma: float = 0.99
    tau: float = 0.005
    batch_size: int = 128
    actor_lr: float = 1e-4
    critic_lr: float = 1e-3
    alpha: float = 0.2
    log_std_min: float = -5.0
    log_std_max: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in [0, 1], got {self.gamma}")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError(f"tau must lie in (0, 1], got {self.tau}")
        if self.log_std_min > self.log_std_max:
            raise ValueError("log_std_min must not exceed log_std_max")


def td_target(rewards, dones, next_q, gamma: float) -> np.ndarray:
    """``r + gamma * (1 - done) * Q'``; terminal transitions do not bootstrap."""
    rewards = np.asarray(rewards, dtype=np.float64)
    mask = 1.0 - np.asarray(dones, dtype=np.float64)
    return rewards + gamma * mask * np.asarray(next_q, dtype=np.float64)


def soft_td_target(rewards, dones, next_q1, next_q2, next_logp, gamma: float, alpha: float) -> np.ndarray:
    """Twin-critic entropy-regularised target ``r + gamma (1 - done) (min Q'_j - alpha log pi)``."""
    soft_v = np.minimum(next_q1, next_q2) - alpha * np.asarray(next_logp, dtype=np.float64)
    return td_target(rewards, dones, soft_v, gamma)


def _check_finite(name: str, value) -> None:
    if not np.all(np.isfinite(value)):
        raise NonFiniteError(f"{name} is not finite: {value}")


def _critic_step(critic: Mlp, sa: np.ndarray, y: np.ndarray) -> tuple[float, GradientBundle]:
    q, trace = forward_traced(critic, sa)
    err = y - q[:, 0]
    loss = float(np.mean(err * err))
    _check_finite("critic loss", loss)
    grads = backward(critic, sa, (-2.0 / len(y) * err)[:, None], trace=trace)
    return loss, grads


class DdpgAgent:
    """Deterministic actor ``mu(s)`` and critic ``Q(s, a)`` with Polyak-tracked targets."""

    algo = "ddpg"

    def __init__(self, spec: EnvSpec, rng: np.random.Generator, cfg: AgentConfig | None = None):
        self.spec = spec
        self.cfg = cfg or AgentConfig()
        s, a, h = spec.state_dim, spec.action_dim, list(self.cfg.hidden)
        self.actor = init_mlp([s, *h, a], rng, "relu", "tanh-scaled", spec.action_bound, final_scale=1e-3)
        self.critic = init_mlp([s + a, *h, 1], rng)
        self.actor_target = self.actor.copy()
        self.critic_target = self.critic.copy()
        self.actor_adam = AdamState.for_net(self.actor, lr=self.cfg.actor_lr)
        self.critic_adam = AdamState.for_net(self.critic, lr=self.cfg.critic_lr)

    def policy(self, state) -> np.ndarray:
        return forward(self.actor, state)

    def act(self, state, noise_scale: float, rng: np.random.Generator) -> np.ndarray:
        if noise_scale < 0:
            raise ValueError("noise scale must be non-negative")
        eps = rng.standard_normal(self.spec.action_dim)
        b = self.spec.action_bound
        return np.clip(self.policy(state) + noise_scale * eps, -b, b)

    def q_value(self, states, actions, target: bool = False) -> np.ndarray:
        net = self.critic_target if target else self.critic
        return forward(net, np.hstack([np.atleast_2d(states), np.atleast_2d(actions)]))[:, 0]

    def terminal_value(self, state) -> float:
        """Q'(s, mu(s)) used to bootstrap the end of an evaluation trajectory."""
        return float(self.q_value(state, self.policy(state), target=True)[0])

    def td_target(self, batch: Batch) -> np.ndarray:
        next_a = forward(self.actor_target, batch.next_states)
        next_q = self.q_value(batch.next_states, next_a, target=True)
        return td_target(batch.rewards, batch.dones, next_q, self.cfg.gamma)

    def critic_grads(self, batch: Batch, y: np.ndarray | None = None) -> tuple[float, GradientBundle]:
        """Loss ``mean((y - Q(s, a))^2)`` and its gradient w.r.t. the online critic."""
        if y is None:
            y = self.td_target(batch)
        return _critic_step(self.critic, np.hstack([batch.states, batch.actions]), y)

    def actor_grads(self, batch: Batch) -> tuple[float, GradientBundle]:
        """Objective ``mean(Q(s, mu(s)))`` and its gradient w.r.t. the actor (for ascent)."""
        n, sdim = len(batch), self.spec.state_dim
        a, a_trace = forward_traced(self.actor, batch.states)
        sa = np.hstack([batch.states, a])
        q, c_trace = forward_traced(self.critic, sa)
        objective = float(q.mean())
        dq = backward(self.critic, sa, np.full((n, 1), 1.0 / n), trace=c_trace).input[:, sdim:]
        return objective, backward(self.actor, batch.states, dq, trace=a_trace)

    def update(self, batch: Batch) -> tuple[float, float]:
        if len(batch) == 0:
            raise ValueError("empty batch")
        loss, cg = self.critic_grads(batch)
        adam_step(self.critic, cg, self.critic_adam)
        objective, ag = self.actor_grads(batch)
        _check_finite("actor objective", objective)
        adam_step(self.actor, ag.scaled(-1.0), self.actor_adam)
        soft_update(self.critic_target, self.critic, self.cfg.tau)
        soft_update(self.actor_target, self.actor, self.cfg.tau)
        return loss, objective


def _log1m_tanh2(u: np.ndarray) -> np.ndarray:
    # log(1 - tanh(u)^2), stable for large |u|
    return 2.0 * (_LOG2 - u - np.logaddexp(0.0, -2.0 * u))


@dataclass
class PolicySample:
    actions: np.ndarray
    log_prob: np.ndarray
    pre_tanh: np.ndarray
    mean: np.ndarray
    log_std: np.ndarray
    noise: np.ndarray
    std_active: np.ndarray  # where the log-std clamp passes gradient through


class SacAgent:
    """Squashed-Gaussian actor, twin soft critics, fixed temperature."""

    algo = "sac"

    def __init__(self, spec: EnvSpec, rng: np.random.Generator, cfg: AgentConfig | None = None):
        self.spec = spec
        self.cfg = cfg or AgentConfig()
        s, a, h = spec.state_dim, spec.action_dim, list(self.cfg.hidden)
        self.actor = init_mlp([s, *h, 2 * a], rng, final_scale=1e-3)
        self.q1 = init_mlp([s + a, *h, 1], rng)
        self.q2 = init_mlp([s + a, *h, 1], rng)
        self.q1_target = self.q1.copy()
        self.q2_target = self.q2.copy()
        self.actor_adam = AdamState.for_net(self.actor, lr=self.cfg.actor_lr)
        self.q1_adam = AdamState.for_net(self.q1, lr=self.cfg.critic_lr)
        self.q2_adam = AdamState.for_net(self.q2, lr=self.cfg.critic_lr)

    @property
    def critic(self) -> Mlp:
        return self.q1

    def _heads(self, out: np.ndarray, variance_scale: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        a = self.spec.action_dim
        mean, raw = out[:, :a], out[:, a:]
        lo, hi = self.cfg.log_std_min, self.cfg.log_std_max
        log_std = np.clip(raw, lo, hi)
        active = (raw > lo) & (raw < hi)
        if variance_scale != 1.0:
            log_std = np.clip(log_std + math.log(variance_scale), *LOG_STD_HARD)
        return mean, log_std, active

    def effective_log_std(self, states, variance_scale: float = 1.0) -> np.ndarray:
        return self._heads(np.atleast_2d(forward(self.actor, np.atleast_2d(states))), variance_scale)[1]

    def sample(self, states, noise: np.ndarray, variance_scale: float = 1.0, _out=None) -> PolicySample:
        """Reparameterised draw ``a = bound * tanh(mean + std * noise)`` with its log-density."""
        states = np.atleast_2d(states)
        out = forward(self.actor, states) if _out is None else _out
        mean, log_std, active = self._heads(out, variance_scale)
        noise = np.asarray(noise, dtype=np.float64).reshape(mean.shape)
        u = mean + np.exp(log_std) * noise
        b = self.spec.action_bound
        logp = (-0.5 * noise * noise - log_std - _HALF_LOG_2PI - math.log(b) - _log1m_tanh2(u)).sum(axis=1)
        return PolicySample(b * np.tanh(u), logp, u, mean, log_std, noise, active)

    def act(self, state, variance_scale: float, rng: np.random.Generator, deterministic: bool = False) -> tuple[np.ndarray, float]:
        if deterministic:
            s = self.sample(state, np.zeros((1, self.spec.action_dim)), variance_scale)
            return s.actions[0], float(s.log_prob[0])
        s = self.sample(state, rng.standard_normal((1, self.spec.action_dim)), variance_scale)
        return s.actions[0], float(s.log_prob[0])

    def policy(self, state) -> np.ndarray:
        return self.act(state, 1.0, None, deterministic=True)[0]

    def _q(self, net: Mlp, states, actions) -> np.ndarray:
        return forward(net, np.hstack([np.atleast_2d(states), np.atleast_2d(actions)]))[:, 0]

    def q_value(self, states, actions, target: bool = False) -> np.ndarray:
        n1, n2 = (self.q1_target, self.q2_target) if target else (self.q1, self.q2)
        return np.minimum(self._q(n1, states, actions), self._q(n2, states, actions))

    def terminal_value(self, state) -> float:
        return float(self.q_value(state, self.policy(state), target=True)[0])

    def td_target(self, batch: Batch, rng: np.random.Generator | None = None, noise: np.ndarray | None = None) -> np.ndarray:
        if noise is None:
            noise = rng.standard_normal((len(batch), self.spec.action_dim))
        nxt = self.sample(batch.next_states, noise)
        q1 = self._q(self.q1_target, batch.next_states, nxt.actions)
        q2 = self._q(self.q2_target, batch.next_states, nxt.actions)
        return soft_td_target(batch.rewards, batch.dones, q1, q2, nxt.log_prob, self.cfg.gamma, self.cfg.alpha)

    def critic_grads(self, batch: Batch, y: np.ndarray) -> tuple[tuple[float, float], GradientBundle, GradientBundle]:
        sa = np.hstack([batch.states, batch.actions])
        l1, g1 = _critic_step(self.q1, sa, y)
        l2, g2 = _critic_step(self.q2, sa, y)
        return (l1, l2), g1, g2

    def actor_grads(self, batch: Batch, noise: np.ndarray) -> tuple[float, GradientBundle]:
        """Loss ``mean(alpha log pi(a~|s) - min_j Q_j(s, a~))`` and its actor gradient.

        ``noise`` is the standard-normal base sample of the reparameterisation.
        """
        n, sdim, b = len(batch), self.spec.state_dim, self.spec.action_bound
        alpha = self.cfg.alpha
        out, a_trace = forward_traced(self.actor, batch.states)
        smp = self.sample(batch.states, noise, _out=out)
        sa = np.hstack([batch.states, smp.actions])
        q1, t1 = forward_traced(self.q1, sa)
        q2, t2 = forward_traced(self.q2, sa)
        use1 = q1[:, 0] <= q2[:, 0]
        q_min = np.where(use1, q1[:, 0], q2[:, 0])
        loss = float(np.mean(alpha * smp.log_prob - q_min))
        _check_finite("actor loss", loss)

        # dL/da through whichever critic is the minimum for each sample
        w1 = np.where(use1, -1.0 / n, 0.0)[:, None]
        w2 = np.where(use1, 0.0, -1.0 / n)[:, None]
        da = backward(self.q1, sa, w1, trace=t1).input[:, sdim:] + backward(self.q2, sa, w2, trace=t2).input[:, sdim:]
        th = np.tanh(smp.pre_tanh)
        du = da * b * (1.0 - th * th)
        std_noise = np.exp(smp.log_std) * smp.noise
        # d log pi / du = 2 tanh(u); d log pi / d log_std adds the -1 of the Gaussian normaliser
        d_mean = du + (alpha / n) * 2.0 * th
        d_log_std = du * std_noise + (alpha / n) * (2.0 * th * std_noise - 1.0)
        d_raw = d_log_std * smp.std_active
        return loss, backward(self.actor, batch.states, np.hstack([d_mean, d_raw]), trace=a_trace)

    def update(self, batch: Batch, rng: np.random.Generator) -> tuple[tuple[float, float], float]:
        if len(batch) == 0:
            raise ValueError("empty batch")
        y = self.td_target(batch, rng)
        losses, g1, g2 = self.critic_grads(batch, y)
        adam_step(self.q1, g1, self.q1_adam)
        adam_step(self.q2, g2, self.q2_adam)
        loss, ag = self.actor_grads(batch, rng.standard_normal((len(batch), self.spec.action_dim)))
        adam_step(self.actor, ag, self.actor_adam)
        soft_update(self.q1_target, self.q1, self.cfg.tau)
        soft_update(self.q2_target, self.q2, self.cfg.tau)
        return losses, loss


def make_agent(algo: str, spec: EnvSpec, rng: np.random.Generator, cfg: AgentConfig | None = None):
    if algo == "ddpg":
        return DdpgAgent(spec, rng, cfg)
    if algo == "sac":
        return SacAgent(spec, rng, cfg)
    raise ValueError(f"unknown algo {algo!r}; choose ddpg or sac")
