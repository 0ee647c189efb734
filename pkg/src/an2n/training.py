"""Seeded training runs: warm-up, gated exploration, per-epoch evaluation and key-state updates."""

from __future__ import annotations

import logging
import math
import time
import zlib
from dataclasses import dataclass, field

import numpy as np

from .agents import DdpgAgent, SacAgent, make_agent
from .config import RunConfig
from .envs import Env, make_env
from .explore import (
    GateDecision,
    RunningMean,
    ThresholdController,
    gate,
    key_state_count,
    noise_for,
    pct_add_at,
    score_returns,
    select_worst,
)
from .metrics import MetricsRecord
from .nn import NonFiniteError
from .replay import EvalTrajectory, KeyStateEntry, KeyStateQueue, ReplayBuffer, Transition

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    """A non-finite loss or gradient stopped the run; ``records`` holds the epochs completed so far."""

    def __init__(self, message: str, records: list[MetricsRecord]):
        super().__init__(message)
        self.records = records


def derive_rng(seed: int, label: str) -> np.random.Generator:
    """Independent stream per concern, fixed by (seed, label)."""
    return np.random.default_rng([int(seed), zlib.crc32(label.encode("ascii"))])


@dataclass
class EvalResult:
    returns: np.ndarray
    trajectories: list[EvalTrajectory]

    @property
    def mean(self) -> float:
        return float(np.mean(self.returns))

    @property
    def std(self) -> float:
        return float(np.std(self.returns))

    @property
    def best(self) -> EvalTrajectory:
        return self.trajectories[int(np.argmax(self.returns))]

    @property
    def worst(self) -> EvalTrajectory:
        return self.trajectories[int(np.argmin(self.returns))]


def rollout(env: Env, policy, rng: np.random.Generator) -> EvalTrajectory:
    state = env.reset(rng)
    states, rewards = [], []
    for t in range(env.spec.max_steps):
        res = env.step(state, policy(state), t)
        states.append(state)
        rewards.append(res.reward)
        state = res.state
        if res.done:
            return EvalTrajectory(np.array(states), np.array(rewards), state, res.terminal)
    return EvalTrajectory(np.array(states), np.array(rewards), state, False)


def evaluate(agent, env: Env, episodes: int, rng: np.random.Generator) -> EvalResult:
    """Noise-free rollouts of the agent's deterministic policy."""
    if episodes < 1:
        raise ValueError("need at least one evaluation episode")
    trajs = [rollout(env, agent.policy, rng) for _ in range(episodes)]
    return EvalResult(np.array([t.total_reward for t in trajs]), trajs)


def random_policy_returns(env: Env, episodes: int, rng: np.random.Generator) -> np.ndarray:
    """Undiscounted returns of a uniform-random policy: the baseline for learning checks."""
    return np.array([rollout(env, lambda s: env.random_action(rng), rng).total_reward for _ in range(episodes)])


@dataclass
class _EpochStats:
    gated: int = 0
    key: int = 0
    losses: list = field(default_factory=list)


class Trainer:
    def __init__(self, cfg: RunConfig):
        self.cfg = cfg.validate()
        self.env = make_env(cfg.env)
        spec = self.env.spec
        self.rng_env = derive_rng(cfg.seed, "env")
        self.rng_warmup = derive_rng(cfg.seed, "warmup")
        self.rng_noise = derive_rng(cfg.seed, "noise")
        self.rng_batch = derive_rng(cfg.seed, "batch")
        self.rng_update = derive_rng(cfg.seed, "update")
        self.rng_eval = derive_rng(cfg.seed, "eval")
        self.agent: DdpgAgent | SacAgent = make_agent(cfg.algo, spec, derive_rng(cfg.seed, "init"), cfg.agent_config())
        self.replay = ReplayBuffer(cfg.buffer_size, spec.state_dim, spec.action_dim)
        self.queue = KeyStateQueue(cfg.k_lower, cfg.k_upper)
        self.sim = cfg.similarity_config()
        self.controller = ThresholdController(self.sim, cfg.sim_window)
        self.schedule = cfg.schedule()
        self.tier = cfg.noise_tier()
        self.state_mean = RunningMean()
        self.eval_returns: list[float] = []
        self.admitted: list[KeyStateEntry] = []
        self.records: list[MetricsRecord] = []
        self.step = 0

    # -- per-step pieces ---------------------------------------------------

    def _gate(self, state) -> GateDecision | None:
        if not self.cfg.an2n:
            return None
        if self.cfg.center == "running":
            self.sim.mean = self.state_mean.mean
        elif self.cfg.center == "queue" and len(self.queue):
            self.sim.mean = self.queue.state_matrix().mean(axis=0)
        else:
            self.sim.mean = None
        return gate(state, self.queue, self.sim)

    def _act(self, state, decision: GateDecision | None) -> np.ndarray:
        if isinstance(self.agent, SacAgent):
            return self.agent.act(state, noise_for(decision, self.tier, "sac"), self.rng_noise)[0]
        return self.agent.act(state, noise_for(decision, self.tier, "ddpg"), self.rng_noise)

    def _update(self) -> float:
        batch = self.replay.sample(self.cfg.batch_size, self.rng_batch)
        if isinstance(self.agent, SacAgent):
            (l1, l2), _ = self.agent.update(batch, self.rng_update)
            return 0.5 * (l1 + l2)
        return self.agent.update(batch)[0]

    # -- per-epoch pieces --------------------------------------------------

    def _admit_key_states(self, result: EvalResult, epoch: int) -> None:
        cfg = self.cfg
        self.eval_returns.extend(result.returns.tolist())
        avg = float(np.mean(self.eval_returns)) if cfg.avg_reward == "running" else result.mean
        best = result.best
        terminal_value = 0.0 if best.terminal else self.agent.terminal_value(best.final_state)
        scores = score_returns(best, terminal_value, cfg.gamma)
        count = key_state_count(avg, best.total_reward, cfg.k_lower, cfg.k_upper)
        if cfg.fifo_sizing == "capacity":
            self.queue.resize(count)
        entries = select_worst(best.states, scores, count, epoch)
        self.queue.admit(entries)
        self.admitted.extend(entries)

    def _end_epoch(self, epoch: int, stats: _EpochStats, t0: float) -> MetricsRecord:
        cfg = self.cfg
        result = evaluate(self.agent, self.env, cfg.eval_episodes, self.rng_eval)
        if cfg.an2n:
            self._admit_key_states(result, epoch)
        rec = MetricsRecord(
            run_id=cfg.run_id,
            seed=cfg.seed,
            env=cfg.env,
            algo=cfg.algo,
            an2n=cfg.an2n,
            epoch=epoch,
            step=self.step,
            eval_return_mean=result.mean,
            eval_return_std=result.std,
            key_fraction=stats.key / stats.gated if stats.gated else 0.0,
            sim_threshold=float(self.sim.threshold),
            fifo_len=len(self.queue),
            critic_loss=float(np.mean(stats.losses)) if stats.losses else math.nan,
            wall_ms=round((time.perf_counter() - t0) * 1000.0, 3) if cfg.timing else 0.0,
        )
        log.info(
            "%s epoch %d step %d return %.1f +- %.1f key %.3f thr %.3f fifo %d",
            cfg.run_id, epoch, self.step, rec.eval_return_mean, rec.eval_return_std,
            rec.key_fraction, rec.sim_threshold, rec.fifo_len,
        )
        return rec

    def run(self) -> list[MetricsRecord]:
        cfg = self.cfg
        env = self.env
        state = env.reset(self.rng_env)
        t_ep = 0
        stats = _EpochStats()
        t0 = time.perf_counter()
        try:
            for step in range(cfg.total_steps):
                if cfg.an2n:
                    self.state_mean.update(state)
                if step < cfg.warmup_steps:
                    action = env.random_action(self.rng_warmup)
                else:
                    decision = self._gate(state)
                    if decision is not None and len(self.queue):
                        self.controller.update(decision, pct_add_at(step, self.schedule))
                    if decision is not None:
                        stats.gated += 1
                        stats.key += decision.is_key
                    action = self._act(state, decision)

                res = env.step(state, action, t_ep)
                self.replay.push(Transition(state, action, res.reward, res.state, res.terminal))
                if step >= cfg.warmup_steps and (step - cfg.warmup_steps) % cfg.update_every == 0:
                    stats.losses.append(self._update())

                state, t_ep = res.state, t_ep + 1
                if res.done:
                    state, t_ep = env.reset(self.rng_env), 0

                self.step = step + 1
                if self.step % cfg.epoch_steps == 0:
                    self.records.append(self._end_epoch(len(self.records), stats, t0))
                    stats = _EpochStats()
                    t0 = time.perf_counter()
        except NonFiniteError as exc:
            raise TrainingDiverged(f"{cfg.run_id}: diverged at step {self.step}: {exc}", self.records) from exc
        return self.records


def run_training(cfg: RunConfig) -> list[MetricsRecord]:
    return Trainer(cfg).run()
