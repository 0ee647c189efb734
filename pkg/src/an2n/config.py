"""Run configuration: a flat ``key = value`` text file, overridable from the CLI."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .agents import AgentConfig
from .envs import ENVIRONMENTS
from .explore import METRICS, NoiseTier, PctAddSchedule, SimilarityConfig


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    env: str = "pendulum"
    algo: str = "ddpg"
    an2n: bool = True
    seed: int = 0
    total_steps: int = 50_000
    epoch_steps: int = 2_000
    eval_episodes: int = 10
    warmup_steps: int = 1_000
    update_every: int = 1
    buffer_size: int = 1_000_000

    # networks / learners
    hidden: str = "64,64"
    gamma: float = 0.99
    tau: float = 0.005
    batch_size: int = 128
    actor_lr: float = 1e-4
    critic_lr: float = 1e-3
    alpha: float = 0.2
    log_std_min: float = -5.0
    log_std_max: float = 1.0

    # noise tiers
    noise_small: float = 0.05
    noise_big: float = 0.4
    sac_scale_up: float = 1.5
    sac_scale_down: float = 0.5

    # similarity gate and threshold controller
    metric: str = "cosine"
    center: str = "running"  # running | queue | none
    sim_threshold: float = 0.95
    sim_eta: float = 0.05
    sim_min: float = 0.5
    sim_max: float = 0.999
    sim_window: int = 1000
    pct_add_start: float = 0.4
    pct_add_end: float = 0.2
    pct_add_steps: int = 0  # 0: decay over total_steps

    # key-state queue
    k_lower: int = 5
    k_upper: int = 20
    fifo_sizing: str = "admission"  # admission | capacity
    avg_reward: str = "running"  # running | epoch

    timing: bool = False  # record real wall-clock ms (breaks byte-identical reruns)

    def validate(self) -> RunConfig:
        problems = []
        if self.env not in ENVIRONMENTS:
            problems.append(f"env must be one of {sorted(ENVIRONMENTS)}, got {self.env!r}")
        if self.algo not in ("ddpg", "sac"):
            problems.append(f"algo must be ddpg or sac, got {self.algo!r}")
        if self.total_steps <= 0 or self.epoch_steps <= 0:
            problems.append("total_steps and epoch_steps must be positive")
        elif self.total_steps % self.epoch_steps:
            problems.append(f"total_steps ({self.total_steps}) must be divisible by epoch_steps ({self.epoch_steps})")
        if self.eval_episodes < 1:
            problems.append("eval_episodes must be >= 1")
        if self.update_every < 1:
            problems.append("update_every must be >= 1")
        if self.metric not in METRICS:
            problems.append(f"metric must be one of {METRICS}, got {self.metric!r}")
        if self.center not in ("running", "queue", "none"):
            problems.append(f"center must be running, queue or none, got {self.center!r}")
        if self.fifo_sizing not in ("admission", "capacity"):
            problems.append(f"fifo_sizing must be admission or capacity, got {self.fifo_sizing!r}")
        if self.avg_reward not in ("running", "epoch"):
            problems.append(f"avg_reward must be running or epoch, got {self.avg_reward!r}")
        if not 0 < self.k_lower <= self.k_upper:
            problems.append("need 0 < k_lower <= k_upper")
        if not self.noise_big > self.noise_small >= 0:
            problems.append("need noise_big > noise_small >= 0")
        if not 0 <= self.pct_add_end <= self.pct_add_start <= 1:
            problems.append("need 0 <= pct_add_end <= pct_add_start <= 1")
        try:
            self.hidden_sizes()
        except ValueError:
            problems.append(f"hidden must be comma-separated positive ints, got {self.hidden!r}")
        if problems:
            raise ConfigError("invalid run configuration:\n  " + "\n  ".join(problems))
        return self

    @property
    def arm(self) -> str:
        return f"{self.algo}+an2n" if self.an2n else self.algo

    @property
    def run_id(self) -> str:
        return f"{self.env}-{self.algo}-{'an2n' if self.an2n else 'base'}-s{self.seed}"

    def hidden_sizes(self) -> tuple[int, ...]:
        sizes = tuple(int(x) for x in self.hidden.split(",") if x.strip())
        if not sizes or min(sizes) <= 0:
            raise ValueError(self.hidden)
        return sizes

    def agent_config(self) -> AgentConfig:
        return AgentConfig(
            hidden=self.hidden_sizes(),
            gamma=self.gamma,
            tau=self.tau,
            batch_size=self.batch_size,
            actor_lr=self.actor_lr,
            critic_lr=self.critic_lr,
            alpha=self.alpha,
            log_std_min=self.log_std_min,
            log_std_max=self.log_std_max,
        )

    def similarity_config(self) -> SimilarityConfig:
        return SimilarityConfig(self.metric, None, self.sim_threshold, self.sim_eta, self.sim_min, self.sim_max)

    def noise_tier(self) -> NoiseTier:
        return NoiseTier(self.noise_small, self.noise_big - self.noise_small, self.sac_scale_up, self.sac_scale_down)

    def schedule(self) -> PctAddSchedule:
        return PctAddSchedule(self.pct_add_start, self.pct_add_end, self.pct_add_steps or self.total_steps)

    def replace(self, **changes) -> RunConfig:
        return dataclasses.replace(self, **changes)


_FIELDS = {f.name: f for f in fields(RunConfig)}


def _coerce(key: str, raw: str):
    default = getattr(RunConfig, key)
    if isinstance(default, bool):
        low = raw.strip().lower()
        if low in ("on", "true", "yes", "1"):
            return True
        if low in ("off", "false", "no", "0"):
            return False
        raise ConfigError(f"{key}: expected on/off, got {raw!r}")
    try:
        if isinstance(default, int):
            return int(float(raw)) if "e" in raw.lower() else int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {type(default).__name__}") from None
    return raw.strip()


def parse_overrides(pairs: dict[str, str], base: RunConfig | None = None) -> RunConfig:
    cfg = base or RunConfig()
    unknown = sorted(set(pairs) - set(_FIELDS))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    return cfg.replace(**{k: _coerce(k, v) for k, v in pairs.items()})


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    pairs = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value")
        key, value = (p.strip() for p in line.split("=", 1))
        pairs[key] = value
    return pairs


def load_config(path, overrides: dict[str, str] | None = None) -> RunConfig:
    pairs = parse_config_text(Path(path).read_text(), str(path)) if path else {}
    pairs.update(overrides or {})
    return parse_overrides(pairs).validate()


def dump_config(cfg: RunConfig) -> str:
    lines = []
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, bool):
            v = "on" if v else "off"
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"
