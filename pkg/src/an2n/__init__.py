"""Key-state exploration noise ("add noise to noise") for DDPG and SAC, in numpy."""

from .agents import AgentConfig, DdpgAgent, SacAgent, make_agent
from .config import RunConfig, load_config
from .envs import make_env
from .training import run_training

__all__ = [
    "AgentConfig",
    "DdpgAgent",
    "SacAgent",
    "RunConfig",
    "load_config",
    "make_agent",
    "make_env",
    "run_training",
]
__version__ = "0.1.0"
