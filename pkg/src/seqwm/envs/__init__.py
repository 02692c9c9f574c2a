from seqwm.config import EnvConfig
from seqwm.exceptions import ConfigError

from .base import MultiAgentEnv, StepResult
from .corridor import CorridorGateEnv
from .linear_team import LinearRollout, LinearTeamEnv, oracle_rollout
from .pushbox import PushBox2DEnv
from .shepherd import ShepherdEnv

ENV_NAMES = ("corridor_gate", "linear_team", "push_box", "shepherd")


def make_env(cfg: EnvConfig, seed=None) -> MultiAgentEnv:
    """Build the environment named by ``cfg.name`` from its config section."""
    common = {
        "episode_limit": cfg.episode_limit,
        "obs_noise": cfg.obs_noise,
        "action_delay": cfg.action_delay,
        "seed": seed,
    }
    if cfg.name == "corridor_gate":
        return CorridorGateEnv(
            n_agents=cfg.n_agents, dt=cfg.dt, max_speed=cfg.max_speed, agent_radius=cfg.agent_radius,
            gate_width=cfg.gate_width, collision_penalty=cfg.collision_penalty,
            time_penalty=cfg.time_penalty, success_bonus=cfg.success_bonus, **common,
        )
    if cfg.name == "linear_team":
        return LinearTeamEnv(
            n_agents=cfg.n_agents, state_dim=cfg.state_dim, coupling=cfg.coupling,
            transition_noise=cfg.transition_noise, **common,
        )
    if cfg.name == "push_box":
        if cfg.n_agents != 2:
            raise ConfigError("env.n_agents", "push_box is a two-agent task")
        return PushBox2DEnv(
            dt=cfg.dt, max_speed=cfg.max_speed, friction=cfg.friction, time_penalty=cfg.time_penalty,
            success_bonus=cfg.success_bonus, **common,
        )
    if cfg.name == "shepherd":
        if cfg.n_agents != 2:
            raise ConfigError("env.n_agents", "shepherd is a two-agent task")
        return ShepherdEnv(
            dt=cfg.dt, max_speed=cfg.max_speed, time_penalty=cfg.time_penalty,
            success_bonus=cfg.success_bonus, **common,
        )
    raise ConfigError("env.name", f"unknown environment {cfg.name!r}; expected one of {', '.join(ENV_NAMES)}")
