"""
Coupled linear team with known dynamics.

x^i' = a_scale * x^i + b_scale * a^i + coupling * a^{i-1} + noise

Agent ``i`` sees only its own state, but its next state depends on its
predecessor's action. A model that receives the predecessor's planned action
can predict that term; a decentralized one cannot.
"""

from dataclasses import dataclass

import numpy as np

from seqwm.envs.base import MultiAgentEnv


@dataclass
class LinearRollout:
    states: np.ndarray
    rewards: np.ndarray

    @property
    def total_return(self) -> float:
        return float(self.rewards.sum())


class LinearTeamEnv(MultiAgentEnv):
    def __init__(
        self,
        n_agents: int = 2,
        state_dim: int = 2,
        coupling: float = 0.8,
        a_scale: float = 0.9,
        b_scale: float = 0.5,
        transition_noise: float = 0.0,
        control_cost: float = 0.01,
        init_scale: float = 1.0,
        episode_limit: int = 50,
        obs_noise: float = 0.0,
        action_delay: int = 0,
        seed=None,
    ):
        super().__init__(n_agents, episode_limit, obs_noise, action_delay, seed)
        self.obs_dim = state_dim
        self.act_dim = state_dim
        self.coupling = coupling
        self.a_scale = a_scale
        self.b_scale = b_scale
        self.transition_noise = transition_noise
        self.control_cost = control_cost
        self.init_scale = init_scale
        self.state = np.zeros((n_agents, state_dim))

    def _reset_state(self) -> None:
        self.state = self.init_scale * self.rng.uniform(-1.0, 1.0, size=(self.n_agents, self.obs_dim))

    def _observe(self, agent: int) -> np.ndarray:
        return self.state[agent].copy()

    def transition(self, state: np.ndarray, actions: np.ndarray) -> np.ndarray:
        """Noise-free next state for (n, d) ``state`` and ``actions``."""
        previous = np.zeros_like(actions)
        previous[1:] = actions[:-1]
        return self.a_scale * state + self.b_scale * actions + self.coupling * previous

    def reward(self, state: np.ndarray, actions: np.ndarray) -> float:
        return float(-np.mean(np.sum(state**2, axis=-1)) - self.control_cost * np.mean(np.sum(actions**2, axis=-1)))

    def _advance(self, actions):
        actions = np.stack(actions)
        nxt = self.transition(self.state, actions)
        if self.transition_noise > 0:
            nxt = nxt + self.transition_noise * self.rng.standard_normal(nxt.shape)
        self.state = nxt
        return self.reward(nxt, actions), False, {}


def oracle_rollout(env: LinearTeamEnv, state: np.ndarray, joint_actions: np.ndarray) -> LinearRollout:
    """
    Exact trajectory from ``state`` (n, d) under ``joint_actions`` (H, n, d).

    ``states`` has shape (H + 1, n, d) and starts with ``state``.
    """
    if env.transition_noise > 0:
        raise ValueError("oracle rollout needs transition_noise == 0")
    state = np.asarray(state, dtype=np.float64)
    joint_actions = np.clip(np.asarray(joint_actions, dtype=np.float64), -1.0, 1.0)
    states = [state]
    rewards = []
    for actions in joint_actions:
        state = env.transition(state, actions)
        states.append(state)
        rewards.append(env.reward(state, actions))
    return LinearRollout(np.stack(states), np.asarray(rewards))
