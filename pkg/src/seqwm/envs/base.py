import logging
from abc import ABC, abstractmethod
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from seqwm.exceptions import EnvDoneError, ShapeMismatchError

logger = logging.getLogger(__name__)


@dataclass
class StepResult:
    observations: list[np.ndarray]
    reward: float
    done: bool
    terminated: bool = False
    info: dict = field(default_factory=dict)

    @property
    def success(self) -> bool:
        return bool(self.info.get("success", False))


class MultiAgentEnv(ABC):
    """
    Cooperative team environment with local observations and one shared reward.

    Subclasses implement ``_reset_state``, ``_observe`` and ``_advance``; this
    class handles seeding, action clipping, the episode limit, observation
    noise and action delay.
    """

    n_agents: int
    obs_dim: int
    act_dim: int

    def __init__(self, n_agents: int, episode_limit: int, obs_noise: float = 0.0, action_delay: int = 0, seed=None):
        if action_delay < 0:
            raise ValueError("action_delay must be non-negative")
        self.n_agents = n_agents
        self.episode_limit = episode_limit
        self.obs_noise = obs_noise
        self.action_delay = action_delay
        self.rng = np.random.default_rng(seed)
        self.t = 0
        self.done = True
        self._pending: deque = deque()

    def __repr__(self):
        return f"{type(self).__name__}(n_agents={self.n_agents}, obs_dim={self.obs_dim}, act_dim={self.act_dim})"

    # ------------------- SUBCLASS HOOKS -------------------
    @abstractmethod
    def _reset_state(self) -> None: ...

    @abstractmethod
    def _observe(self, agent: int) -> np.ndarray: ...

    @abstractmethod
    def _advance(self, actions: list[np.ndarray]) -> tuple[float, bool, dict]:
        """Apply clipped actions; return (reward, terminated, info)."""

    def positions(self) -> list[list[float]] | None:
        """Planar agent positions for trajectory export, when the env has them."""
        return None

    # ------------------- PUBLIC API -------------------
    def reset(self, seed=None) -> list[np.ndarray]:
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        self.t = 0
        self.done = False
        zero = [np.zeros(self.act_dim) for _ in range(self.n_agents)]
        self._pending = deque([zero] * self.action_delay)
        self._reset_state()
        return self.observations()

    def observations(self) -> list[np.ndarray]:
        obs = [np.asarray(self._observe(i), dtype=np.float64) for i in range(self.n_agents)]
        if self.obs_noise > 0:
            obs = [o + self.obs_noise * self.rng.standard_normal(o.shape) for o in obs]
        return obs

    def step(self, joint_action) -> StepResult:
        if self.done:
            raise EnvDoneError()
        if len(joint_action) != self.n_agents:
            raise ShapeMismatchError("joint action", self.n_agents, len(joint_action))
        actions = []
        for a in joint_action:
            a = np.asarray(a, dtype=np.float64).reshape(-1)
            if a.shape[0] != self.act_dim:
                raise ShapeMismatchError("action", self.act_dim, a.shape[0])
            actions.append(np.clip(a, -1.0, 1.0))
        if self.action_delay:
            self._pending.append(actions)
            actions = self._pending.popleft()

        reward, terminated, info = self._advance(actions)
        self.t += 1
        truncated = self.t >= self.episode_limit
        self.done = terminated or truncated
        info.setdefault("success", False)
        return StepResult(self.observations(), float(reward), self.done, terminated, info)
