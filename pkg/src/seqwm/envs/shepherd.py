"""
Two herders drive a scripted sheep into a pen.

The sheep flees the nearest herder with a speed that falls off with distance
and is capped; it does not move when no herder is within ``flee_radius``.
"""

import numpy as np

from seqwm.envs.base import MultiAgentEnv

ARENA = 5.0


class ShepherdEnv(MultiAgentEnv):
    act_dim = 2
    obs_dim = 8

    def __init__(
        self,
        dt: float = 0.1,
        max_speed: float = 1.0,
        sheep_speed: float = 1.2,
        flee_radius: float = 2.5,
        pen_center: tuple = (4.0, 0.0),
        pen_radius: float = 0.8,
        time_penalty: float = 0.01,
        success_bonus: float = 5.0,
        episode_limit: int = 200,
        obs_noise: float = 0.0,
        action_delay: int = 0,
        seed=None,
    ):
        super().__init__(2, episode_limit, obs_noise, action_delay, seed)
        self.dt = dt
        self.max_speed = max_speed
        self.sheep_speed = sheep_speed
        self.flee_radius = flee_radius
        self.pen = np.asarray(pen_center, dtype=np.float64)
        self.pen_radius = pen_radius
        self.time_penalty = time_penalty
        self.success_bonus = success_bonus
        self.sheep = np.zeros(2)
        self.pos = np.zeros((2, 2))

    def _reset_state(self) -> None:
        self.sheep = np.array([self.rng.uniform(-1.0, 1.0), self.rng.uniform(-1.5, 1.5)])
        self.pos = np.stack([
            [self.rng.uniform(-4.0, -3.0), self.rng.uniform(0.5, 2.0)],
            [self.rng.uniform(-4.0, -3.0), self.rng.uniform(-2.0, -0.5)],
        ])

    def positions(self):
        return self.pos.tolist() + [self.sheep.tolist()]

    def _observe(self, agent: int) -> np.ndarray:
        own = self.pos[agent]
        return np.concatenate([own, self.sheep - own, self.pen - own, self.pos[1 - agent] - own])

    def sheep_velocity(self) -> np.ndarray:
        away = self.sheep - self.pos
        dist = np.linalg.norm(away, axis=1)
        nearest = int(np.argmin(dist))
        d = max(float(dist[nearest]), 1e-6)
        if d > self.flee_radius:
            return np.zeros(2)
        speed = min(self.sheep_speed, self.sheep_speed * 0.5 / d)
        return speed * away[nearest] / d

    def _advance(self, actions):
        self.pos = np.clip(self.pos + self.dt * self.max_speed * np.stack(actions), -ARENA, ARENA)
        before = np.linalg.norm(self.sheep - self.pen)
        self.sheep = np.clip(self.sheep + self.dt * self.sheep_velocity(), -ARENA, ARENA)
        after = np.linalg.norm(self.sheep - self.pen)
        success = bool(after <= self.pen_radius)
        reward = float(before - after) - self.time_penalty + (self.success_bonus if success else 0.0)
        return reward, success, {"success": success}
