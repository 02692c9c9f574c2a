"""
Corridor with a narrow gate.

Disc agents start left of a wall at x = 0 and must pass through a gate of
width ``gate_width`` centred at y = 0 to reach goals on the right. The gate
fits one agent at a time. Velocity is commanded directly (v = a * max_speed).
"""

import numpy as np

from seqwm.envs.base import MultiAgentEnv

ARENA_X = (-5.0, 5.0)
ARENA_Y = (-3.0, 3.0)
START_X = (-4.0, -2.0)
GOAL_X = 2.5


class CorridorGateEnv(MultiAgentEnv):
    act_dim = 2

    def __init__(
        self,
        n_agents: int = 2,
        dt: float = 0.1,
        max_speed: float = 1.0,
        agent_radius: float = 0.3,
        gate_width: float = 1.0,
        collision_penalty: float = 0.5,
        time_penalty: float = 0.01,
        success_bonus: float = 5.0,
        episode_limit: int = 100,
        obs_noise: float = 0.0,
        action_delay: int = 0,
        seed=None,
    ):
        if not 2 <= n_agents <= 5:
            raise ValueError("CorridorGateEnv supports 2 to 5 agents")
        super().__init__(n_agents, episode_limit, obs_noise, action_delay, seed)
        self.obs_dim = 6 + 2 * (n_agents - 1)
        self.dt = dt
        self.max_speed = max_speed
        self.radius = agent_radius
        self.gate_width = gate_width
        self.collision_penalty = collision_penalty
        self.time_penalty = time_penalty
        self.success_bonus = success_bonus
        self.pos = np.zeros((n_agents, 2))
        self.goals = np.zeros((n_agents, 2))
        self.collisions = 0

    def _reset_state(self) -> None:
        lanes = np.linspace(ARENA_Y[0] + 1.0, ARENA_Y[1] - 1.0, self.n_agents)
        self.pos = np.stack([self.rng.uniform(*START_X, size=self.n_agents), lanes], axis=1)
        # jitter never pushes neighbouring lanes into contact
        spacing = lanes[1] - lanes[0]
        jitter = min(0.2, max(0.0, (spacing - 2.0 * self.radius) / 2.0))
        self.pos[:, 1] += self.rng.uniform(-jitter, jitter, size=self.n_agents)
        self.goals = np.stack([np.full(self.n_agents, GOAL_X), lanes], axis=1)
        self.collisions = 0

    def positions(self):
        return self.pos.tolist()

    def _observe(self, agent: int) -> np.ndarray:
        own = self.pos[agent]
        others = np.delete(self.pos, agent, axis=0) - own
        return np.concatenate([own, self.goals[agent] - own, -own, others.reshape(-1)])

    # ------------------- PHYSICS -------------------
    def _hits_wall(self, p: np.ndarray) -> bool:
        in_wall_band = abs(p[0]) < self.radius
        outside_gate = abs(p[1]) > self.gate_width / 2.0 - self.radius
        return bool(in_wall_band and outside_gate)

    def _pairs_in_contact(self, pos: np.ndarray) -> list[tuple[int, int]]:
        pairs = []
        for i in range(self.n_agents):
            for j in range(i + 1, self.n_agents):
                if np.linalg.norm(pos[i] - pos[j]) < 2.0 * self.radius:
                    pairs.append((i, j))
        return pairs

    def _advance(self, actions):
        previous = self.pos.copy()
        proposed = previous + self.dt * self.max_speed * np.stack(actions)
        proposed[:, 0] = np.clip(proposed[:, 0], *ARENA_X)
        proposed[:, 1] = np.clip(proposed[:, 1], *ARENA_Y)

        events = 0
        for i in range(self.n_agents):
            if self._hits_wall(proposed[i]):
                proposed[i] = previous[i]
                events += 1
        # both members of a pair that closes in while in contact are stopped; repeat
        # until none is left. Overlapping pairs may still separate.
        while True:
            pairs = [
                (i, j) for i, j in self._pairs_in_contact(proposed)
                if np.linalg.norm(proposed[i] - proposed[j]) < np.linalg.norm(previous[i] - previous[j])
            ]
            if not pairs:
                break
            for i, j in pairs:
                proposed[i], proposed[j] = previous[i], previous[j]
            events += len(pairs)
        self.pos = proposed
        self.collisions += events

        before = np.linalg.norm(self.goals - previous, axis=1)
        after = np.linalg.norm(self.goals - self.pos, axis=1)
        reward = float(np.mean(before - after)) - self.collision_penalty * events - self.time_penalty
        success = bool(np.all(self.pos[:, 0] > self.radius))
        if success:
            reward += self.success_bonus
        return reward, success, {"success": success, "collisions": events}
