"""
Two agents push a long box to a target line.

The box responds quasi-statically: it moves only while the summed push of
agents touching its back face exceeds the friction threshold, and it turns
with the torque of unequal pushes. A single agent's push is below the
threshold, so the task needs both agents.
"""

import numpy as np

from seqwm.envs.base import MultiAgentEnv

HALF_LENGTH = 1.0
HALF_DEPTH = 0.3
CONTACT_REACH = 0.4
PUSH_FORCE = 1.0
TRANSLATION_GAIN = 1.0
ROTATION_GAIN = 0.5


class PushBox2DEnv(MultiAgentEnv):
    act_dim = 2
    obs_dim = 10

    def __init__(
        self,
        dt: float = 0.1,
        max_speed: float = 1.0,
        friction: float = 1.2,
        target_x: float = 3.0,
        heading_tolerance: float = 0.3,
        time_penalty: float = 0.01,
        success_bonus: float = 5.0,
        episode_limit: int = 150,
        obs_noise: float = 0.0,
        action_delay: int = 0,
        seed=None,
    ):
        super().__init__(2, episode_limit, obs_noise, action_delay, seed)
        self.dt = dt
        self.max_speed = max_speed
        self.friction = friction
        self.target_x = target_x
        self.heading_tolerance = heading_tolerance
        self.time_penalty = time_penalty
        self.success_bonus = success_bonus
        self.box = np.zeros(2)
        self.heading = 0.0
        self.pos = np.zeros((2, 2))

    def _reset_state(self) -> None:
        self.box = np.array([0.0, self.rng.uniform(-0.5, 0.5)])
        self.heading = float(self.rng.uniform(-0.2, 0.2))
        self.pos = np.stack([
            self.box + [self.rng.uniform(-2.5, -1.5), self.rng.uniform(0.2, 1.0)],
            self.box + [self.rng.uniform(-2.5, -1.5), self.rng.uniform(-1.0, -0.2)],
        ])

    def positions(self):
        return self.pos.tolist() + [self.box.tolist()]

    @property
    def forward(self) -> np.ndarray:
        return np.array([np.cos(self.heading), np.sin(self.heading)])

    def to_box_frame(self, p: np.ndarray) -> np.ndarray:
        """(u, w): u along the push axis, w along the face."""
        rel = p - self.box
        f = self.forward
        return np.array([rel @ f, rel @ np.array([-f[1], f[0]])])

    def from_box_frame(self, local: np.ndarray) -> np.ndarray:
        f = self.forward
        return self.box + local[0] * f + local[1] * np.array([-f[1], f[0]])

    def _observe(self, agent: int) -> np.ndarray:
        own = self.pos[agent]
        other = self.pos[1 - agent] - own
        target = np.array([self.target_x, self.box[1]]) - self.box
        return np.concatenate([own, self.box - own, [np.cos(self.heading), np.sin(self.heading)], target, other])

    def _in_contact(self, local: np.ndarray) -> bool:
        return -HALF_DEPTH - CONTACT_REACH <= local[0] <= -HALF_DEPTH and abs(local[1]) <= HALF_LENGTH

    def _advance(self, actions):
        pushes = []
        for i, a in enumerate(actions):
            moved = self.pos[i] + self.dt * self.max_speed * a
            local = self.to_box_frame(moved)
            # agents cannot enter the box
            if abs(local[1]) <= HALF_LENGTH and abs(local[0]) < HALF_DEPTH:
                local[0] = -HALF_DEPTH if local[0] < 0 else HALF_DEPTH
                moved = self.from_box_frame(local)
            self.pos[i] = moved
            push = max(float(a @ self.forward), 0.0) * PUSH_FORCE if self._in_contact(local) else 0.0
            pushes.append((push, local[1]))

        start_x = self.box[0]
        force = sum(p for p, _ in pushes)
        if force > self.friction:
            excess = force - self.friction
            torque = sum(p * w for p, w in pushes) / HALF_LENGTH
            # contacts ride along with the box
            contacts = [self.to_box_frame(self.pos[i]) for i in range(2)]
            self.box = self.box + TRANSLATION_GAIN * excess * self.dt * self.forward
            self.heading -= ROTATION_GAIN * torque * self.dt
            for i, (push, _) in enumerate(pushes):
                if push > 0:
                    self.pos[i] = self.from_box_frame(contacts[i])

        reward = float(self.box[0] - start_x) - self.time_penalty - 0.1 * abs(self.heading) * self.dt
        success = bool(self.box[0] >= self.target_x and abs(self.heading) <= self.heading_tolerance)
        if success:
            reward += self.success_bonus
        return reward, success, {"success": success, "push": force}
