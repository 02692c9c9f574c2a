import logging

import numpy as np

from seqwm.worldmodel import TrajectoryBatch

logger = logging.getLogger(__name__)


class ReplayBuffer:
    """
    Ring buffer of team transitions with episode boundaries.

    Each slot holds every agent's observation and action at one step, the
    shared reward and the terminal flag. The observation after an episode's
    latest stored step is kept per episode, so windows can end on it.
    """

    def __init__(self, capacity: int, obs_dims, act_dims, seed=None):
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.obs = [np.zeros((capacity, d), dtype=np.float32) for d in obs_dims]
        self.act = [np.zeros((capacity, d), dtype=np.float32) for d in act_dims]
        self.rew = np.zeros(capacity, dtype=np.float32)
        self.term = np.zeros(capacity, dtype=bool)
        self.episode = np.full(capacity, -1, dtype=np.int64)
        self.tick = np.zeros(capacity, dtype=np.int64)
        self.last_obs: dict[int, list[np.ndarray]] = {}
        self.ptr = 0
        self.size = 0
        self.rng = np.random.default_rng(seed)
        self._segments = None

    def __len__(self):
        return self.size

    def __repr__(self):
        return f"ReplayBuffer(size={self.size}, capacity={self.capacity}, episodes={len(self.last_obs)})"

    def add(self, episode: int, t: int, observations, actions, reward: float, terminated: bool, next_observations):
        p = self.ptr
        overwritten = int(self.episode[p]) if self.size == self.capacity else None
        for i, (o, a) in enumerate(zip(observations, actions)):
            self.obs[i][p] = o
            self.act[i][p] = a
        self.rew[p] = reward
        self.term[p] = terminated
        self.episode[p] = episode
        self.tick[p] = t
        self.last_obs[episode] = [np.asarray(o, dtype=np.float32) for o in next_observations]
        self.ptr = (p + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        if overwritten is not None and overwritten != episode and self.episode[self.ptr] != overwritten:
            self.last_obs.pop(overwritten, None)
        self._segments = None

    # ------------------- SAMPLING -------------------
    def _order(self) -> np.ndarray:
        """Storage indices from oldest to newest."""
        start = self.ptr if self.size == self.capacity else 0
        return (start + np.arange(self.size)) % self.capacity

    def _remaining(self) -> tuple[np.ndarray, np.ndarray]:
        """(order, steps left in the contiguous episode run from each position)."""
        if self._segments is None:
            order = self._order()
            ep, tk = self.episode[order], self.tick[order]
            same = (ep[1:] == ep[:-1]) & (tk[1:] == tk[:-1] + 1)
            starts = np.r_[True, ~same]
            seg_id = np.cumsum(starts) - 1
            seg_end = np.r_[np.flatnonzero(starts)[1:] - 1, len(order) - 1]
            self._segments = (order, seg_end[seg_id] - np.arange(len(order)) + 1)
        return self._segments

    def sample(self, batch_size: int, length: int, min_valid: int = 1) -> TrajectoryBatch:
        """
        ``batch_size`` windows of ``length`` steps, each inside one episode and
        starting where at least ``min_valid`` steps remain. Steps past the
        episode's stored end are padding with ``valid`` False.
        """
        order, remaining = self._remaining()
        starts = np.flatnonzero(remaining >= min_valid)
        if starts.size == 0:
            raise ValueError(f"no window with {min_valid} steps in a buffer of {self.size} transitions")
        k = self.rng.choice(starts, size=batch_size, replace=True)
        rem = remaining[k]
        offsets = np.arange(length + 1)
        positions = order[k[:, None] + np.minimum(offsets, rem[:, None] - 1)]
        valid = offsets[None, :length] < rem[:, None]
        after_end = offsets[None, :] >= rem[:, None]
        last_episode = self.episode[positions[:, -1]]

        observations = []
        for i, obs in enumerate(self.obs):
            window = obs[positions].astype(np.float64)
            tail = np.stack([self.last_obs[int(e)][i] for e in last_episode]).astype(np.float64)
            window[after_end] = np.broadcast_to(tail[:, None], window.shape)[after_end]
            observations.append(window)
        step_positions = positions[:, :length]
        actions = [np.where(valid[..., None], act[step_positions], 0.0).astype(np.float64) for act in self.act]
        return TrajectoryBatch(
            observations=observations,
            actions=actions,
            rewards=np.where(valid, self.rew[step_positions], 0.0).astype(np.float64),
            terminated=valid & self.term[step_positions],
            valid=valid,
        )
