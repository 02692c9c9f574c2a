"""
Training loop.

Alternates collection and updates: each episode is played with the team
planner acting (random actions during the seed phase), stored in the replay
buffer, and followed by ``train.epochs_per_episode`` sequential updates.
"""

import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from seqwm.autodiff import checkpoint, set_default_dtype
from seqwm.comm import LinkModel, MessageLayout
from seqwm.config import RunConfig, from_flat, save_config, to_flat
from seqwm.envs import MultiAgentEnv, make_env
from seqwm.exceptions import NonFiniteError
from seqwm.harness.buffer import ReplayBuffer
from seqwm.planner import TeamPlanner
from seqwm.records import MetricsRow, MetricsWriter, TimingRow, TimingWriter
from seqwm.worldmodel import AgentModel, LossReport, load_team, save_team, sequential_update

logger = logging.getLogger(__name__)

CHECKPOINT_NAME = "checkpoint.seqwm"
METRICS_NAME = "metrics.csv"
TIMING_NAME = "timing.csv"


def team_layout(cfg: RunConfig, env: MultiAgentEnv) -> MessageLayout | None:
    if not cfg.comm.enabled:
        return None
    return MessageLayout(env.n_agents, env.act_dim, cfg.model.latent_dim, cfg.message_mode)


def build_team(cfg: RunConfig, env: MultiAgentEnv, layout: MessageLayout | None = None, model_cfg=None) -> list[AgentModel]:
    return [
        AgentModel(
            index=i,
            obs_dim=env.obs_dim,
            act_dim=env.act_dim,
            model_cfg=model_cfg or cfg.model,
            train_cfg=cfg.train,
            layout=layout,
            seed=cfg.seed * 1000 + i,
        )
        for i in range(env.n_agents)
    ]


def load_checkpoint(path, cfg: RunConfig, env: MultiAgentEnv) -> list[AgentModel]:
    """Rebuild the team described by ``cfg`` and load its parameters from ``path``."""
    models = build_team(cfg, env, team_layout(cfg, env))
    arrays, metadata = checkpoint.load(path)
    load_team(models, arrays, metadata)
    return models


def stored_config(path) -> RunConfig | None:
    """The run config saved alongside a checkpoint; None when the file is absent or carries none."""
    if not Path(path).exists():
        return None
    _, metadata = checkpoint.load(path)
    stored = metadata.get("config")
    return from_flat(stored) if stored else None


def mean_report(reports: list[LossReport]) -> dict:
    fields = ("dynamics_loss", "reward_loss", "q_loss", "actor_loss", "entropy", "scale")
    return {f: float(np.mean([getattr(r, f) for r in reports])) for f in fields}


@dataclass
class TrainSummary:
    steps: int
    episodes: int
    last_return: float
    checkpoint: Path


class Trainer:
    """Owns the environment, the team, its planner and the replay buffer for one run."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg.validate()
        set_default_dtype(cfg.dtype)
        self.output_dir = Path(cfg.output_dir)
        self.env = make_env(cfg.env, seed=cfg.seed)
        self.layout = team_layout(cfg, self.env)
        self.models = build_team(cfg, self.env, self.layout)
        self.rng = np.random.default_rng(cfg.seed)
        self.planner = TeamPlanner(
            self.models,
            cfg.planner,
            self.layout,
            rng=np.random.default_rng(cfg.seed + 1),
            link=LinkModel(cfg.comm.drop_prob, seed=cfg.seed + 2),
            use_cache=cfg.comm.use_cache,
            wire=cfg.comm.wire,
        )
        n = self.env.n_agents
        self.buffer = ReplayBuffer(
            cfg.train.buffer_size, [self.env.obs_dim] * n, [self.env.act_dim] * n, seed=cfg.seed + 3
        )
        self.step = 0
        self.episode = 0

    def __repr__(self):
        return f"Trainer(env={self.cfg.env.name}, agents={len(self.models)}, output_dir={self.output_dir})"

    # ------------------- COLLECTION -------------------
    def _act(self, observations, t: int) -> tuple[list[np.ndarray], float]:
        if self.step < self.cfg.train.seed_steps:
            actions = [self.rng.uniform(-1.0, 1.0, size=self.env.act_dim) for _ in self.models]
            return actions, 0.0
        team = self.planner.act(observations, t, explore=True)
        return team.actions, float(np.mean(team.iterations))

    def collect_episode(self) -> tuple[float, bool, float, float]:
        """Play one episode; returns (return, success, mean planner iterations, seconds per step)."""
        observations = self.env.reset(seed=self.cfg.seed * 100_003 + self.episode)
        self.planner.reset()
        total, iterations, t, success = 0.0, [], 0, False
        start = time.perf_counter()
        while True:
            actions, used = self._act(observations, t)
            result = self.env.step(actions)
            self.buffer.add(self.episode, t, observations, actions, result.reward, result.terminated, result.observations)
            total += result.reward
            iterations.append(used)
            success = success or result.success
            observations = result.observations
            self.step += 1
            t += 1
            if result.done:
                break
        elapsed = (time.perf_counter() - start) / max(t, 1)
        return total, success, float(np.mean(iterations)), elapsed

    # ------------------- UPDATES -------------------
    def update(self) -> dict:
        cfg = self.cfg
        length = cfg.planner.horizon + cfg.train.n_step
        reports = []
        for _ in range(cfg.train.epochs_per_episode):
            batch = self.buffer.sample(cfg.train.batch_size, length, min_valid=cfg.planner.horizon)
            reports.extend(
                sequential_update(
                    self.models, batch, cfg.planner.horizon,
                    drop_prob=cfg.masking.drop_prob, permute=cfg.masking.permute, rng=self.rng,
                )
            )
        return mean_report(reports)

    def save_checkpoint(self, path=None) -> Path:
        path = Path(path) if path is not None else self.output_dir / CHECKPOINT_NAME
        metadata = {
            "config": to_flat(self.cfg),
            "step": self.step,
            "episode": self.episode,
            "obs_dim": self.env.obs_dim,
            "act_dim": self.env.act_dim,
        }
        save_team(path, self.models, metadata)
        logger.info("checkpoint=%s step=%d", path, self.step)
        return path

    # ------------------- RUN -------------------
    def run(self) -> TrainSummary:
        cfg = self.cfg
        save_config(cfg, self.output_dir / "config.yaml")
        last_return = 0.0
        # a rerun into the same directory starts its logs over
        with MetricsWriter(self.output_dir / METRICS_NAME, fresh=True) as metrics, \
                TimingWriter(self.output_dir / TIMING_NAME, fresh=True) as timing:
            while self.step < cfg.train.total_steps:
                episode_return, success, iterations, seconds = self.collect_episode()
                losses = {}
                if self.step >= cfg.train.seed_steps:
                    try:
                        losses = self.update()
                    except NonFiniteError as exc:
                        logger.error("episode=%d step=%d aborting: %s %s", self.episode, self.step, exc, exc.diagnostics)
                        self.save_checkpoint()
                        raise
                metrics.append(MetricsRow(
                    step=self.step,
                    episode=self.episode,
                    episode_return=episode_return,
                    success=success,
                    planner_iterations=iterations,
                    **losses,
                ))
                timing.append(TimingRow(self.step, self.episode, seconds))
                logger.info(
                    "episode=%d step=%d return=%.3f success=%s iterations=%.2f",
                    self.episode, self.step, episode_return, success, iterations,
                )
                last_return = episode_return
                self.episode += 1
                if cfg.train.checkpoint_every and self.episode % cfg.train.checkpoint_every == 0:
                    self.save_checkpoint()
        return TrainSummary(self.step, self.episode, last_return, self.save_checkpoint())


def train(cfg: RunConfig) -> TrainSummary:
    return Trainer(cfg).run()
