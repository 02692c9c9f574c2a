"""
Prediction-accuracy ablation: sequential versus decentralized world models.

Both variants train on the same random-action data from the coupled linear
team. The sequential variant receives its predecessors' predicted latents and
actions; the decentralized one has no message inputs and a hidden width
chosen so its world model has about the same number of parameters. Predicted
rollouts are scored per horizon step against the exact dynamics.
"""

import dataclasses
import logging
from dataclasses import dataclass

import numpy as np

from seqwm.autodiff import set_default_dtype
from seqwm.comm import MessageBatch
from seqwm.config import ModelConfig, RunConfig
from seqwm.envs import LinearTeamEnv, make_env, oracle_rollout
from seqwm.exceptions import ConfigError
from seqwm.harness.buffer import ReplayBuffer
from seqwm.harness.train import build_team, team_layout
from seqwm.worldmodel import AgentModel, TrajectoryBatch, head_specs, sequential_update, world_model_param_count

logger = logging.getLogger(__name__)

VARIANTS = ("sequential", "decentralized")


@dataclass
class AblationRow:
    variant: str
    horizon: int
    state_mse: float
    latent_mse: float
    reward_mse: float


def collect_random(env, steps: int, buffer: ReplayBuffer, rng: np.random.Generator, seed: int) -> None:
    episode = 0
    while len(buffer) < min(steps, buffer.capacity):
        observations = env.reset(seed=seed + episode)
        t = 0
        while True:
            actions = [rng.uniform(-1.0, 1.0, size=env.act_dim) for _ in range(env.n_agents)]
            result = env.step(actions)
            buffer.add(episode, t, observations, actions, result.reward, result.terminated, result.observations)
            observations = result.observations
            t += 1
            if result.done or len(buffer) >= steps:
                break
        episode += 1


def _with_hidden(cfg: ModelConfig, width: int) -> ModelConfig:
    return dataclasses.replace(cfg, encoder_hidden=width, dynamics_hidden=width, reward_hidden=width)


def matched_model_config(cfg: RunConfig, env) -> ModelConfig:
    """Hidden width for the decentralized variant whose world-model size is closest to the sequential one."""
    msg_dim = team_layout(cfg, env).feature_dim
    target = world_model_param_count(head_specs(env.obs_dim, env.act_dim, cfg.model, msg_dim))
    widest = 4 * max(cfg.model.encoder_hidden, cfg.model.dynamics_hidden, cfg.model.reward_hidden)
    gaps = {
        width: abs(world_model_param_count(head_specs(env.obs_dim, env.act_dim, _with_hidden(cfg.model, width))) - target)
        for width in range(4, widest + 1)
    }
    width = min(gaps, key=gaps.get)
    logger.info("matched decentralized hidden=%d param_gap=%d target=%d", width, gaps[width], target)
    return _with_hidden(cfg.model, width)


def linear_readout(model: AgentModel, observations: np.ndarray) -> np.ndarray:
    """Least-squares map from [z, 1] to the observation it was encoded from."""
    z = model.encode_obs(observations)
    design = np.concatenate([z, np.ones((len(z), 1))], axis=1)
    weights, *_ = np.linalg.lstsq(design, observations, rcond=None)
    return weights


def predicted_rollouts(models: list[AgentModel], batch: TrajectoryBatch, horizon: int):
    """Open-loop latents (B, H + 1, d_z) and rewards (B, H) per agent, with messages rebuilt in order."""
    layout = models[0].layout
    messages = MessageBatch.empty(layout, (batch.batch_size, batch.length + 1)) if layout is not None else None
    latents, rewards = [], []
    for i, model in enumerate(models):
        features = None if messages is None else messages.features()
        z = model.encode_obs(batch.observations[i][:, 0])
        zs, rs = [z], []
        for h in range(horizon):
            z, r = model.step(z, batch.actions[i][:, h], None if features is None else features[:, h])
            zs.append(z)
            rs.append(r)
        latents.append(np.stack(zs, axis=1))
        rewards.append(np.stack(rs, axis=1))
        if messages is not None:
            sent_latents, sent_actions = model.message_trajectory(
                batch.observations[i], batch.actions[i], features, horizon
            )
            messages = messages.with_slot(i, sent_latents, sent_actions)
    return latents, rewards


def score(models, readouts, env: LinearTeamEnv, batch: TrajectoryBatch, horizon: int, variant: str) -> list[AblationRow]:
    latents, rewards = predicted_rollouts(models, batch, horizon)
    truth_states, truth_rewards = [], []
    for b in range(batch.batch_size):
        state = np.stack([obs[b, 0] for obs in batch.observations])
        joint = np.stack([act[b, :horizon] for act in batch.actions], axis=1)
        rollout = oracle_rollout(env, state, joint)
        truth_states.append(rollout.states)
        truth_rewards.append(rollout.rewards)
    truth_states = np.stack(truth_states)
    truth_rewards = np.stack(truth_rewards)

    rows = []
    for h in range(1, horizon + 1):
        state_err, latent_err, reward_err = [], [], []
        for i, model in enumerate(models):
            z = latents[i][:, h]
            readout = np.concatenate([z, np.ones((len(z), 1))], axis=1) @ readouts[i]
            state_err.append(np.mean(np.sum((readout - truth_states[:, h, i]) ** 2, axis=-1)))
            encoded = model.encode_obs(batch.observations[i][:, h])
            latent_err.append(np.mean(np.sum((z - encoded) ** 2, axis=-1)))
            reward_err.append(np.mean((rewards[i][:, h - 1] - truth_rewards[:, h - 1]) ** 2))
        rows.append(AblationRow(variant, h, float(np.mean(state_err)), float(np.mean(latent_err)),
                                float(np.mean(reward_err))))
    return rows


def ablate_prediction(cfg: RunConfig) -> list[AblationRow]:
    cfg = cfg.validate()
    if cfg.env.name != "linear_team":
        raise ConfigError("env.name", "the prediction ablation runs on linear_team")
    if cfg.env.transition_noise > 0 or cfg.env.obs_noise > 0:
        raise ConfigError("env.transition_noise", "the prediction ablation needs noise-free dynamics")
    set_default_dtype(cfg.dtype)
    horizon = cfg.planner.horizon
    env = make_env(cfg.env, seed=cfg.seed)
    n = env.n_agents
    rng = np.random.default_rng(cfg.seed)

    train_buffer = ReplayBuffer(cfg.ablation.collect_steps, [env.obs_dim] * n, [env.act_dim] * n, seed=cfg.seed)
    collect_random(env, cfg.ablation.collect_steps, train_buffer, rng, seed=cfg.seed)
    eval_buffer = ReplayBuffer(cfg.ablation.eval_steps, [env.obs_dim] * n, [env.act_dim] * n, seed=cfg.seed + 1)
    collect_random(env, cfg.ablation.eval_steps, eval_buffer, rng, seed=cfg.seed + 7_919)

    comm_cfg = dataclasses.replace(cfg, comm=dataclasses.replace(cfg.comm, enabled=True))
    teams = {
        "sequential": build_team(comm_cfg, env, team_layout(comm_cfg, env)),
        "decentralized": build_team(cfg, env, None, model_cfg=matched_model_config(comm_cfg, env)),
    }
    length = horizon + cfg.train.n_step
    update_rngs = {name: np.random.default_rng(cfg.seed + 11) for name in VARIANTS}
    for step in range(cfg.ablation.train_steps):
        batch = train_buffer.sample(cfg.ablation.batch_size, length, min_valid=horizon)
        for name in VARIANTS:
            reports = sequential_update(teams[name], batch, horizon, rng=update_rngs[name])
            if step % 100 == 0:
                logger.info("variant=%s step=%d dynamics=%.5f", name, step,
                            float(np.mean([r.dynamics_loss for r in reports])))

    stored = len(train_buffer)
    eval_batch = eval_buffer.sample(cfg.ablation.batch_size, horizon, min_valid=horizon)
    rows = []
    for name in VARIANTS:
        team = teams[name]
        readouts = [linear_readout(model, train_buffer.obs[i][:stored].astype(np.float64)) for i, model in enumerate(team)]
        rows.extend(score(team, readouts, env, eval_batch, horizon, name))
    for row in rows:
        logger.info("variant=%s horizon=%d state_mse=%.5f reward_mse=%.5f",
                    row.variant, row.horizon, row.state_mse, row.reward_mse)
    return rows
