import os
import unittest

import numpy as np

from seqwm.autodiff.tensor import Parameter
from seqwm.config import ModelConfig, TrainConfig, from_flat
from seqwm.worldmodel import TrajectoryBatch

slow = unittest.skipUnless(os.environ.get("SEQWM_SLOW"), "set SEQWM_SLOW=1 to run training-scale tests")


def numeric_grad(fn, param: Parameter, eps: float = 1e-6) -> np.ndarray:
    """Central differences of the scalar ``fn()`` with respect to ``param.data``."""
    grad = np.zeros_like(param.data)
    flat = param.data.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + eps
        up = float(fn().data)
        flat[i] = original - eps
        down = float(fn().data)
        flat[i] = original
        grad.reshape(-1)[i] = (up - down) / (2 * eps)
    return grad


def analytic_grad(fn, param: Parameter) -> np.ndarray:
    param.zero_grad()
    fn().backward()
    return param.grad.copy()


def assert_grad_close(case: unittest.TestCase, fn, params, rtol: float = 1e-5, atol: float = 1e-7) -> None:
    for param in params:
        expected = numeric_grad(fn, param)
        actual = analytic_grad(fn, param)
        np.testing.assert_allclose(actual, expected, rtol=rtol, atol=atol, err_msg=param.name or "param")


def tiny_model_config(**changes):
    values = dict(latent_dim=8, simplex_dim=4, encoder_hidden=16, dynamics_hidden=16, reward_hidden=16,
                  critic_hidden=16, actor_hidden=16, num_layers=1, num_bins=21)
    values.update(changes)
    return ModelConfig(**values)


def tiny_train_config(**changes):
    values = dict(batch_size=8, n_step=2, lr=1e-3)
    values.update(changes)
    return TrainConfig(**values)


def random_batch(rng: np.random.Generator, n_agents: int, obs_dim: int, act_dim: int, batch: int = 6, length: int = 4):
    return TrajectoryBatch(
        observations=[rng.normal(size=(batch, length + 1, obs_dim)) for _ in range(n_agents)],
        actions=[rng.uniform(-1, 1, size=(batch, length, act_dim)) for _ in range(n_agents)],
        rewards=rng.normal(size=(batch, length)),
        terminated=np.zeros((batch, length), dtype=bool),
        valid=np.ones((batch, length), dtype=bool),
    )


def tiny_run_config(output_dir, overrides: dict | None = None):
    values = {
        "env.name": "linear_team",
        "env.episode_limit": 12,
        "model.latent_dim": 8,
        "model.simplex_dim": 4,
        "model.encoder_hidden": 16,
        "model.dynamics_hidden": 16,
        "model.reward_hidden": 16,
        "model.critic_hidden": 16,
        "model.actor_hidden": 16,
        "model.num_layers": 1,
        "model.num_bins": 21,
        "planner.horizon": 2,
        "planner.iterations": 2,
        "planner.gaussian_samples": 16,
        "planner.actor_samples": 4,
        "planner.elites": 4,
        "train.total_steps": 36,
        "train.seed_steps": 12,
        "train.batch_size": 4,
        "train.buffer_size": 1000,
        "train.epochs_per_episode": 1,
        "train.n_step": 2,
        "train.checkpoint_every": 0,
        "eval.episodes": 2,
        "ablation.collect_steps": 200,
        "ablation.eval_steps": 60,
        "ablation.train_steps": 3,
        "ablation.batch_size": 8,
        "output_dir": str(output_dir),
    }
    values.update(overrides or {})
    return from_flat(values)
