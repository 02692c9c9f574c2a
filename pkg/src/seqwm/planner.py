"""
Sequential sampling-based planner.

Each agent refines a diagonal Gaussian over its next ``H`` actions: sample
candidates (low-pass filtered Gaussian noise plus actor rollouts), value them
by latent rollouts through its own world model, refit the Gaussian to the
exponentially weighted elites, and stop early once the distribution settles.
The planned trajectory is then appended to the message for the next agent.
"""

import logging
import time
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np
from scipy.signal import lfilter

from seqwm.comm import CommCache, LinkModel, MessageLayout, empty_schedule, extend_schedule, schedule_features, transmit
from seqwm.exceptions import ConfigError
from seqwm.types import CandidateSource, PlannerMode

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PlannerConfig:
    horizon: int = 3
    iterations: int = 6
    temperature: float = 0.5
    gaussian_samples: int = 512
    actor_samples: int = 24
    elites: int = 64
    discount: float = 0.99
    kl_threshold: float = 0.0
    cutoff_ratio: float = 0.0
    sigma_init: float = 0.5
    sigma_floor: float = 0.05
    mode: str = PlannerMode.planner_actor.value

    @property
    def planner_mode(self) -> PlannerMode:
        return PlannerMode(self.mode)

    @property
    def num_actor_samples(self) -> int:
        return 0 if self.planner_mode == PlannerMode.planner_only else self.actor_samples


class PlanningModel(Protocol):
    """What the planner needs from a world model; ``e`` is one message row shared by the batch."""

    act_dim: int

    def encode_obs(self, obs: np.ndarray) -> np.ndarray: ...

    def step(self, z: np.ndarray, a: np.ndarray, e: np.ndarray | None) -> tuple[np.ndarray, np.ndarray]: ...

    def value(self, z: np.ndarray, a: np.ndarray, e: np.ndarray | None) -> np.ndarray: ...

    def policy(self, z: np.ndarray, e: np.ndarray | None, stochastic: bool, rng: np.random.Generator) -> np.ndarray: ...


@dataclass(frozen=True)
class ActionDistribution:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def initial(cls, horizon: int, act_dim: int, sigma_init: float) -> "ActionDistribution":
        return cls(np.zeros((horizon, act_dim)), np.full((horizon, act_dim), sigma_init))

    def warm_start(self, sigma_init: float) -> "ActionDistribution":
        """Receding-horizon shift: drop the executed step, repeat the last one, reset the spread."""
        mean = np.concatenate([self.mean[1:], self.mean[-1:]], axis=0)
        return ActionDistribution(mean, np.full_like(self.std, sigma_init))


@dataclass
class CandidateSet:
    actions: np.ndarray
    sources: np.ndarray
    values: np.ndarray | None = None

    def __len__(self):
        return len(self.actions)


@dataclass
class PlanResult:
    action: np.ndarray
    distribution: ActionDistribution
    latents: np.ndarray
    actions: np.ndarray
    iterations: int
    elite_values: list[float] = field(default_factory=list)


# ------------------- FILTERING -------------------
def butterworth_beta(cutoff_ratio: float) -> float:
    """Feedback coefficient of the first-order bilinear low-pass at f_c / f_s."""
    if not 0.0 < cutoff_ratio < 0.5:
        raise ConfigError("planner.cutoff_ratio", f"{cutoff_ratio} outside (0, 0.5)")
    warped = np.tan(np.pi * cutoff_ratio)
    # tan(pi / 4) rounds just below 1
    if abs(warped - 1.0) < 1e-12:
        return 0.0
    return float((1.0 - warped) / (1.0 + warped))


def lowpass_filter(x: np.ndarray, cutoff_ratio: float, axis: int = 0) -> np.ndarray:
    """
    y[t] = (1 - b)/2 * (x[t] + x[t-1]) + b * y[t-1] along ``axis``, with y[0] = x[0].
    Unity gain at DC, 1/sqrt(2) at the cutoff.
    """
    beta = butterworth_beta(cutoff_ratio)
    gain = (1.0 - beta) / 2.0
    x = np.asarray(x, dtype=np.float64)
    first = np.take(x, [0], axis=axis)
    y, _ = lfilter([gain, gain], [1.0, -beta], x, axis=axis, zi=(1.0 - gain) * first)
    return y


# ------------------- SAMPLING AND VALUATION -------------------
def _message_at(e_schedule: np.ndarray | None, h: int):
    """The message row for step h, shared by every candidate."""
    return None if e_schedule is None else e_schedule[h]


def sample_candidates(
    dist: ActionDistribution,
    model: PlanningModel,
    z0: np.ndarray,
    e_schedule: np.ndarray | None,
    cfg: PlannerConfig,
    rng: np.random.Generator,
) -> CandidateSet:
    horizon, act_dim = dist.mean.shape
    noise = rng.standard_normal((cfg.gaussian_samples, horizon, act_dim))
    if cfg.cutoff_ratio > 0:
        noise = lowpass_filter(noise, cfg.cutoff_ratio, axis=1)
    gaussian = np.clip(dist.mean + noise * dist.std, -1.0, 1.0)

    n_actor = cfg.num_actor_samples
    actor = np.zeros((n_actor, horizon, act_dim))
    if n_actor:
        z = np.broadcast_to(z0, (n_actor,) + z0.shape)
        for h in range(horizon):
            e_h = _message_at(e_schedule, h)
            actor[:, h] = model.policy(z, e_h, True, rng)
            z, _ = model.step(z, actor[:, h], e_h)

    sources = np.array([CandidateSource.gaussian] * cfg.gaussian_samples + [CandidateSource.actor] * n_actor)
    return CandidateSet(np.concatenate([gaussian, np.clip(actor, -1.0, 1.0)]), sources)


def rollout(model: PlanningModel, z0: np.ndarray, actions: np.ndarray, e_schedule: np.ndarray | None):
    """
    Open-loop latent rollout of (N, H, A) action sequences from one latent.
    Returns latents (N, H + 1, d_z) and decoded rewards (N, H).
    """
    count, horizon, _ = actions.shape
    z = np.broadcast_to(z0, (count,) + z0.shape)
    latents = [z]
    rewards = np.zeros((count, horizon))
    for h in range(horizon):
        e_h = _message_at(e_schedule, h)
        z, rewards[:, h] = model.step(z, actions[:, h], e_h)
        latents.append(z)
    return np.stack(latents, axis=1), rewards


def evaluate_candidates(
    candidates: CandidateSet,
    model: PlanningModel,
    z0: np.ndarray,
    e_schedule: np.ndarray | None,
    cfg: PlannerConfig,
) -> np.ndarray:
    """sum_h gamma^h r_h + gamma^H Q(z_H, pi(z_H), e_H); non-finite values become NaN."""
    horizon = candidates.actions.shape[1]
    latents, rewards = rollout(model, z0, candidates.actions, e_schedule)
    discounts = cfg.discount ** np.arange(horizon)
    terminal_e = _message_at(e_schedule, horizon)
    terminal_a = model.policy(latents[:, -1], terminal_e, False, None)
    values = rewards @ discounts + cfg.discount**horizon * model.value(latents[:, -1], terminal_a, terminal_e)
    bad = ~np.isfinite(values)
    if bad.any():
        logger.warning("discarding %d candidates with non-finite value", int(bad.sum()))
        values = np.where(bad, np.nan, values)
    candidates.values = values
    return values


def update_distribution(dist: ActionDistribution, candidates: CandidateSet, cfg: PlannerConfig) -> ActionDistribution:
    values = candidates.values
    finite = np.flatnonzero(np.isfinite(values))
    if finite.size == 0:
        logger.warning("no finite candidate values; keeping the previous distribution")
        return dist
    order = finite[np.argsort(-values[finite], kind="stable")]
    elite_idx = order[: min(cfg.elites, finite.size)]
    elites = candidates.actions[elite_idx]
    elite_values = values[elite_idx]
    weights = np.exp(cfg.temperature * (elite_values - elite_values.max()))
    weights /= weights.sum()
    mean = np.einsum("m,mha->ha", weights, elites)
    std = np.sqrt(np.einsum("m,mha->ha", weights, (elites - mean) ** 2))
    return ActionDistribution(np.clip(mean, -1.0, 1.0), np.maximum(std, cfg.sigma_floor))


def kl_diag_gaussian(p: ActionDistribution, q: ActionDistribution) -> float:
    """KL(p || q) summed over every horizon step and action dimension."""
    var_p, var_q = p.std**2, q.std**2
    terms = np.log(q.std / p.std) + (var_p + (p.mean - q.mean) ** 2) / (2.0 * var_q) - 0.5
    return float(terms.sum())


def _trajectory(model: PlanningModel, z0, mean, e_schedule):
    """Predicted (z_h, a_h) for h = 0..H along the plan mean, the actor closing the last step."""
    latents, _ = rollout(model, z0, mean[None], e_schedule)
    latents = latents[0]
    terminal_e = _message_at(e_schedule, -1)
    terminal_a = model.policy(latents[-1:], terminal_e, False, None)[0]
    return latents, np.concatenate([mean, terminal_a[None]], axis=0)


def plan(
    model: PlanningModel,
    obs: np.ndarray,
    e_schedule: np.ndarray | None,
    warm: ActionDistribution | None,
    cfg: PlannerConfig,
    rng: np.random.Generator,
    explore: bool = False,
) -> PlanResult:
    """
    Plan one environment step for one agent.

    ``e_schedule`` holds message features for h = 0..H (or None without
    communication). ``explore`` perturbs the executed action with the final
    spread, for data collection.
    """
    z0 = model.encode_obs(obs[None])[0]
    horizon = cfg.horizon

    if cfg.planner_mode == PlannerMode.actor_only:
        mean = np.zeros((horizon, model.act_dim))
        z = z0[None]
        for h in range(horizon):
            e_h = _message_at(e_schedule, h)
            mean[h] = model.policy(z, e_h, explore, rng)[0]
            z, _ = model.step(z, mean[h][None], e_h)
        dist = ActionDistribution(mean, np.full_like(mean, cfg.sigma_floor))
        latents, actions = _trajectory(model, z0, mean, e_schedule)
        return PlanResult(mean[0].copy(), dist, latents, actions, iterations=0)

    if warm is None:
        dist = ActionDistribution.initial(horizon, model.act_dim, cfg.sigma_init)
    else:
        dist = warm.warm_start(cfg.sigma_init)

    elite_values = []
    iterations = 0
    for _ in range(cfg.iterations):
        candidates = sample_candidates(dist, model, z0, e_schedule, cfg, rng)
        values = evaluate_candidates(candidates, model, z0, e_schedule, cfg)
        updated = update_distribution(dist, candidates, cfg)
        iterations += 1
        finite = np.sort(values[np.isfinite(values)])[::-1]
        elite_values.append(float(finite[: cfg.elites].mean()) if finite.size else float("nan"))
        divergence = kl_diag_gaussian(updated, dist)
        dist = updated
        logger.debug("iteration=%d elite_value=%.4f kl=%.5f", iterations, elite_values[-1], divergence)
        if cfg.kl_threshold > 0 and divergence < cfg.kl_threshold:
            break

    action = dist.mean[0].copy()
    if explore:
        action = np.clip(action + dist.std[0] * rng.standard_normal(action.shape), -1.0, 1.0)
    latents, actions = _trajectory(model, z0, dist.mean, e_schedule)
    return PlanResult(action, dist, latents, actions, iterations, elite_values)


# ------------------- TEAM -------------------
@dataclass
class TeamStep:
    actions: list[np.ndarray]
    iterations: list[int]
    results: list[PlanResult]
    seconds: float


class TeamPlanner:
    """
    Runs the planner for every agent in index order, passing the growing
    message schedule down the chain through a lossy link with a receiver cache.
    """

    def __init__(
        self,
        models,
        cfg: PlannerConfig,
        layout: MessageLayout | None,
        rng: np.random.Generator,
        link: LinkModel | None = None,
        use_cache: bool = True,
        wire: bool = False,
    ):
        self.models = list(models)
        self.cfg = cfg
        self.layout = layout
        self.rng = rng
        self.link = link or LinkModel(0.0)
        self.cache = CommCache()
        self.use_cache = use_cache
        self.wire = wire
        self.warm: list[ActionDistribution | None] = [None] * len(self.models)

    def reset(self) -> None:
        self.warm = [None] * len(self.models)
        self.cache.clear()

    def act(self, observations, t: int, explore: bool = False) -> TeamStep:
        start = time.perf_counter()
        length = self.cfg.horizon + 1
        schedule = empty_schedule(self.layout, length) if self.layout is not None else None
        actions, iterations, results = [], [], []
        for i, (model, obs) in enumerate(zip(self.models, observations)):
            if schedule is not None and i > 0:
                cache = self.cache if self.use_cache else CommCache()
                schedule = transmit(schedule, self.link, cache, sender=i - 1, receiver=i, t=t, wire=self.wire)
            features = schedule_features(schedule) if schedule is not None else None
            result = plan(model, np.asarray(obs, dtype=np.float64), features, self.warm[i], self.cfg, self.rng, explore)
            self.warm[i] = result.distribution
            if schedule is not None:
                schedule = extend_schedule(schedule, i, result.latents, result.actions)
            actions.append(result.action)
            iterations.append(result.iterations)
            results.append(result)
        return TeamStep(actions, iterations, results, time.perf_counter() - start)
