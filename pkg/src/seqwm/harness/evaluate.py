import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from seqwm.autodiff import set_default_dtype
from seqwm.comm import LinkModel
from seqwm.config import RunConfig
from seqwm.envs import make_env
from seqwm.harness.train import load_checkpoint, team_layout
from seqwm.planner import TeamPlanner
from seqwm.records import EpisodeLogWriter, StepRecord
from seqwm.worldmodel import AgentModel

logger = logging.getLogger(__name__)

EVAL_SEED_OFFSET = 1_000_003


@dataclass
class EpisodeResult:
    episode_return: float
    success: bool
    mean_iterations: float
    seconds_per_step: float
    steps: int
    cache_hits: int
    cache_misses: int
    deliveries: int
    records: list = field(default_factory=list, repr=False)


@dataclass
class EvalSummary:
    episodes: int = 0
    mean_return: float = 0.0
    success_rate: float = 0.0
    mean_iterations: float = 0.0
    seconds_per_step: float = 0.0
    cache_hits: int = 0
    cache_misses: int = 0
    deliveries: int = 0

    def as_dict(self) -> dict:
        return asdict(self)


def run_episode(models: list[AgentModel], cfg: RunConfig, episode: int, drop_prob: float) -> EpisodeResult:
    """One evaluation episode on its own env, planner and link; ``models`` are only read."""
    seed = cfg.seed + EVAL_SEED_OFFSET + episode
    env = make_env(cfg.env, seed=seed)
    planner = TeamPlanner(
        models,
        cfg.planner,
        team_layout(cfg, env),
        rng=np.random.default_rng(seed),
        link=LinkModel(drop_prob, seed=seed),
        use_cache=cfg.comm.use_cache,
        wire=cfg.comm.wire,
    )
    observations = env.reset(seed=seed)
    total, success, iterations, seconds, records = 0.0, False, [], 0.0, []
    t = 0
    while True:
        team = planner.act(observations, t)
        result = env.step(team.actions)
        total += result.reward
        success = success or result.success
        iterations.append(np.mean(team.iterations))
        seconds += team.seconds
        records.append(StepRecord.from_step(t, observations, team.actions, result.reward, result.done,
                                            positions=env.positions(), episode=episode))
        observations = result.observations
        t += 1
        if result.done:
            break
    cache = planner.cache
    return EpisodeResult(total, success, float(np.mean(iterations)), seconds / t, t,
                         cache.hits, cache.misses, cache.deliveries, records)


def summarize(results: list[EpisodeResult]) -> EvalSummary:
    if not results:
        return EvalSummary()
    return EvalSummary(
        episodes=len(results),
        mean_return=float(np.mean([r.episode_return for r in results])),
        success_rate=float(np.mean([r.success for r in results])),
        mean_iterations=float(np.mean([r.mean_iterations for r in results])),
        seconds_per_step=float(np.mean([r.seconds_per_step for r in results])),
        cache_hits=sum(r.cache_hits for r in results),
        cache_misses=sum(r.cache_misses for r in results),
        deliveries=sum(r.deliveries for r in results),
    )


def evaluate_models(models: list[AgentModel], cfg: RunConfig, episodes: int | None = None,
                    drop_prob: float | None = None) -> EvalSummary:
    episodes = cfg.eval.episodes if episodes is None else episodes
    drop_prob = cfg.comm.drop_prob if drop_prob is None else drop_prob
    if episodes <= 0:
        return EvalSummary()
    if cfg.eval.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.eval.workers) as pool:
            results = list(pool.map(lambda e: run_episode(models, cfg, e, drop_prob), range(episodes)))
    else:
        results = [run_episode(models, cfg, e, drop_prob) for e in range(episodes)]

    if cfg.eval.episode_log:
        with EpisodeLogWriter(cfg.eval.episode_log, fresh=True) as log:
            for result in results:
                for record in result.records:
                    log.write(record)
    summary = summarize(results)
    logger.info(
        "episodes=%d return=%.3f success=%.3f iterations=%.2f drop_prob=%.2f cache_hits=%d",
        summary.episodes, summary.mean_return, summary.success_rate, summary.mean_iterations,
        drop_prob, summary.cache_hits,
    )
    return summary


def evaluate(checkpoint_path, cfg: RunConfig, episodes: int | None = None, drop_prob: float | None = None) -> EvalSummary:
    """Deterministic-planner evaluation of a saved team under message drop ``drop_prob``."""
    cfg = cfg.validate()
    if (cfg.eval.episodes if episodes is None else episodes) <= 0:
        return EvalSummary()
    set_default_dtype(cfg.dtype)
    env = make_env(cfg.env, seed=cfg.seed)
    return evaluate_models(load_checkpoint(checkpoint_path, cfg, env), cfg, episodes, drop_prob)
