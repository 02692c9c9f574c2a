"""
Per-agent latent world model.

Every agent owns an encoder, a latent dynamics head, a reward head, a critic
(with an EMA target copy) and a squashed Gaussian actor. Dynamics, reward,
critic and actor also read the message received from the agent's
predecessors; messages are always constants for the trace, so no gradient
ever crosses from one agent to another.

Training follows a sequential scheme: agents update one after another, and
the messages agent ``i`` trains on are rebuilt from the already-updated
predictions of the agents before it.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from seqwm.autodiff import checkpoint
from seqwm.autodiff import tensor as T
from seqwm.autodiff.nn import Mlp, MlpSpec
from seqwm.autodiff.optim import Adam
from seqwm.autodiff.tensor import Tensor, get_default_dtype, stop_gradient
from seqwm.codec import BinGrid, PercentileScaler, soft_cross_entropy, twohot_decode
from seqwm.comm import Message, MessageBatch, MessageLayout
from seqwm.config import ModelConfig, TrainConfig
from seqwm.exceptions import CheckpointError, NonFiniteError, ShapeMismatchError
from seqwm.types import OutputActivation

logger = logging.getLogger(__name__)

# keeps tanh-squashed actions strictly inside the box so atanh stays finite
ACTION_LIMIT = 1.0 - 1e-6
_LOG2 = float(np.log(2.0))
_HALF_LOG_2PI = 0.5 * float(np.log(2.0 * np.pi))


@dataclass
class TrajectoryBatch:
    """
    Time windows sampled from the replay buffer.

    ``observations[i]`` has shape (B, L + 1, obs_dim_i) and ``actions[i]``
    shape (B, L, act_dim_i); ``rewards``, ``terminated`` and ``valid`` have
    shape (B, L). Steps past the end of an episode are padding with
    ``valid`` False.
    """

    observations: list[np.ndarray]
    actions: list[np.ndarray]
    rewards: np.ndarray
    terminated: np.ndarray
    valid: np.ndarray

    @property
    def batch_size(self) -> int:
        return self.rewards.shape[0]

    @property
    def length(self) -> int:
        return self.rewards.shape[1]

    @property
    def n_agents(self) -> int:
        return len(self.observations)


@dataclass
class LossReport:
    agent: int
    dynamics_loss: float = 0.0
    reward_loss: float = 0.0
    q_loss: float = 0.0
    actor_loss: float = 0.0
    entropy: float = 0.0
    total: float = 0.0
    scale: float = 1.0
    per_step: dict[str, list[float]] = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "dynamics_loss": self.dynamics_loss,
            "reward_loss": self.reward_loss,
            "q_loss": self.q_loss,
            "actor_loss": self.actor_loss,
            "entropy": self.entropy,
        }


def horizon_weights(rho: float, horizon: int) -> np.ndarray:
    return rho ** np.arange(horizon, dtype=np.float64)


def head_specs(obs_dim: int, act_dim: int, cfg: ModelConfig, msg_dim: int = 0) -> dict[str, MlpSpec]:
    d_z, layers = cfg.latent_dim, cfg.num_layers
    head_input = d_z + act_dim + msg_dim
    return {
        "encoder": MlpSpec(obs_dim, cfg.encoder_hidden, layers, d_z,
                           output_activation=OutputActivation.sem_norm, simplex_dim=cfg.simplex_dim),
        "dynamics": MlpSpec(head_input, cfg.dynamics_hidden, layers, d_z,
                            output_activation=OutputActivation.sem_norm, simplex_dim=cfg.simplex_dim),
        "reward": MlpSpec(head_input, cfg.reward_hidden, layers, cfg.num_bins),
        "critic": MlpSpec(head_input, cfg.critic_hidden, layers, cfg.num_bins),
        "actor": MlpSpec(d_z + msg_dim, cfg.actor_hidden, layers, 2 * act_dim),
    }


def world_model_param_count(specs: dict[str, MlpSpec]) -> int:
    """Encoder, dynamics and reward head parameters."""
    return sum(specs[name].param_count() for name in ("encoder", "dynamics", "reward"))


class AgentModel:
    """
    One agent's world model, actor and critic, with their optimizers.

    ``layout`` is the team's message layout; None builds a model without
    message inputs (the decentralized variant).
    """

    # ------------------- SETUP -------------------
    def __init__(
        self,
        index: int,
        obs_dim: int,
        act_dim: int,
        model_cfg: ModelConfig = ModelConfig(),
        train_cfg: TrainConfig = TrainConfig(),
        layout: MessageLayout | None = None,
        seed: int = 0,
    ):
        if layout is not None and layout.act_dim != act_dim:
            raise ShapeMismatchError("message layout", act_dim, layout.act_dim)
        if layout is not None and layout.latent_dim != model_cfg.latent_dim:
            raise ShapeMismatchError("message layout", model_cfg.latent_dim, layout.latent_dim)
        self.index = index
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self.model_cfg = model_cfg
        self.train_cfg = train_cfg
        self.layout = layout
        self.msg_dim = layout.feature_dim if layout is not None else 0
        self.rng = np.random.default_rng(seed)
        self.grid = BinGrid(model_cfg.num_bins, model_cfg.bin_low, model_cfg.bin_high)
        self.scaler = PercentileScaler(tau=train_cfg.scale_tau, min_scale=train_cfg.scale_min)

        specs = head_specs(obs_dim, act_dim, model_cfg, self.msg_dim)
        self.encoder = Mlp(specs["encoder"], self.rng, name="encoder")
        self.dynamics = Mlp(specs["dynamics"], self.rng, name="dynamics")
        self.reward_head = Mlp(specs["reward"], self.rng, name="reward", zero_output=True)
        self.critic = Mlp(specs["critic"], self.rng, name="critic", zero_output=True)
        self.target_critic = Mlp(specs["critic"], self.rng, name="critic_target")
        self.sync_target(0.0)
        self.actor = Mlp(specs["actor"], self.rng, name="actor")

        lr, clip = train_cfg.lr, train_cfg.max_grad_norm
        self.optimizers = {
            "encoder": Adam(self.encoder.params, lr, lr_scale=train_cfg.encoder_lr_scale, max_grad_norm=clip),
            "world": Adam(self.dynamics.params + self.reward_head.params + self.critic.params, lr, max_grad_norm=clip),
            "actor": Adam(self.actor.params, lr, max_grad_norm=clip),
        }

    def __repr__(self):
        return f"AgentModel(index={self.index}, obs_dim={self.obs_dim}, act_dim={self.act_dim}, msg_dim={self.msg_dim})"

    @property
    def heads(self) -> list[Mlp]:
        return [self.encoder, self.dynamics, self.reward_head, self.critic, self.target_critic, self.actor]

    def world_model_param_count(self) -> int:
        return world_model_param_count({"encoder": self.encoder.spec, "dynamics": self.dynamics.spec,
                                        "reward": self.reward_head.spec})

    def zero_grad(self) -> None:
        for optimizer in self.optimizers.values():
            optimizer.zero_grad()
        self.target_critic.zero_grad()

    def sync_target(self, rate: float | None = None) -> None:
        """target = rate * target + (1 - rate) * live; rate 0 is a hard copy."""
        rate = self.train_cfg.target_rate if rate is None else rate
        for target, live in zip(self.target_critic.params, self.critic.params):
            target.data = rate * target.data + (1.0 - rate) * live.data

    # ------------------- HEADS -------------------
    def message_input(self, e, leading_shape: tuple) -> Tensor | None:
        """Message features as a constant tensor; None for a model without message inputs."""
        if self.msg_dim == 0:
            return None
        if e is None:
            return Tensor(np.zeros(tuple(leading_shape) + (self.msg_dim,)))
        if isinstance(e, (Message, MessageBatch)):
            if e.layout != self.layout:
                raise ShapeMismatchError("message layout", self.layout, e.layout)
            e = e.features()
        e = stop_gradient(e)
        if e.shape[-1] != self.msg_dim:
            raise ShapeMismatchError("message", self.msg_dim, e.shape[-1])
        return e

    def message_array(self, e) -> np.ndarray | None:
        """Message features as a plain array, unbroadcast; None for a model without message inputs."""
        if self.msg_dim == 0:
            return None
        if e is None:
            return np.zeros(self.msg_dim)
        if isinstance(e, (Message, MessageBatch)):
            if e.layout != self.layout:
                raise ShapeMismatchError("message layout", self.layout, e.layout)
            e = e.features()
        e = np.asarray(e.data if isinstance(e, Tensor) else e)
        if e.shape[-1] != self.msg_dim:
            raise ShapeMismatchError("message", self.msg_dim, e.shape[-1])
        return e

    def _join(self, *parts) -> Tensor:
        return T.concat([p for p in parts if p is not None], axis=-1)

    def head_input(self, z, a, e=None) -> Tensor:
        """[z, a, e] as the shared input of the dynamics, reward and critic heads."""
        z, a = T.as_tensor(z), T.as_tensor(a)
        return self._join(z, a, self.message_input(e, z.shape[:-1]))

    def encode(self, o) -> Tensor:
        return self.encoder(o)

    def predict_step(self, z, a, e=None) -> tuple[Tensor, Tensor]:
        """(next latent, reward logits) for latent ``z``, action ``a`` and message ``e``."""
        x = self.head_input(z, a, e)
        return self.dynamics(x), self.reward_head(x)

    def critic_logits(self, z, a, e=None, use_target: bool = False, frozen: bool = False) -> Tensor:
        head = self.target_critic if use_target else self.critic
        return head(self.head_input(z, a, e), frozen=frozen or use_target)

    def critic_value(self, z, a, e=None, use_target: bool = False, frozen: bool = False) -> Tensor:
        return twohot_decode(self.critic_logits(z, a, e, use_target, frozen), self.grid)

    def actor_sample(self, z, e=None, stochastic: bool = True, rng: np.random.Generator | None = None):
        """
        Reparameterized tanh-Gaussian action and its log-density.

        With ``stochastic`` False the action is tanh(mean) and the log-density
        is evaluated at the mean.
        """
        z = T.as_tensor(z)
        out = self.actor(self._join(z, self.message_input(e, z.shape[:-1])))
        mean = out[..., : self.act_dim]
        log_std = T.soft_clamp(out[..., self.act_dim:], self.model_cfg.log_std_min, self.model_cfg.log_std_max)
        if stochastic:
            eps = (rng or self.rng).standard_normal(mean.shape)
        else:
            eps = np.zeros(mean.shape)
        u = mean + log_std.exp() * eps
        gaussian = (-0.5 * eps**2 - _HALF_LOG_2PI - log_std).sum(axis=-1)
        # log(1 - tanh(u)^2) = 2 (log 2 - u - softplus(-2u))
        squash = (2.0 * (_LOG2 - u - T.softplus(-2.0 * u))).sum(axis=-1)
        action = T.tanh(u)
        # straight-through clip
        action = action + Tensor(np.clip(action.data, -ACTION_LIMIT, ACTION_LIMIT) - action.data)
        return action, gaussian - squash

    # ------------------- PLANNING INTERFACE -------------------
    # Plain-array twins of the heads above; a message row shared by the whole
    # batch may be passed without leading axes.
    def encode_obs(self, obs: np.ndarray) -> np.ndarray:
        return self.encoder.predict(np.asarray(obs, dtype=get_default_dtype()))

    def step(self, z, a, e=None) -> tuple[np.ndarray, np.ndarray]:
        parts = [np.asarray(z), np.asarray(a), self.message_array(e)]
        return self.dynamics.predict(parts), np.asarray(twohot_decode(self.reward_head.predict(parts), self.grid))

    def value(self, z, a, e=None, use_target: bool = False) -> np.ndarray:
        head = self.target_critic if use_target else self.critic
        return np.asarray(twohot_decode(head.predict([np.asarray(z), np.asarray(a), self.message_array(e)]), self.grid))

    def policy(self, z, e=None, stochastic: bool = False, rng=None) -> np.ndarray:
        out = self.actor.predict([np.asarray(z), self.message_array(e)])
        u = out[..., : self.act_dim]
        if stochastic:
            cfg = self.model_cfg
            log_std = cfg.log_std_min + 0.5 * (cfg.log_std_max - cfg.log_std_min) * (np.tanh(out[..., self.act_dim:]) + 1.0)
            u = u + np.exp(log_std) * (rng or self.rng).standard_normal(u.shape)
        return np.clip(np.tanh(u), -ACTION_LIMIT, ACTION_LIMIT)

    # ------------------- MESSAGES FOR TRAINING -------------------
    def message_trajectory(self, observations: np.ndarray, actions: np.ndarray, features, horizon: int):
        """
        What this agent broadcasts at each index of a training window.

        Latents are chained predictions from E(o_0) up to index ``horizon``
        and plain encodings after it; actions are the executed ones, and the
        actor's deterministic action at the final observation.
        """
        length = actions.shape[1]
        encoded = self.encode_obs(observations)
        latents = encoded.copy()
        z = encoded[:, 0]
        for h in range(horizon):
            e_h = None if features is None else features[:, h]
            z, _ = self.step(z, actions[:, h], e_h)
            latents[:, h + 1] = z
        e_last = None if features is None else features[:, length]
        last_action = self.policy(encoded[:, length], e_last)
        return latents, np.concatenate([actions, last_action[:, None]], axis=1)

    # ------------------- CHECKPOINT -------------------
    def state(self) -> tuple[dict[str, np.ndarray], dict]:
        prefix = f"agent{self.index}"
        arrays = {}
        for head in self.heads:
            arrays.update({f"{prefix}/{k}": v for k, v in head.state().items()})
        metadata = {"scale": self.scaler.scale}
        for name, optimizer in self.optimizers.items():
            state = optimizer.state
            for k, (m, v) in enumerate(zip(state.first_moment, state.second_moment)):
                arrays[f"{prefix}/adam/{name}/m{k}"] = m
                arrays[f"{prefix}/adam/{name}/v{k}"] = v
            metadata[f"adam_{name}_steps"] = state.step_count
        return arrays, metadata

    def load_state(self, arrays: dict[str, np.ndarray], metadata: dict) -> None:
        prefix = f"agent{self.index}/"
        local = {k[len(prefix):]: v for k, v in arrays.items() if k.startswith(prefix)}
        try:
            for head in self.heads:
                head.load_state(local)
        except ShapeMismatchError as exc:
            raise CheckpointError(f"agent {self.index}: {exc}") from exc
        for name, optimizer in self.optimizers.items():
            state = optimizer.state
            for k in range(len(state.first_moment)):
                m, v = local.get(f"adam/{name}/m{k}"), local.get(f"adam/{name}/v{k}")
                if m is None or v is None or m.shape != state.first_moment[k].shape:
                    raise CheckpointError(f"agent {self.index}: optimizer state {name}/{k} missing or misshaped")
                state.first_moment[k] = m.copy()
                state.second_moment[k] = v.copy()
            state.step_count = int(metadata.get(f"adam_{name}_steps", 0))
        self.scaler.scale = max(float(metadata.get("scale", 1.0)), self.scaler.min_scale)

    # ------------------- UPDATES -------------------
    def update(self, observations, actions, batch: TrajectoryBatch, features, horizon: int) -> LossReport:
        """One model step then one actor step on this agent's view of ``batch``."""
        self.zero_grad()
        loss, report = model_loss(self, observations, actions, batch, features, horizon)
        loss.backward()
        for name in ("encoder", "world"):
            self.optimizers[name].step()

        self.zero_grad()
        loss, actor_report = actor_loss(self, observations, actions, features, horizon)
        loss.backward()
        self.optimizers["actor"].step()
        self.sync_target()

        report.actor_loss = actor_report.actor_loss
        report.entropy = actor_report.entropy
        report.scale = self.scaler.scale
        report.per_step.update(actor_report.per_step)
        return report


def load_team(models: list[AgentModel], arrays: dict, metadata: dict) -> None:
    for model in models:
        model.load_state(arrays, metadata.get("agents", {}).get(str(model.index), {}))


def team_state(models: list[AgentModel]) -> tuple[dict, dict]:
    arrays, per_agent = {}, {}
    for model in models:
        agent_arrays, agent_meta = model.state()
        arrays.update(agent_arrays)
        per_agent[str(model.index)] = agent_meta
    return arrays, {"agents": per_agent}


def save_team(path, models: list[AgentModel], metadata: dict | None = None):
    arrays, team_meta = team_state(models)
    return checkpoint.save(path, arrays, {**(metadata or {}), **team_meta})


# ------------------- TARGETS -------------------
def n_step_targets(
    rewards: np.ndarray,
    terminated: np.ndarray,
    valid: np.ndarray,
    bootstrap: np.ndarray,
    discount: float,
    n_step: int,
    horizon: int,
) -> np.ndarray:
    """
    n-step TD targets G_h for h = 0..horizon-1.

    ``rewards``/``terminated``/``valid`` are (B, L); ``bootstrap`` is (B, L + 1)
    with the target value at every observation index. The sum stops at the end
    of the episode; after a terminal transition there is no bootstrap, after a
    truncated one the value of the last observation is used.
    """
    batch, length = rewards.shape
    rows = np.arange(batch)
    targets = np.zeros((batch, horizon))
    for h in range(horizon):
        total = np.zeros(batch)
        alive = np.ones(batch, dtype=bool)
        ended = np.zeros(batch, dtype=bool)
        boot_index = np.full(batch, h)
        boot_discount = np.ones(batch)
        for k in range(n_step):
            idx = h + k
            if idx >= length:
                break
            ok = alive & valid[:, idx]
            total += np.where(ok, discount**k * rewards[:, idx], 0.0)
            boot_index = np.where(ok, idx + 1, boot_index)
            boot_discount = np.where(ok, discount ** (k + 1), boot_discount)
            ended |= ok & terminated[:, idx]
            alive = ok & ~terminated[:, idx]
        targets[:, h] = total + np.where(ended, 0.0, boot_discount * bootstrap[rows, boot_index])
    return targets


def bootstrap_values(model: AgentModel, observations: np.ndarray, features) -> np.ndarray:
    """Target-critic value of the actor's deterministic action at every observation of the window."""
    z = model.encode_obs(observations)
    return model.value(z, model.policy(z, features), features, use_target=True)


# ------------------- LOSSES -------------------
def _masked_mean(values: Tensor, mask: np.ndarray) -> Tensor:
    weights = mask.astype(np.float64)
    return (values * weights).sum() / max(float(weights.sum()), 1.0)


def _step_features(features, h):
    return None if features is None else features[:, h]


def model_loss(
    model: AgentModel,
    observations: np.ndarray,
    actions: np.ndarray,
    batch: TrajectoryBatch,
    features,
    horizon: int,
) -> tuple[Tensor, LossReport]:
    """
    Weighted dynamics, reward and Q losses over a latent rollout of ``horizon`` steps.

    ``features`` are the received message features (B, L + 1, msg_dim) or None.
    """
    cfg = model.train_cfg
    if batch.length < horizon:
        raise ShapeMismatchError("trajectory batch", f">= {horizon} steps", batch.length)
    weights = horizon_weights(cfg.rho, horizon)

    targets = model.encode_obs(observations[:, 1:horizon + 1])
    returns = n_step_targets(
        batch.rewards, batch.terminated, batch.valid,
        bootstrap_values(model, observations, features),
        cfg.discount, cfg.n_step, horizon,
    )

    z = model.encode(observations[:, 0])
    total = 0.0
    per_step = {"dynamics": [], "reward": [], "q": []}
    for h in range(horizon):
        mask = batch.valid[:, h]
        e_h = _step_features(features, h)
        x = model.head_input(z, actions[:, h], e_h)
        z_next, r_logits, q_logits = model.dynamics(x), model.reward_head(x), model.critic(x)
        dynamics = _masked_mean(((z_next - targets[:, h]) ** 2).sum(axis=-1), mask)
        reward = _masked_mean(soft_cross_entropy(r_logits, batch.rewards[:, h], model.grid), mask)
        q = _masked_mean(soft_cross_entropy(q_logits, returns[:, h], model.grid), mask)
        total = total + float(weights[h]) * (cfg.dynamics_coef * dynamics + cfg.reward_coef * reward + cfg.q_coef * q)
        per_step["dynamics"].append(dynamics.item())
        per_step["reward"].append(reward.item())
        per_step["q"].append(q.item())
        z = z_next if cfg.chained_latents else model.encode(observations[:, h + 1])

    report = LossReport(
        agent=model.index,
        dynamics_loss=float(np.dot(weights, per_step["dynamics"])),
        reward_loss=float(np.dot(weights, per_step["reward"])),
        q_loss=float(np.dot(weights, per_step["q"])),
        total=total.item(),
        per_step=per_step,
    )
    if not np.isfinite(report.total):
        logger.error("agent=%d non-finite model loss %s", model.index, report.as_dict())
        raise NonFiniteError("model loss", report.total, diagnostics={"agent": model.index, **report.as_dict()})
    return total, report


def actor_loss(model: AgentModel, observations: np.ndarray, actions: np.ndarray, features, horizon: int):
    """
    -sum_h rho^h mean(Q(z_h, a_h, e_h) / scale - alpha * log pi(a_h))

    Latents are recomputed as constants with the current parameters; the
    critic is frozen, so only the actor receives gradients.
    """
    cfg = model.train_cfg
    weights = horizon_weights(cfg.rho, horizon)
    latents = [model.encode_obs(observations[:, 0])]
    for h in range(horizon - 1):
        z_next, _ = model.step(latents[-1], actions[:, h], _step_features(features, h))
        latents.append(z_next)

    samples = []
    for h in range(horizon):
        e_h = _step_features(features, h)
        action, log_prob = model.actor_sample(latents[h], e_h, stochastic=True)
        q = model.critic_value(latents[h], action, e_h, frozen=True)
        samples.append((action, log_prob, q))
    model.scaler.update(np.concatenate([q.data.reshape(-1) for _, _, q in samples]))
    scale = model.scaler.scale

    total = 0.0
    per_step = {"actor": [], "entropy": []}
    for h, (_, log_prob, q) in enumerate(samples):
        objective = (q / scale - cfg.entropy_coef * log_prob).mean()
        total = total - float(weights[h]) * objective
        per_step["actor"].append(-objective.item())
        per_step["entropy"].append(float(-log_prob.data.mean()))

    report = LossReport(
        agent=model.index,
        actor_loss=total.item(),
        entropy=float(np.mean(per_step["entropy"])),
        scale=scale,
        per_step=per_step,
    )
    if not np.isfinite(report.actor_loss):
        logger.error("agent=%d non-finite actor loss", model.index)
        raise NonFiniteError("actor loss", report.actor_loss, diagnostics={"agent": model.index, "scale": scale})
    return total, report


# ------------------- SEQUENTIAL UPDATE -------------------
def communication_order(n_agents: int, permute: bool, rng: np.random.Generator) -> list[int]:
    if not permute:
        return list(range(n_agents))
    return [int(i) for i in rng.permutation(n_agents)]


def random_mask(messages: MessageBatch, drop_prob: float, rng: np.random.Generator) -> MessageBatch:
    """Drop every slot of every message independently (payload and validity bit) with ``drop_prob``."""
    if not 0.0 <= drop_prob <= 1.0:
        raise ValueError(f"drop probability {drop_prob} outside [0, 1]")
    if drop_prob == 0.0:
        return messages
    keep = rng.random(messages.validity.shape) >= drop_prob
    return MessageBatch(messages.layout, messages.payload * keep[..., None], messages.validity & keep)


def sequential_update(
    models: list[AgentModel],
    batch: TrajectoryBatch,
    horizon: int,
    drop_prob: float = 0.0,
    permute: bool = False,
    rng: np.random.Generator | None = None,
) -> list[LossReport]:
    """
    Update every agent in communication order. Agent ``i`` trains on messages
    built from the freshly updated predictions of the agents before it.
    Returns the reports indexed by agent.
    """
    rng = rng or np.random.default_rng()
    layout = models[0].layout
    messages = MessageBatch.empty(layout, (batch.batch_size, batch.length + 1)) if layout is not None else None
    reports: list[LossReport | None] = [None] * len(models)
    for i in communication_order(len(models), permute, rng):
        model = models[i]
        received = None if messages is None else random_mask(messages, drop_prob, rng).features()
        reports[i] = model.update(batch.observations[i], batch.actions[i], batch, received, horizon)
        if messages is not None:
            latents, sent = model.message_trajectory(batch.observations[i], batch.actions[i], received, horizon)
            messages = messages.with_slot(i, latents, sent)
        logger.debug("agent=%d total=%.4f actor=%.4f", i, reports[i].total, reports[i].actor_loss)
    return reports
