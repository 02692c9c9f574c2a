"""
Run configuration.

Config files are YAML mappings of flat dotted keys (``planner.horizon: 3``);
nested mappings are flattened first. Every key is typed by the dataclass field
it maps to, unknown keys are rejected, and every key doubles as a CLI flag.
"""

import dataclasses
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from seqwm.exceptions import ConfigError
from seqwm.planner import PlannerConfig
from seqwm.types import MessageMode, PlannerMode

DEFAULT_CONFIG_NAME = "config.yaml"


@dataclass(frozen=True)
class EnvConfig:
    name: str = "corridor_gate"
    n_agents: int = 2
    episode_limit: int = 100
    obs_noise: float = 0.0
    action_delay: int = 0
    dt: float = 0.1
    max_speed: float = 1.0
    agent_radius: float = 0.3
    gate_width: float = 1.0
    collision_penalty: float = 0.5
    time_penalty: float = 0.01
    success_bonus: float = 5.0
    friction: float = 1.2
    state_dim: int = 2
    coupling: float = 0.8
    transition_noise: float = 0.0


@dataclass(frozen=True)
class ModelConfig:
    latent_dim: int = 64
    simplex_dim: int = 8
    encoder_hidden: int = 512
    dynamics_hidden: int = 512
    reward_hidden: int = 512
    critic_hidden: int = 256
    actor_hidden: int = 256
    num_layers: int = 2
    num_bins: int = 101
    bin_low: float = -20.0
    bin_high: float = 20.0
    log_std_min: float = -5.0
    log_std_max: float = 2.0


@dataclass(frozen=True)
class TrainConfig:
    total_steps: int = 200_000
    seed_steps: int = 1_000
    batch_size: int = 1000
    buffer_size: int = 1_000_000
    epochs_per_episode: int = 20
    lr: float = 5e-4
    encoder_lr_scale: float = 0.3
    max_grad_norm: float = 20.0
    discount: float = 0.99
    n_step: int = 20
    rho: float = 0.5
    dynamics_coef: float = 20.0
    reward_coef: float = 0.1
    q_coef: float = 0.1
    entropy_coef: float = 1e-4
    target_rate: float = 0.995
    scale_tau: float = 0.99
    scale_min: float = 1e-2
    chained_latents: bool = True
    checkpoint_every: int = 50


@dataclass(frozen=True)
class MaskingConfig:
    drop_prob: float = 0.0
    permute: bool = False


@dataclass(frozen=True)
class CommConfig:
    enabled: bool = True
    mode: str = MessageMode.full.value
    drop_prob: float = 0.0
    use_cache: bool = True
    wire: bool = True


@dataclass(frozen=True)
class EvalConfig:
    episodes: int = 50
    workers: int = 1
    episode_log: str = ""


@dataclass(frozen=True)
class AblationConfig:
    collect_steps: int = 5_000
    eval_steps: int = 1_000
    train_steps: int = 500
    batch_size: int = 256


@dataclass(frozen=True)
class RunConfig:
    env: EnvConfig = field(default_factory=EnvConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    masking: MaskingConfig = field(default_factory=MaskingConfig)
    comm: CommConfig = field(default_factory=CommConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    ablation: AblationConfig = field(default_factory=AblationConfig)
    seed: int = 0
    output_dir: str = "runs/default"
    dtype: str = "float64"

    def validate(self) -> "RunConfig":
        checks = [
            ("planner.elites", self.planner.elites <= self.planner.gaussian_samples + self.planner.actor_samples,
             "must not exceed gaussian_samples + actor_samples"),
            ("planner.horizon", self.planner.horizon >= 1, "must be at least 1"),
            ("planner.iterations", self.planner.iterations >= 1, "must be at least 1"),
            ("planner.temperature", self.planner.temperature > 0, "must be positive"),
            ("planner.kl_threshold", self.planner.kl_threshold >= 0, "must be non-negative"),
            ("planner.sigma_floor", self.planner.sigma_floor > 0, "must be positive"),
            ("planner.cutoff_ratio", self.planner.cutoff_ratio == 0 or 0 < self.planner.cutoff_ratio < 0.5,
             "must be 0 (off) or lie in (0, 0.5)"),
            ("planner.mode", self.planner.mode in {m.value for m in PlannerMode}, "unknown planner mode"),
            ("model.latent_dim", self.model.latent_dim % self.model.simplex_dim == 0,
             "must be divisible by model.simplex_dim"),
            ("model.num_bins", self.model.num_bins >= 2, "must be at least 2"),
            ("train.n_step", self.train.n_step >= 1, "must be at least 1"),
            ("train.rho", 0 < self.train.rho <= 1, "must lie in (0, 1]"),
            ("train.discount", 0 <= self.train.discount <= 1, "must lie in [0, 1]"),
            ("train.discount", self.train.discount == self.planner.discount, "must equal planner.discount"),
            ("train.lr", self.train.lr > 0, "must be positive"),
            ("masking.drop_prob", 0 <= self.masking.drop_prob <= 1, "must lie in [0, 1]"),
            ("comm.drop_prob", 0 <= self.comm.drop_prob <= 1, "must lie in [0, 1]"),
            ("comm.mode", self.comm.mode in {m.value for m in MessageMode}, "unknown message mode"),
            ("dtype", self.dtype in ("float32", "float64"), "must be float32 or float64"),
            ("env.n_agents", self.env.n_agents >= 1, "must be at least 1"),
        ]
        for key, ok, message in checks:
            if not ok:
                raise ConfigError(key, message)
        return self

    @property
    def message_mode(self) -> MessageMode:
        return MessageMode(self.comm.mode)

    @property
    def planner_mode(self) -> PlannerMode:
        return PlannerMode(self.planner.mode)


# ------------------- FLATTENING -------------------
def _field_type(owner, name: str):
    hints = typing.get_type_hints(owner)
    return hints[name]


def schema() -> list[tuple[str, type, object]]:
    """(key, type, default) for every config key, in declaration order."""
    rows = []
    defaults = RunConfig()
    for top in dataclasses.fields(RunConfig):
        kind = _field_type(RunConfig, top.name)
        if dataclasses.is_dataclass(kind):
            section = getattr(defaults, top.name)
            for sub in dataclasses.fields(kind):
                rows.append((f"{top.name}.{sub.name}", _field_type(kind, sub.name), getattr(section, sub.name)))
        else:
            rows.append((top.name, kind, getattr(defaults, top.name)))
    return rows


def format_schema() -> str:
    lines = [f"{'key':<32} {'type':<6} default"]
    for key, kind, default in schema():
        lines.append(f"{key:<32} {kind.__name__:<6} {default!r}")
    return "\n".join(lines)


def _flatten(mapping: dict, prefix: str = "") -> dict:
    flat = {}
    for key, value in mapping.items():
        full = f"{prefix}{key}"
        if isinstance(value, dict):
            flat.update(_flatten(value, prefix=f"{full}."))
        else:
            flat[full] = value
    return flat


def _coerce(key: str, kind, value):
    if isinstance(kind, types.UnionType):
        kind = next(a for a in typing.get_args(kind) if a is not type(None))
    if kind is bool:
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.strip().lower() in ("true", "1", "yes", "false", "0", "no"):
            return value.strip().lower() in ("true", "1", "yes")
        raise ConfigError(key, f"expected a bool, got {value!r}")
    if kind is int:
        if isinstance(value, bool):
            raise ConfigError(key, f"expected an int, got {value!r}")
        if isinstance(value, int):
            return value
        if isinstance(value, float) and value.is_integer():
            return int(value)
        if isinstance(value, str):
            try:
                return int(float(value)) if float(value).is_integer() else int(value)
            except ValueError:
                pass
        raise ConfigError(key, f"expected an int, got {value!r}")
    if kind is float:
        if isinstance(value, bool):
            raise ConfigError(key, f"expected a float, got {value!r}")
        try:
            return float(value)
        except (TypeError, ValueError):
            raise ConfigError(key, f"expected a float, got {value!r}") from None
    if kind is str:
        return str(value)
    raise ConfigError(key, f"unsupported field type {kind}")


def from_flat(values: dict, base: RunConfig | None = None) -> RunConfig:
    """Build a validated RunConfig from dotted keys layered over ``base``."""
    base = base or RunConfig()
    known = {key: kind for key, kind, _ in schema()}
    sections: dict[str, dict] = {}
    top_level: dict = {}
    for key, value in values.items():
        if key not in known:
            raise ConfigError(key, "unknown config key")
        coerced = _coerce(key, known[key], value)
        if "." in key:
            section, name = key.split(".", 1)
            sections.setdefault(section, {})[name] = coerced
        else:
            top_level[key] = coerced
    updates = dict(top_level)
    for section, changes in sections.items():
        updates[section] = dataclasses.replace(getattr(base, section), **changes)
    return dataclasses.replace(base, **updates).validate()


def to_flat(cfg: RunConfig) -> dict:
    flat = {}
    for key, _, _ in schema():
        if "." in key:
            section, name = key.split(".", 1)
            flat[key] = getattr(getattr(cfg, section), name)
        else:
            flat[key] = getattr(cfg, key)
    return flat


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Read a YAML config file (optional) and apply flag overrides on top."""
    values = {}
    if path is not None:
        raw = yaml.safe_load(Path(path).read_text()) or {}
        if not isinstance(raw, dict):
            raise ConfigError(str(path), "config file must contain a mapping")
        values.update(_flatten(raw))
    values.update(overrides or {})
    return from_flat(values)


def save_config(cfg: RunConfig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(yaml.safe_dump(to_flat(cfg), sort_keys=False))
    return path
