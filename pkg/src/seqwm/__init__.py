from .comm import CommCache, LinkModel, Message, MessageBatch, MessageLayout
from .config import RunConfig, load_config
from .exceptions import (
    CheckpointError,
    ConfigError,
    EnvDoneError,
    NonFiniteError,
    SeqwmError,
    ShapeMismatchError,
    SlotError,
    TraceError,
    WireFormatError,
)
from .planner import PlannerConfig, TeamPlanner, plan
from .worldmodel import AgentModel, sequential_update

__version__ = "0.1.0"
