from enum import Enum


class HiddenActivation(Enum):
    mish = "mish"


class OutputActivation(Enum):
    linear = "linear"
    tanh = "tanh"
    sem_norm = "sem_norm"


class MessageMode(Enum):
    full = "full"
    action_only = "action_only"


class CandidateSource(Enum):
    gaussian = "gaussian"
    actor = "actor"


class Provenance(Enum):
    """Where the content of a message slot came from."""

    empty = "empty"
    live = "live"
    cached = "cached"


class PlannerMode(Enum):
    planner_actor = "planner_actor"
    planner_only = "planner_only"
    actor_only = "actor_only"
