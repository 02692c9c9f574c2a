from .ablate import AblationRow, ablate_prediction
from .buffer import ReplayBuffer
from .evaluate import EvalSummary, evaluate, evaluate_models
from .export import export_trajectory
from .train import Trainer, TrainSummary, build_team, load_checkpoint, stored_config, train
