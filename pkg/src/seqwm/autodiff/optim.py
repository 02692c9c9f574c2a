import logging
from dataclasses import dataclass, field

import numpy as np

from seqwm.autodiff.tensor import Parameter

logger = logging.getLogger(__name__)


@dataclass
class AdamState:
    """Moment accumulators for one group of parameters."""

    first_moment: list[np.ndarray]
    second_moment: list[np.ndarray]
    learning_rate: float = 5e-4
    lr_scale: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    skipped_steps: int = field(default=0)

    @classmethod
    def for_params(cls, params, learning_rate: float = 5e-4, lr_scale: float = 1.0, **kwargs) -> "AdamState":
        if learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        return cls(
            first_moment=[np.zeros_like(p.data) for p in params],
            second_moment=[np.zeros_like(p.data) for p in params],
            learning_rate=learning_rate,
            lr_scale=lr_scale,
            **kwargs,
        )

    @property
    def effective_lr(self) -> float:
        return self.learning_rate * self.lr_scale


def clip_grad_norm(params, max_norm: float) -> float:
    """Rescale gradients in place so their joint L2 norm is at most ``max_norm``."""
    norm = float(np.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in params)))
    if max_norm > 0 and np.isfinite(norm) and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for p in params:
            p.grad *= scale
    return norm


def adam_step(params: list[Parameter], grads: list[np.ndarray], state: AdamState) -> bool:
    """
    Apply one bias-corrected Adam update in place.

    Returns False, leaving parameters and moments untouched, when any gradient
    contains NaN or inf.
    """
    if len(params) != len(grads) or len(params) != len(state.first_moment):
        raise ValueError("params, grads and optimizer state disagree in length")
    for param, grad in zip(params, grads):
        if grad.shape != param.data.shape:
            raise ValueError(f"gradient shape {grad.shape} != parameter shape {param.data.shape}")
    if not all(np.all(np.isfinite(g)) for g in grads):
        state.skipped_steps += 1
        logger.warning("adam step skipped: non-finite gradient (skipped=%d)", state.skipped_steps)
        return False
    state.step_count += 1
    b1, b2 = state.beta1, state.beta2
    correction1 = 1.0 - b1**state.step_count
    correction2 = 1.0 - b2**state.step_count
    lr = state.effective_lr
    for param, grad, m, v in zip(params, grads, state.first_moment, state.second_moment):
        m *= b1
        m += (1.0 - b1) * grad
        v *= b2
        v += (1.0 - b2) * grad * grad
        param.data -= lr * (m / correction1) / (np.sqrt(v / correction2) + state.epsilon)
    return True


class Adam:
    """Adam over a fixed parameter list, reading gradients from ``Parameter.grad``."""

    def __init__(self, params, learning_rate: float = 5e-4, lr_scale: float = 1.0, max_grad_norm: float = 0.0):
        self.params = list(params)
        self.max_grad_norm = max_grad_norm
        self.state = AdamState.for_params(self.params, learning_rate=learning_rate, lr_scale=lr_scale)

    def zero_grad(self) -> None:
        for param in self.params:
            param.zero_grad()

    def step(self) -> bool:
        if self.max_grad_norm > 0:
            clip_grad_norm(self.params, self.max_grad_norm)
        return adam_step(self.params, [p.grad for p in self.params], self.state)
