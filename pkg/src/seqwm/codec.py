"""
Numeric transforms for discrete regression heads and simplex latents.

Scalars (rewards, Q-values) are compressed with symlog, spread over a uniform
bin grid with two-hot weights, and learned with a soft cross-entropy. Latent
vectors are projected group-wise onto simplices (SEM normalization).
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import softmax as np_softmax

from seqwm.autodiff import tensor as T
from seqwm.autodiff.tensor import Tensor
from seqwm.exceptions import ShapeMismatchError


def _symlog(x):
    return np.sign(x) * np.log1p(np.abs(x))


def _symexp(x):
    return np.sign(x) * np.expm1(np.abs(x))


def symlog(x):
    """sign(x) * ln(|x| + 1). Accepts scalars, arrays or tensors."""
    if isinstance(x, Tensor):
        return T.unary(x, _symlog, lambda v: 1.0 / (1.0 + np.abs(v)))
    return _symlog(np.asarray(x, dtype=np.float64)) if np.ndim(x) else float(_symlog(float(x)))


def symexp(x):
    """sign(x) * (e^|x| - 1), the inverse of :func:`symlog`."""
    if isinstance(x, Tensor):
        return T.unary(x, _symexp, lambda v: np.exp(np.abs(v)))
    return _symexp(np.asarray(x, dtype=np.float64)) if np.ndim(x) else float(_symexp(float(x)))


@dataclass(frozen=True)
class BinGrid:
    """Uniformly spaced bin centers in symlog space, endpoints included."""

    num_bins: int = 101
    range_low: float = -20.0
    range_high: float = 20.0
    centers: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.num_bins < 2:
            raise ValueError("a bin grid needs at least 2 bins")
        if not self.range_low < self.range_high:
            raise ValueError("range_low must be below range_high")
        centers = np.linspace(self.range_low, self.range_high, self.num_bins)
        centers.setflags(write=False)
        object.__setattr__(self, "centers", centers)

    @property
    def width(self) -> float:
        return (self.range_high - self.range_low) / (self.num_bins - 1)


DEFAULT_GRID = BinGrid()


def twohot_encode(r, grid: BinGrid = DEFAULT_GRID) -> np.ndarray:
    """
    Two-hot weights of symlog(r) over ``grid``; shape ``np.shape(r) + (B,)``.

    Values outside the grid clamp to a one-hot on the edge bin.
    """
    x = np.clip(_symlog(np.asarray(r, dtype=np.float64)), grid.range_low, grid.range_high)
    # k = #{b_j <= x}, as a 0-based index of the lower neighbour
    lower = np.asarray(np.clip(np.floor((x - grid.range_low) / grid.width).astype(np.int64), 0, grid.num_bins - 2))
    upper_weight = np.asarray(np.clip((x - grid.centers[lower]) / grid.width, 0.0, 1.0))
    weights = np.zeros(x.shape + (grid.num_bins,))
    np.put_along_axis(weights, lower[..., None], (1.0 - upper_weight)[..., None], axis=-1)
    np.put_along_axis(weights, lower[..., None] + 1, upper_weight[..., None], axis=-1)
    return weights


def twohot_decode(values, grid: BinGrid = DEFAULT_GRID, from_logits: bool = True):
    """
    symexp of the expected bin center. ``values`` are logits over the last axis
    unless ``from_logits`` is False, in which case they are probabilities.

    Tensor input stays differentiable; array input returns an array (or float).
    """
    if isinstance(values, Tensor):
        probs = T.softmax(values, axis=-1) if from_logits else values
        return symexp((probs * grid.centers).sum(axis=-1))
    values = np.asarray(values, dtype=np.float64)
    probs = np_softmax(values, axis=-1) if from_logits else values
    return symexp(probs @ grid.centers)


def soft_cross_entropy(logits, target, grid: BinGrid = DEFAULT_GRID) -> Tensor:
    """
    -sum_i twohot(target)_i * log softmax(logits)_i over the last axis.

    ``target`` is a constant (array of scalars matching the leading shape of
    ``logits``); the result has that leading shape.
    """
    logits = T.as_tensor(logits)
    weights = twohot_encode(np.asarray(target.data if isinstance(target, Tensor) else target), grid)
    return -(T.log_softmax(logits, axis=-1) * weights).sum(axis=-1)


def sem_norm(z, simplex_dim: int = 8):
    """Softmax over each consecutive group of ``simplex_dim`` entries of the last axis."""
    width = z.shape[-1]
    if width % simplex_dim:
        raise ShapeMismatchError("sem_norm", f"a multiple of {simplex_dim}", width)
    grouped_shape = z.shape[:-1] + (width // simplex_dim, simplex_dim)
    if isinstance(z, Tensor):
        return T.softmax(z.reshape(grouped_shape), axis=-1).reshape(z.shape)
    z = np.asarray(z, dtype=np.float64)
    return np_softmax(z.reshape(grouped_shape), axis=-1).reshape(z.shape)


@dataclass
class PercentileScaler:
    """EMA of the 5th-95th percentile spread of Q-values, floored at ``min_scale``."""

    scale: float = 1.0
    tau: float = 0.99
    min_scale: float = 1e-2

    def __post_init__(self):
        if not 0.0 < self.tau < 1.0:
            raise ValueError("tau must lie in (0, 1)")
        self.scale = max(float(self.scale), self.min_scale)

    def update(self, q_batch) -> "PercentileScaler":
        q_batch = np.asarray(q_batch, dtype=np.float64).reshape(-1)
        if q_batch.size == 0:
            raise ValueError("percentile update needs at least one value")
        low, high = np.percentile(q_batch, [5, 95])
        self.scale = max(self.tau * self.scale + (1.0 - self.tau) * float(high - low), self.min_scale)
        return self


def percentile_update(scaler: PercentileScaler, q_batch) -> PercentileScaler:
    return scaler.update(q_batch)
