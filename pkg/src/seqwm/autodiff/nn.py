from dataclasses import dataclass

import numpy as np

from seqwm.autodiff import tensor as T
from seqwm.autodiff.tensor import Parameter, Tensor
from seqwm.exceptions import ConfigError, ShapeMismatchError
from seqwm.types import HiddenActivation, OutputActivation


@dataclass(frozen=True)
class MlpSpec:
    """
    Shape of one MLP head: ``num_layers`` hidden blocks of
    Linear -> LayerNorm -> Mish, then a Linear output layer and its activation.
    """

    input_dim: int
    hidden_dim: int
    num_layers: int
    output_dim: int
    hidden_activation: HiddenActivation = HiddenActivation.mish
    output_activation: OutputActivation = OutputActivation.linear
    use_layer_norm: bool = True
    simplex_dim: int = 8

    def __post_init__(self):
        for field in ("input_dim", "hidden_dim", "output_dim"):
            if getattr(self, field) <= 0:
                raise ConfigError(f"MlpSpec.{field}", "must be positive")
        if self.num_layers < 1:
            raise ConfigError("MlpSpec.num_layers", "must be at least 1")
        if self.output_activation == OutputActivation.sem_norm and self.output_dim % self.simplex_dim:
            raise ConfigError(
                "MlpSpec.output_dim",
                f"{self.output_dim} is not divisible by simplex dim {self.simplex_dim}",
            )

    def param_shapes(self) -> list[tuple[str, tuple]]:
        shapes = []
        width = self.input_dim
        for layer in range(self.num_layers):
            shapes.append((f"{layer}.weight", (width, self.hidden_dim)))
            shapes.append((f"{layer}.bias", (self.hidden_dim,)))
            if self.use_layer_norm:
                shapes.append((f"{layer}.ln_gain", (self.hidden_dim,)))
                shapes.append((f"{layer}.ln_bias", (self.hidden_dim,)))
            width = self.hidden_dim
        shapes.append(("out.weight", (width, self.output_dim)))
        shapes.append(("out.bias", (self.output_dim,)))
        return shapes

    def param_count(self) -> int:
        return int(sum(np.prod(shape) for _, shape in self.param_shapes()))


def init_params(spec: MlpSpec, rng: np.random.Generator, zero_output: bool = False) -> list[Parameter]:
    """Glorot-uniform weights, zero biases, unit LayerNorm gains."""
    params = []
    for name, shape in spec.param_shapes():
        if name.endswith("weight") and not (zero_output and name.startswith("out.")):
            limit = np.sqrt(6.0 / (shape[0] + shape[1]))
            values = rng.uniform(-limit, limit, size=shape)
        elif name.endswith("ln_gain"):
            values = np.ones(shape)
        else:
            values = np.zeros(shape)
        params.append(Parameter(values, name=name))
    return params


def _check_params(spec: MlpSpec, params) -> None:
    expected = spec.param_shapes()
    if len(params) != len(expected):
        raise ShapeMismatchError("mlp.params", len(expected), len(params))
    for (name, shape), param in zip(expected, params):
        if param.shape != shape:
            raise ShapeMismatchError(f"mlp.{name}", shape, param.shape)


def _output(spec: MlpSpec, x: Tensor) -> Tensor:
    if spec.output_activation == OutputActivation.tanh:
        return T.tanh(x)
    if spec.output_activation == OutputActivation.sem_norm:
        from seqwm.codec import sem_norm

        return sem_norm(x, spec.simplex_dim)
    return x


def mlp_forward(spec: MlpSpec, params, x, name: str = "mlp", frozen: bool = False) -> Tensor:
    """
    Evaluate the MLP on ``x`` of shape (..., input_dim).

    ``frozen`` uses the current parameter values as constants, so the result
    still carries gradients to ``x`` but none to the parameters.
    """
    x = T.as_tensor(x)
    if x.shape[-1] != spec.input_dim:
        raise ShapeMismatchError(f"{name}.0.weight", spec.input_dim, x.shape[-1])
    _check_params(spec, params)
    if frozen:
        params = [T.stop_gradient(p) for p in params]
    cursor = iter(params)
    h = x
    for _ in range(spec.num_layers):
        weight, bias = next(cursor), next(cursor)
        h = h @ weight + bias
        if spec.use_layer_norm:
            h = T.layer_norm(h, next(cursor), next(cursor))
        h = T.mish(h)
    weight, bias = next(cursor), next(cursor)
    return _output(spec, h @ weight + bias)


def _output_array(spec: MlpSpec, x: np.ndarray) -> np.ndarray:
    if spec.output_activation == OutputActivation.tanh:
        return np.tanh(x)
    if spec.output_activation == OutputActivation.sem_norm:
        from seqwm.codec import sem_norm

        return sem_norm(x, spec.simplex_dim)
    return x


def mlp_predict(spec: MlpSpec, params, parts, eps: float = 1e-5) -> np.ndarray:
    """
    Inference-only forward pass on plain arrays, with no trace.

    ``parts`` is an array or a list of arrays whose last axes concatenate to
    ``input_dim``. Each part meets its own rows of the first weight matrix, so
    a part shared by every batch row can be passed once with no leading axes.
    """
    if isinstance(parts, np.ndarray):
        parts = [parts]
    parts = [np.asarray(p) for p in parts if p is not None]
    width = sum(p.shape[-1] for p in parts)
    if width != spec.input_dim:
        raise ShapeMismatchError("mlp.0.weight", spec.input_dim, width)
    values = [p.data for p in params]
    weight, h = values[0], values[1]
    offset = 0
    for part in parts:
        h = h + part @ weight[offset:offset + part.shape[-1]]
        offset += part.shape[-1]
    cursor = 2
    for layer in range(spec.num_layers):
        if layer:
            h = h @ values[cursor] + values[cursor + 1]
            cursor += 2
        if spec.use_layer_norm:
            mu = h.mean(axis=-1, keepdims=True)
            h = (h - mu) / np.sqrt(h.var(axis=-1, keepdims=True) + eps) * values[cursor] + values[cursor + 1]
            cursor += 2
        h = h * np.tanh(np.logaddexp(0.0, h))
    return _output_array(spec, h @ values[cursor] + values[cursor + 1])


class Mlp:
    """A named MLP head owning its parameters."""

    def __init__(self, spec: MlpSpec, rng: np.random.Generator, name: str = "mlp", zero_output: bool = False):
        self.spec = spec
        self.name = name
        self.params = init_params(spec, rng, zero_output=zero_output)

    def __call__(self, x, frozen: bool = False) -> Tensor:
        return mlp_forward(self.spec, self.params, x, name=self.name, frozen=frozen)

    def predict(self, parts) -> np.ndarray:
        return mlp_predict(self.spec, self.params, parts)

    def __repr__(self):
        return f"Mlp(name={self.name}, params={self.spec.param_count()})"

    def zero_grad(self) -> None:
        for param in self.params:
            param.zero_grad()

    def state(self) -> dict[str, np.ndarray]:
        return {f"{self.name}/{p.name}": p.data for p in self.params}

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        for param in self.params:
            key = f"{self.name}/{param.name}"
            if key not in arrays:
                raise ShapeMismatchError(key, param.shape, "missing")
            if arrays[key].shape != param.shape:
                raise ShapeMismatchError(key, param.shape, arrays[key].shape)
            param.data = np.array(arrays[key], dtype=param.data.dtype)
