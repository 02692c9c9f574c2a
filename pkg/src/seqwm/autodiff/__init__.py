from .nn import Mlp, MlpSpec, mlp_forward, mlp_predict
from .optim import Adam, AdamState, adam_step
from .tensor import Parameter, Tensor, get_default_dtype, no_grad, set_default_dtype, stop_gradient
