from distr.autodiff.nets import (
    NetParams,
    TensorNet,
    forward,
    gradient_check,
    gradients,
    load_checkpoint,
    net_init,
    save_checkpoint,
    value_and_grad_arrays,
    value_and_gradients,
)
from distr.autodiff.optim import AdamState, adam_init, adam_step, adam_update
from distr.autodiff.tensor import Tensor

__all__ = [
    "AdamState",
    "NetParams",
    "Tensor",
    "TensorNet",
    "adam_init",
    "adam_step",
    "adam_update",
    "forward",
    "gradient_check",
    "gradients",
    "load_checkpoint",
    "net_init",
    "save_checkpoint",
    "value_and_grad_arrays",
    "value_and_gradients",
]
