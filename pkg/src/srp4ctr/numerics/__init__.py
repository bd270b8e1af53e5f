from .counter import FlopCounter, stage
from .optim import OptimizerState, adam_step
from .params import (
    CheckpointError,
    ParameterStore,
    read_checkpoint,
    truncated_normal,
    write_checkpoint,
)
from .tensor import (
    DimensionError,
    NonFiniteError,
    Tensor,
    add,
    backward,
    bce_with_logits,
    broadcast_to,
    concat,
    cross_entropy,
    exp,
    gelu,
    getitem,
    layer_norm,
    log,
    matmul,
    mean,
    mul,
    no_grad,
    reshape,
    sigmoid,
    softmax,
    sum_,
    take,
    tanh,
    transpose,
)

__all__ = [
    "CheckpointError",
    "DimensionError",
    "FlopCounter",
    "NonFiniteError",
    "OptimizerState",
    "ParameterStore",
    "Tensor",
    "adam_step",
    "add",
    "backward",
    "bce_with_logits",
    "broadcast_to",
    "concat",
    "cross_entropy",
    "exp",
    "gelu",
    "getitem",
    "layer_norm",
    "log",
    "matmul",
    "mean",
    "mul",
    "no_grad",
    "read_checkpoint",
    "reshape",
    "sigmoid",
    "softmax",
    "stage",
    "sum_",
    "take",
    "tanh",
    "transpose",
    "truncated_normal",
    "write_checkpoint",
]
