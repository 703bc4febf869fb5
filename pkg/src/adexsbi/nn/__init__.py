from .tensor import (
    Tensor,
    add,
    mul,
    matmul,
    relu,
    tanh,
    exp,
    log,
    softplus,
    sigmoid,
    conv1d,
    conv1d_output_length,
    dropout,
    tsum,
    tmean,
    getitem,
    take_cols,
    concat,
    reshape,
    gru,
    topological_order,
)
from .layers import Linear, MLP, glorot_uniform
from .optim import Adam
from .checkpoint import save_tensors, load_tensors, CheckpointError

__all__ = [
    "Tensor", "add", "mul", "matmul", "relu", "tanh", "exp", "log",
    "softplus", "sigmoid", "conv1d", "conv1d_output_length", "dropout",
    "tsum", "tmean", "getitem", "take_cols", "concat", "reshape", "gru",
    "topological_order", "Linear", "MLP", "glorot_uniform", "Adam",
    "save_tensors", "load_tensors", "CheckpointError",
]
