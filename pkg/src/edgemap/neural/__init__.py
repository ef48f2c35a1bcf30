from .tensor import StaleTapeError, Tensor, as_tensor, concat, parameter, stack
from .layers import (
    GaussianHead,
    GraphConv,
    GraphEncoder,
    GRUCell,
    Linear,
    LSTMCell,
    MLP,
    Module,
    Recurrent,
    SoftmaxHead,
    graph_conv,
    normalize_adjacency,
    normalize_adjacency_t,
)
from .optim import SGD, Adam, grad_norm

__all__ = [
    "Adam", "GaussianHead", "GraphConv", "GraphEncoder", "GRUCell", "Linear", "LSTMCell",
    "MLP", "Module", "Recurrent", "SGD", "SoftmaxHead", "StaleTapeError", "Tensor",
    "as_tensor", "concat", "grad_norm", "graph_conv", "normalize_adjacency",
    "normalize_adjacency_t", "parameter", "stack",
]
