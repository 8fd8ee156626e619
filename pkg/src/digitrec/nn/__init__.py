from digitrec.nn.tensor import Tensor, parameter, as_tensor
from digitrec.nn.functional import (
    GRUParams,
    bigru,
    conv2d,
    dropout,
    gelu,
    gru_sequence,
    layer_norm,
    linear,
    softmax,
    softmax_cross_entropy,
)
from digitrec.nn.gradcheck import GradCheckReport, grad_check

__all__ = [
    "Tensor",
    "parameter",
    "as_tensor",
    "GRUParams",
    "bigru",
    "conv2d",
    "dropout",
    "gelu",
    "gru_sequence",
    "layer_norm",
    "linear",
    "softmax",
    "softmax_cross_entropy",
    "GradCheckReport",
    "grad_check",
]
