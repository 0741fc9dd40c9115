from .core import (
    DTYPE,
    GradientTape,
    ParamSet,
    log_sigmoid,
    log_softmax,
    sigmoid,
    softmax,
    softmax_xent_grad,
    uniform_init,
)
from .gru import GRU, RecurrentState, forward_sequence, rnn_step
from .kernels import BACKEND
from .optim import Adam, NonFiniteGradient

__all__ = [
    "Adam",
    "BACKEND",
    "DTYPE",
    "GRU",
    "GradientTape",
    "NonFiniteGradient",
    "ParamSet",
    "RecurrentState",
    "forward_sequence",
    "log_sigmoid",
    "log_softmax",
    "rnn_step",
    "sigmoid",
    "softmax",
    "softmax_xent_grad",
    "uniform_init",
]
