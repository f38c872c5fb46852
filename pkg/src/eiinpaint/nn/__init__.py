"""Small numpy network engine: layers, forward/backward, Adam, gradient checks."""
from .adam import AdamState, NonFiniteGradientError, TrainHyper, adam_step
from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import GradCheckReport, grad_check, run_suite
from .layers import (
    BatchNorm,
    BilinearUp,
    BoxDown,
    Conv2d,
    Layer,
    LeakyReLU,
    ResidualBlock,
    ScaleSkip,
)
from .network import Network, NetworkParams, Tape, TapeError, backward, forward, init_params, param_count

__all__ = [
    "AdamState",
    "BatchNorm",
    "BilinearUp",
    "BoxDown",
    "Conv2d",
    "GradCheckReport",
    "Layer",
    "LeakyReLU",
    "Network",
    "NetworkParams",
    "NonFiniteGradientError",
    "ResidualBlock",
    "ScaleSkip",
    "Tape",
    "TapeError",
    "TrainHyper",
    "adam_step",
    "backward",
    "forward",
    "grad_check",
    "init_params",
    "load_checkpoint",
    "param_count",
    "run_suite",
    "save_checkpoint",
]
