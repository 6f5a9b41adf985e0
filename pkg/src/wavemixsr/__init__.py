"""WaveMixSR-V2 single-image super-resolution on NumPy."""

from .errors import FormatError, ImageIOError, NumericError, ParameterError, ShapeError, WaveMixError
from .model import (
    BlockConfig,
    Model,
    ModelConfig,
    SR2xConfig,
    block_forward,
    init_params,
    model_forward,
    multiply_adds,
    param_count,
    sr2x_forward,
)
from .tensor import Tape, Tensor
from .weights import load_weights, save_weights

__all__ = [
    "BlockConfig",
    "FormatError",
    "ImageIOError",
    "Model",
    "ModelConfig",
    "NumericError",
    "ParameterError",
    "SR2xConfig",
    "ShapeError",
    "Tape",
    "Tensor",
    "WaveMixError",
    "block_forward",
    "init_params",
    "load_weights",
    "model_forward",
    "multiply_adds",
    "param_count",
    "save_weights",
    "sr2x_forward",
]

__version__ = "0.1.0"
