"""Fixed-point, multiplier-free spiking transformer kernels and a staged conversion pipeline."""
from .counters import OpCounter, counting
from .errors import (
    DegenerateInputError,
    DomainError,
    EncodingCapacityError,
    FixedOverflowError,
    RangeError,
    ShapeError,
    SorbetError,
    StateError,
    UnsupportedError,
)
from .kernels import BspnState, Pow2Distribution, bspn_forward_infer, bspn_forward_train, ptsoftmax
from .model import ModelConfig, StageModel, build_toy, forward, transform_pipeline
from .numerics import FixedTensor, Pow2Exponent, nearest_pow2_exponent, pow2_lut, shift_div
from .quantize import BinaryLinear, ElasticParams, binarize_weights, elastic_binarize
from .spiking import SpikeTrain, encode_if, encode_rate, spike_accumulate, spiking_matmul

__version__ = "0.1.0"

__all__ = [
    "BinaryLinear", "BspnState", "DegenerateInputError", "DomainError", "ElasticParams",
    "EncodingCapacityError", "FixedOverflowError", "FixedTensor", "ModelConfig", "OpCounter",
    "Pow2Distribution", "Pow2Exponent", "RangeError", "ShapeError", "SorbetError", "SpikeTrain",
    "StageModel", "StateError", "UnsupportedError", "binarize_weights", "build_toy",
    "bspn_forward_infer", "bspn_forward_train", "counting", "elastic_binarize", "encode_if",
    "encode_rate", "forward", "nearest_pow2_exponent", "pow2_lut", "ptsoftmax", "shift_div",
    "spike_accumulate", "spiking_matmul", "transform_pipeline",
]
