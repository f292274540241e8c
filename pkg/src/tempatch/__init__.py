"""Dynamic-graph encoder with temporal patching, per-patch message
passing and cross-patch causal attention, plus training utilities for
future link prediction and dynamic node classification."""

from .data import EventGraph, chronological_split, inductive_split, load_edge_stream
from .encoder import EncoderConfig, encode, init_encoder_params
from .errors import (ConfigError, DataError, NumericError, SchemaError,
                     ShapeError, TempatchError)
from .kernels import BACKEND as KERNEL_BACKEND
from .stream import extract_window, patchify, sample_neighborhood
from .trainer import RunConfig, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "EventGraph", "chronological_split", "inductive_split", "load_edge_stream",
    "EncoderConfig", "encode", "init_encoder_params",
    "TempatchError", "ConfigError", "DataError", "SchemaError",
    "NumericError", "ShapeError",
    "KERNEL_BACKEND",
    "extract_window", "patchify", "sample_neighborhood",
    "RunConfig", "train", "evaluate",
    "__version__",
]
