"""Open relation extraction as sequence tagging (ON-LSTM + dual aware encoder + CRF)."""

from .model import Model, ModelConfig, forward, load, predict, save
from .tagspace import Sentence, Triple, decode_tags, encode_tags, validate_order
from .training import train

__all__ = [
    "Model",
    "ModelConfig",
    "Sentence",
    "Triple",
    "decode_tags",
    "encode_tags",
    "forward",
    "load",
    "predict",
    "save",
    "train",
    "validate_order",
]
