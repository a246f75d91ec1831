"""Replacing language model (RLM) for unsupervised text style transfer, in numpy."""

from .decoder import DecodeFlags, transfer
from .model import RLM, ModelConfig, Vocab

__all__ = ["RLM", "ModelConfig", "Vocab", "DecodeFlags", "transfer"]
__version__ = "0.1.0"
