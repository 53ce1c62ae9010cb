"""Selective encryption of CNN weights with hierarchical access permissions."""

from .errors import SelencError
from .nn import Dataset, Layer, Model, TrainConfig, evaluate, forward, train

__version__ = "0.1.0"

__all__ = ["Dataset", "Layer", "Model", "SelencError", "TrainConfig", "evaluate", "forward", "train"]
