"""Toy-scale differentiable reference of the recursive-supervision saliency network."""

from .model import NetMode, Output, ToyConfig, ToyNet
from .tensor import Tensor

__all__ = ["NetMode", "Output", "ToyConfig", "ToyNet", "Tensor"]
