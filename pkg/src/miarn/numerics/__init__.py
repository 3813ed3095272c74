"""Minimal dense-tensor engine with reverse-mode differentiation."""

from .gradcheck import grad_check
from .rng import substream
from .tensor import DEFAULT_DTYPE, Graph, ShapeError, Tensor, backward, current_graph
from . import kernels, ops

__all__ = [
    "DEFAULT_DTYPE",
    "Graph",
    "ShapeError",
    "Tensor",
    "backward",
    "current_graph",
    "grad_check",
    "kernels",
    "ops",
    "substream",
]
