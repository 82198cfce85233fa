"""Multimodal hate-content classifier with a self-contained autodiff engine."""

from .tensor import GradGraph, Tensor, backward, grad_check

__all__ = ["GradGraph", "Tensor", "backward", "grad_check"]

__version__ = "0.1.0"
