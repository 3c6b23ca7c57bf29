"""Spiking-network training with blurred feature distillation on a small
numpy reverse-mode autodiff engine."""

from .tensor import Tensor, backward, no_grad
from .kernels import BACKEND_NAME as KERNEL_BACKEND

__version__ = "0.1.0"

__all__ = ["Tensor", "backward", "no_grad", "KERNEL_BACKEND", "__version__"]
