"""Minimal reverse-mode autodiff over dense arrays and sparse voxel tensors."""

from . import ops
from .gradcheck import check_gradients, numeric_grad, relative_error
from .sparse import CENTER_TAP, KERNEL_OFFSETS, CoordinateMismatch, CoordSet, SparseTensor, sconv
from .tensor import Tensor, as_tensor, backward, grad, is_grad_enabled, no_grad

__all__ = [
    "ops",
    "Tensor",
    "as_tensor",
    "backward",
    "grad",
    "no_grad",
    "is_grad_enabled",
    "CoordSet",
    "SparseTensor",
    "CoordinateMismatch",
    "sconv",
    "KERNEL_OFFSETS",
    "CENTER_TAP",
    "check_gradients",
    "numeric_grad",
    "relative_error",
]
