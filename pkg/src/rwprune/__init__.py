"""Reweighted-regularization weight pruning and ADMM compression toolkit."""

from .regularizers import (
    LambdaChoice,
    Penalties,
    RegKind,
    init_penalties,
    reg_gradient,
    reg_value,
    tune_lambda,
    update_penalties,
)
from .tensors import GroupKind, GroupView, frobenius_sq, group_slices, l0_count, l1_norm

__version__ = "0.1.0"

__all__ = [
    "GroupKind",
    "GroupView",
    "LambdaChoice",
    "Penalties",
    "RegKind",
    "frobenius_sq",
    "group_slices",
    "init_penalties",
    "l0_count",
    "l1_norm",
    "reg_gradient",
    "reg_value",
    "tune_lambda",
    "update_penalties",
]
