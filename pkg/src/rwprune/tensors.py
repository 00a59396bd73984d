"""Dense weight tensors and the group addressing used by structured sparsity.

Weights are plain float64 numpy arrays: 2-D (out, in) for dense layers and
4-D (filters A, channels B, kernel rows C, kernel cols D) for convolutions.
Sparsity masks are arrays of the same shape with entries in {0.0, 1.0}.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ShapeError


class GroupKind(Enum):
    """Addressing scheme for weight groups in a 4-D conv tensor."""

    FILTER = "filter"            # (a, :, :, :) one group per output filter
    SHAPE_POSITION = "shape"     # (:, b, c, d) one group per kernel position
    KERNEL = "kernel"            # (a, b, :, :) one group per 2-D kernel


def l1_norm(w: np.ndarray) -> float:
    return float(np.sum(np.abs(w)))


def frobenius_sq(w: np.ndarray) -> float:
    return float(np.sum(np.square(w)))


def l0_count(w: np.ndarray, tol: float = 0.0) -> int:
    """Number of entries with magnitude strictly above ``tol``."""
    return int(np.count_nonzero(np.abs(w) > tol))


def check_finite(w: np.ndarray, context: str = "tensor") -> None:
    if not np.all(np.isfinite(w)):
        raise ValueError(f"{context} contains non-finite entries")


@dataclass(frozen=True)
class GroupView:
    """One weight group: its kind, index tuple and the slice selecting it."""

    kind: GroupKind
    index: tuple[int, ...]
    slices: tuple

    def take(self, w: np.ndarray) -> np.ndarray:
        return w[self.slices]

    def flat_indices(self, shape: tuple[int, ...]) -> np.ndarray:
        grid = np.arange(int(np.prod(shape))).reshape(shape)
        return grid[self.slices].ravel()


def _conv_shape(w_or_shape) -> tuple[int, int, int, int]:
    shape = tuple(w_or_shape.shape) if hasattr(w_or_shape, "shape") else tuple(w_or_shape)
    if len(shape) != 4:
        raise ShapeError(f"group addressing requires a 4-D conv tensor, got shape {shape}")
    return shape  # type: ignore[return-value]


def group_slices(w_or_shape, kind: GroupKind) -> list[GroupView]:
    """Disjoint, exhaustive groups in lexicographic index order."""
    a_dim, b_dim, c_dim, d_dim = _conv_shape(w_or_shape)
    full = slice(None)
    if kind is GroupKind.FILTER:
        return [GroupView(kind, (a,), (a, full, full, full)) for a in range(a_dim)]
    if kind is GroupKind.SHAPE_POSITION:
        return [
            GroupView(kind, (b, c, d), (full, b, c, d))
            for b in range(b_dim)
            for c in range(c_dim)
            for d in range(d_dim)
        ]
    return [
        GroupView(kind, (a, b), (a, b, full, full))
        for a in range(a_dim)
        for b in range(b_dim)
    ]


def group_norms_sq(w: np.ndarray, kind: GroupKind) -> np.ndarray:
    """Squared Frobenius norm of every group, indexed like the group tuples."""
    _conv_shape(w)
    sq = np.square(w)
    if kind is GroupKind.FILTER:
        return sq.sum(axis=(1, 2, 3))
    if kind is GroupKind.SHAPE_POSITION:
        return sq.sum(axis=0)
    return sq.sum(axis=(2, 3))


def broadcast_group_values(values: np.ndarray, kind: GroupKind, shape) -> np.ndarray:
    """Expand one scalar per group to a full tensor of the given shape."""
    a_dim, b_dim, c_dim, d_dim = _conv_shape(shape)
    if kind is GroupKind.FILTER:
        if values.shape != (a_dim,):
            raise ShapeError(f"expected {a_dim} filter values, got {values.shape}")
        view = values[:, None, None, None]
    elif kind is GroupKind.SHAPE_POSITION:
        if values.shape != (b_dim, c_dim, d_dim):
            raise ShapeError(f"expected shape-position values {(b_dim, c_dim, d_dim)}, got {values.shape}")
        view = values[None, :, :, :]
    else:
        if values.shape != (a_dim, b_dim):
            raise ShapeError(f"expected {(a_dim, b_dim)} kernel values, got {values.shape}")
        view = values[:, :, None, None]
    return np.broadcast_to(view, (a_dim, b_dim, c_dim, d_dim))


def full_mask(w: np.ndarray) -> np.ndarray:
    return np.ones_like(w)


def validate_mask(mask: np.ndarray, w: np.ndarray | None = None) -> None:
    if w is not None and mask.shape != w.shape:
        raise ShapeError(f"mask shape {mask.shape} does not match weights {w.shape}")
    if not np.all((mask == 0.0) | (mask == 1.0)):
        raise ValueError("mask entries must be exactly 0 or 1")
    if w is not None and np.any(w[mask == 0.0] != 0.0):
        raise ValueError("masked weight entries must be exactly zero")


def merge_masks(old: np.ndarray | None, new: np.ndarray) -> np.ndarray:
    """AND of two masks; zeros only ever accumulate."""
    return new.copy() if old is None else old * new


def mask_is_subset(new: np.ndarray, old: np.ndarray | None) -> bool:
    """True when every zero of ``old`` is still zero in ``new``."""
    if old is None:
        return True
    return bool(np.all(new <= old))
