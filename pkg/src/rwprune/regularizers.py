"""Reweighted sparsity regularizers.

Four kinds are supported. The non-structured kind carries one penalty per
weight and contributes ``lam * sum(P * |W|)``. The three structured kinds
carry one penalty per group g and contribute ``lam * sum_g P_g * ||W_g||_F^2``
over filters (a,:,:,:), kernel positions (:,b,c,d) or kernels (a,b,:,:).

After each inner solve the penalties are refreshed from the current weights:

    element:  P = 1 / (|w| + eps)
    group:    P_g = 1 / (||W_g||_F^2 + eps)

so magnitudes that survived the previous round are penalized less, pushing
the regularizer toward a count of nonzero weights (or groups). The penalty
parameter lam is chosen so the initial regularization value lands between
4x and 8x the pretrained training loss.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ShapeError
from .tensors import GroupKind, broadcast_group_values, check_finite, group_norms_sq

DEFAULT_EPS = 1e-3

# Target band for the initial regularization value, as a multiple of the
# pretrained training loss. lam is reported with the full admissible interval.
BAND_LO = 4.0
BAND_HI = 8.0


class RegKind(Enum):
    NONSTRUCTURED = "nonstructured"
    FILTER = "filter"
    SHAPE = "shape"
    KERNEL = "kernel"

    @property
    def group_kind(self) -> GroupKind | None:
        return {
            RegKind.NONSTRUCTURED: None,
            RegKind.FILTER: GroupKind.FILTER,
            RegKind.SHAPE: GroupKind.SHAPE_POSITION,
            RegKind.KERNEL: GroupKind.KERNEL,
        }[self]

    @property
    def structured(self) -> bool:
        return self is not RegKind.NONSTRUCTURED


@dataclass(frozen=True)
class Penalties:
    """Per-element or per-group penalty coefficients at reweight iteration l."""

    kind: RegKind
    values: np.ndarray
    iteration: int = 1


def _check_eps(eps: float) -> None:
    if not eps > 0.0:
        raise ValueError(f"eps must be positive, got {eps}")


def update_penalties(
    kind: RegKind, weights: np.ndarray, eps: float = DEFAULT_EPS, *, iteration: int = 1
) -> Penalties:
    """Refresh penalties from the current weights.

    Every penalty lies in (0, 1/eps]; the upper bound is attained exactly at
    zero weights (or zero groups).
    """
    _check_eps(eps)
    check_finite(weights, "weights")
    gk = kind.group_kind
    if gk is None:
        values = 1.0 / (np.abs(weights) + eps)
    else:
        values = 1.0 / (group_norms_sq(weights, gk) + eps)
    return Penalties(kind, values, iteration)


def init_penalties(kind: RegKind, pretrained: np.ndarray, eps: float = DEFAULT_EPS) -> Penalties:
    """Penalties for the first reweighted iteration, from the pretrained weights."""
    return update_penalties(kind, pretrained, eps, iteration=1)


def unit_penalties(kind: RegKind, weights: np.ndarray) -> Penalties:
    """All-ones penalties: plain l1 / group-lasso, never reweighted."""
    gk = kind.group_kind
    if gk is None:
        values = np.ones_like(weights)
    else:
        values = np.ones_like(group_norms_sq(weights, gk))
    return Penalties(kind, values, iteration=1)


def _check_compatible(p: Penalties, weights: np.ndarray) -> None:
    gk = p.kind.group_kind
    if gk is None:
        if p.values.shape != weights.shape:
            raise ShapeError(
                f"element penalties {p.values.shape} do not match weights {weights.shape}"
            )
    else:
        expected = group_norms_sq(weights, gk).shape
        if p.values.shape != expected:
            raise ShapeError(
                f"group penalties {p.values.shape} do not match group structure {expected}"
            )


def reg_value(p: Penalties, weights: np.ndarray, lam: float) -> float:
    _check_compatible(p, weights)
    gk = p.kind.group_kind
    if gk is None:
        return float(lam * np.sum(p.values * np.abs(weights)))
    return float(lam * np.sum(p.values * group_norms_sq(weights, gk)))


def reg_gradient(p: Penalties, weights: np.ndarray, lam: float) -> np.ndarray:
    """Gradient of ``reg_value`` in the weights with penalties held fixed.

    The l1 subgradient at exactly zero is taken to be zero, so exact zeros
    are stationary under the regularizer alone.
    """
    _check_compatible(p, weights)
    gk = p.kind.group_kind
    if gk is None:
        return lam * p.values * np.sign(weights)
    return 2.0 * lam * broadcast_group_values(p.values, gk, weights.shape) * weights


@dataclass(frozen=True)
class LambdaChoice:
    value: float
    lower: float
    upper: float


def tune_lambda(pretrained_loss: float, reg_at_unit_lambda: float) -> LambdaChoice:
    """Pick lam so the initial regularization value is 6x the pretrained loss.

    The admissible interval [4l/R1, 8l/R1] is returned alongside the midpoint.
    """
    if not pretrained_loss > 0.0:
        raise ValueError(f"pretrained loss must be positive, got {pretrained_loss}")
    if not reg_at_unit_lambda > 0.0:
        raise ValueError(
            "regularization value at unit lambda must be positive "
            f"(all-zero model?), got {reg_at_unit_lambda}"
        )
    mid = (BAND_LO + BAND_HI) / 2.0
    return LambdaChoice(
        value=mid * pretrained_loss / reg_at_unit_lambda,
        lower=BAND_LO * pretrained_loss / reg_at_unit_lambda,
        upper=BAND_HI * pretrained_loss / reg_at_unit_lambda,
    )
