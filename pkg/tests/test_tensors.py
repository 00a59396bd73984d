import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from rwprune.errors import ShapeError
from rwprune.tensors import (
    GroupKind,
    broadcast_group_values,
    frobenius_sq,
    group_norms_sq,
    group_slices,
    l0_count,
    l1_norm,
    mask_is_subset,
    merge_masks,
    validate_mask,
)


def test_l1_norm_definition():
    assert l1_norm(np.array([1.0, -2.0, 0.0])) == 3.0


def test_frobenius_sq_definition():
    assert frobenius_sq(np.array([1.0, -2.0, 0.0])) == 5.0


def test_l0_count_with_tolerance():
    assert l0_count(np.array([1e-5, 0.3, 0.0]), tol=1e-4) == 1


def test_norms_of_empty_tensor_are_zero():
    empty = np.zeros((0,))
    assert l1_norm(empty) == 0.0
    assert frobenius_sq(empty) == 0.0
    assert l0_count(empty) == 0


@pytest.mark.parametrize(
    "kind,count,size",
    [
        (GroupKind.FILTER, 2, 27),
        (GroupKind.KERNEL, 6, 9),
        (GroupKind.SHAPE_POSITION, 27, 2),
    ],
)
def test_group_partition_arithmetic(kind, count, size):
    shape = (2, 3, 3, 3)
    views = group_slices(shape, kind)
    assert len(views) == count
    all_indices = []
    for view in views:
        idx = view.flat_indices(shape)
        assert idx.size == size
        all_indices.append(idx)
    flat = np.concatenate(all_indices)
    # disjoint and exhaustive
    assert len(np.unique(flat)) == flat.size == int(np.prod(shape))


def test_group_slices_rejects_non_4d():
    with pytest.raises(ShapeError):
        group_slices((3, 4), GroupKind.FILTER)


def test_group_enumeration_is_stable():
    a = [v.index for v in group_slices((2, 3, 4, 5), GroupKind.SHAPE_POSITION)]
    b = [v.index for v in group_slices((2, 3, 4, 5), GroupKind.SHAPE_POSITION)]
    assert a == b
    assert a == sorted(a)


@settings(max_examples=40)
@given(
    w=arrays(
        np.float64,
        st.tuples(
            st.integers(1, 3), st.integers(1, 3), st.integers(1, 4), st.integers(1, 4)
        ),
        elements=st.floats(-5, 5, allow_nan=False),
    ),
    kind=st.sampled_from(list(GroupKind)),
)
def test_group_norms_partition_total_energy(w, kind):
    total = frobenius_sq(w)
    parts = group_norms_sq(w, kind)
    assert np.isclose(parts.sum(), total, rtol=1e-12, atol=1e-12)
    # vectorized group norms agree with the explicit slice views
    for view in group_slices(w.shape, kind):
        assert np.isclose(parts[view.index], frobenius_sq(view.take(w)), rtol=1e-12)


def test_broadcast_group_values_round_trip():
    w = np.arange(24, dtype=float).reshape(2, 2, 2, 3)
    for kind in GroupKind:
        norms = group_norms_sq(w, kind)
        full = broadcast_group_values(norms, kind, w.shape)
        assert full.shape == w.shape
        for view in group_slices(w.shape, kind):
            block = full[view.slices]
            assert np.all(block == norms[view.index])


def test_broadcast_group_values_shape_mismatch():
    with pytest.raises(ShapeError):
        broadcast_group_values(np.ones(3), GroupKind.FILTER, (2, 3, 3, 3))


def test_validate_mask_rejects_nonbinary_and_violations():
    w = np.array([0.0, 1.0])
    validate_mask(np.array([0.0, 1.0]), w)
    with pytest.raises(ValueError):
        validate_mask(np.array([0.5, 1.0]), w)
    with pytest.raises(ValueError):
        validate_mask(np.array([0.0, 0.0]), w)  # masked position is nonzero
    with pytest.raises(ShapeError):
        validate_mask(np.ones(3), w)


def test_merge_masks_is_monotone():
    old = np.array([1.0, 0.0, 1.0, 1.0])
    new = np.array([1.0, 1.0, 0.0, 1.0])
    merged = merge_masks(old, new)
    assert np.array_equal(merged, [1.0, 0.0, 0.0, 1.0])
    assert mask_is_subset(merged, old)
    assert not mask_is_subset(old, merged)
    assert mask_is_subset(merge_masks(None, new), None)
