"""Optimizers, gradient masking, evaluation and training-loop determinism."""

import numpy as np
import pytest

from rwprune.datasets import Dataset, stage_rng
from rwprune.nn import (
    SGD,
    Adam,
    DenseSpec,
    Network,
    OptimizerState,
    ReLUSpec,
    apply_gradient_mask,
    dataset_loss,
    optimizer_step,
    train_epochs,
)


def tiny_net(seed=0, in_dim=6, hidden=5, out=3):
    rng = stage_rng(seed, "tiny")
    return Network.from_specs(
        [DenseSpec(in_dim, hidden), ReLUSpec(), DenseSpec(hidden, out)], (in_dim,), rng
    )


def tiny_data(seed=0, n=40, in_dim=6, classes=3):
    rng = stage_rng(seed, "tiny-data")
    return Dataset(
        rng.uniform(0, 1, size=(n, in_dim)),
        rng.integers(0, classes, size=n).astype(np.int64),
        "train",
        n_classes=classes,
    )


def test_sgd_definition_single_step():
    net = tiny_net()
    layer = net.parametric["dense1"]
    layer.W[:] = 1.0
    grads = {name: (np.full_like(l.W, 0.5), np.zeros_like(l.b)) for name, l in net.parametric.items()}
    state = OptimizerState(SGD(lr=0.1, momentum=0.0), net)
    optimizer_step(net, grads, state)
    assert np.allclose(layer.W, 0.95, rtol=0, atol=1e-15)


def test_adam_first_step_magnitude_is_lr():
    net = tiny_net()
    layer = net.parametric["dense1"]
    before = layer.W.copy()
    g = np.full_like(layer.W, 0.37)
    grads = {
        name: (g if name == "dense1" else np.zeros_like(l.W), np.zeros_like(l.b))
        for name, l in net.parametric.items()
    }
    state = OptimizerState(Adam(lr=1e-3), net)
    optimizer_step(net, grads, state)
    delta = before - layer.W
    assert np.allclose(delta, 1e-3, rtol=1e-4)


def test_apply_gradient_mask_examples():
    grads = {"dense1": (np.array([1.0, 2.0, 3.0]), np.array([1.0]))}
    out = apply_gradient_mask(grads, {"dense1": np.array([1.0, 0.0, 1.0])})
    assert np.array_equal(out["dense1"][0], [1.0, 0.0, 3.0])
    assert np.array_equal(out["dense1"][1], [1.0])  # biases untouched

    identity = apply_gradient_mask(grads, {"dense1": np.ones(3)})
    assert np.array_equal(identity["dense1"][0], grads["dense1"][0])

    zero = apply_gradient_mask(grads, {"dense1": np.zeros(3)})
    assert np.all(zero["dense1"][0] == 0.0)


def test_mask_shape_mismatch_raises():
    from rwprune.errors import ShapeError

    with pytest.raises(ShapeError):
        apply_gradient_mask(
            {"dense1": (np.ones(3), np.ones(1))}, {"dense1": np.ones(4)}
        )


def test_masked_entry_stays_zero_through_100_adam_steps():
    net = tiny_net()
    data = tiny_data()
    layer = net.parametric["dense1"]
    mask = np.ones_like(layer.W)
    mask[0, 0] = 0.0
    layer.W[0, 0] = 0.0
    net.set_mask("dense1", mask)
    rng = stage_rng(1, "adam-mask")
    train_epochs(net, data, 100, Adam(lr=1e-2), rng, batch_size=16)
    assert layer.W[0, 0] == 0.0
    assert np.any(layer.W != 0.0)


def test_all_zero_mask_freezes_weights_under_training():
    net = tiny_net()
    data = tiny_data()
    for name, layer in net.parametric.items():
        layer.W[:] = 0.0
        net.set_mask(name, np.zeros_like(layer.W))
    rng = stage_rng(2, "frozen")
    train_epochs(net, data, 5, SGD(lr=0.1), rng, batch_size=8)
    for layer in net.parametric.values():
        assert np.all(layer.W == 0.0)


def test_constant_output_net_scores_chance_on_balanced_data():
    net = tiny_net(in_dim=4, hidden=4, out=10)
    for layer in net.parametric.values():
        layer.W[:] = 0.0
        layer.b[:] = 0.0
    rng = stage_rng(3, "balanced")
    labels = np.repeat(np.arange(10), 7)
    data = Dataset(rng.uniform(0, 1, size=(70, 4)), labels, "test", n_classes=10)
    assert net.evaluate(data) == 0.1


def test_memorized_single_sample_scores_one():
    net = tiny_net()
    data = tiny_data(n=1)
    rng = stage_rng(4, "memorize")
    train_epochs(net, data, 60, SGD(lr=0.2), rng, batch_size=1)
    assert net.evaluate(data) == 1.0


def test_evaluate_is_bitwise_deterministic():
    net = tiny_net()
    data = tiny_data(n=100)
    assert net.evaluate(data) == net.evaluate(data)


def test_evaluate_rejects_empty_dataset():
    net = tiny_net()
    empty = Dataset(np.zeros((0, 6)), np.zeros(0, dtype=np.int64), "test")
    with pytest.raises(ValueError):
        net.evaluate(empty)


def test_training_is_deterministic_under_fixed_seed():
    results = []
    for _ in range(2):
        net = tiny_net(seed=9)
        data = tiny_data(seed=9, n=64)
        train_epochs(net, data, 6, SGD(lr=0.05, momentum=0.9), stage_rng(9, "det"), batch_size=16)
        results.append({n: l.W.copy() for n, l in net.parametric.items()})
    for name in results[0]:
        assert np.array_equal(results[0][name], results[1][name])


def test_frozen_layers_do_not_move():
    net = tiny_net()
    data = tiny_data()
    before = net.parametric["dense1"].W.copy()
    train_epochs(
        net, data, 4, SGD(lr=0.1), stage_rng(5, "freeze"), batch_size=8,
        frozen=frozenset({"dense1"}),
    )
    assert np.array_equal(net.parametric["dense1"].W, before)
    assert not np.array_equal(
        net.parametric["dense2"].W, tiny_net().parametric["dense2"].W
    )


def test_dataset_loss_matches_forward_loss_on_single_batch():
    net = tiny_net()
    data = tiny_data(n=15)
    loss, _ = net.forward_loss(data.inputs, data.labels)
    assert np.isclose(dataset_loss(net, data, batch_size=64), loss, rtol=1e-12)


def test_grad_extras_are_masked_too():
    # an extra gradient at a masked position must not move the weight
    net = tiny_net()
    data = tiny_data()
    layer = net.parametric["dense1"]
    mask = np.ones_like(layer.W)
    mask[1, 1] = 0.0
    layer.W[1, 1] = 0.0
    net.set_mask("dense1", mask)

    def extras(n):
        return {"dense1": np.full_like(n.parametric["dense1"].W, 7.0)}

    train_epochs(net, data, 3, SGD(lr=0.1), stage_rng(6, "extras"), grad_extras=extras)
    assert layer.W[1, 1] == 0.0
