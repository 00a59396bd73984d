"""Analytic gradients against finite differences and loop oracles."""

import numpy as np
import pytest

from rwprune.datasets import stage_rng
from rwprune.nn import (
    Conv2DSpec,
    DenseSpec,
    FlattenSpec,
    MaxPool2x2Spec,
    Network,
    ReLUSpec,
    softmax_cross_entropy,
)


def rel_err(a, b, floor=1e-6):
    return abs(a - b) / max(abs(a), abs(b), floor)


def fd_weight_grad(net, x, y, name, idx, h=1e-5):
    w = net.parametric[name].W
    old = w[idx]
    w[idx] = old + h
    lp, _ = net.forward_loss(x, y)
    w[idx] = old - h
    lm, _ = net.forward_loss(x, y)
    w[idx] = old
    return (lp - lm) / (2 * h)


def check_all_params(net, x, y, h=1e-5, tol=1e-4):
    net.forward_loss(x, y)
    grads = net.backward()
    worst = 0.0
    for name in net.parametric:
        analytic = grads[name][0]
        for idx in np.ndindex(*analytic.shape):
            fd = fd_weight_grad(net, x, y, name, idx, h)
            worst = max(worst, rel_err(analytic[idx], fd))
    assert worst < tol, f"worst relative error {worst}"


def test_uniform_logits_loss_is_log_n_classes():
    logits = np.zeros((6, 10))
    loss, _ = softmax_cross_entropy(logits, np.arange(6) % 10)
    assert np.isclose(loss, np.log(10.0), rtol=1e-12)


def test_loss_vanishes_with_growing_margin():
    labels = np.array([2, 2])
    losses = []
    for margin in (5.0, 20.0, 60.0):
        logits = np.zeros((2, 10))
        logits[:, 2] = margin
        loss, _ = softmax_cross_entropy(logits, labels)
        losses.append(loss)
    assert losses[0] > losses[1] > losses[2]
    assert losses[2] < 1e-20


def test_forward_matches_straight_line_reimplementation():
    rng = stage_rng(0, "fwd-oracle")
    net = Network.from_specs(
        [DenseSpec(12, 8), ReLUSpec(), DenseSpec(8, 5)], (12,), rng
    )
    x = rng.normal(size=(7, 12))
    y = rng.integers(0, 5, size=7)
    loss, logits = net.forward_loss(x, y)

    w1, b1 = net.parametric["dense1"].W, net.parametric["dense1"].b
    w2, b2 = net.parametric["dense2"].W, net.parametric["dense2"].b
    hidden = np.maximum(x @ w1.T + b1, 0.0)
    manual_logits = hidden @ w2.T + b2
    shifted = manual_logits - manual_logits.max(axis=1, keepdims=True)
    probs = np.exp(shifted) / np.exp(shifted).sum(axis=1, keepdims=True)
    manual_loss = -np.mean(np.log(probs[np.arange(7), y]))

    assert np.allclose(logits, manual_logits, rtol=0, atol=1e-12)
    assert abs(loss - manual_loss) < 1e-12


def test_dense_net_every_parameter_fd():
    rng = stage_rng(1, "dense-fd")
    net = Network.from_specs(
        [DenseSpec(30, 16), ReLUSpec(), DenseSpec(16, 10)], (30,), rng
    )
    x = rng.uniform(0.1, 1.0, size=(8, 30))
    y = rng.integers(0, 10, size=8)
    check_all_params(net, x, y)


def test_mlp_784_16_10_every_parameter_fd():
    rng = stage_rng(2, "mlp-fd")
    net = Network.from_specs(
        [DenseSpec(784, 16), ReLUSpec(), DenseSpec(16, 10)], (784,), rng
    )
    x = rng.uniform(0.0, 1.0, size=(4, 784))
    y = rng.integers(0, 10, size=4)
    check_all_params(net, x, y)


def test_conv_net_every_parameter_fd():
    rng = stage_rng(3, "conv-fd")
    net = Network.from_specs(
        [
            Conv2DSpec(3, 2, (3, 3), stride=1, padding=1),
            ReLUSpec(),
            MaxPool2x2Spec(),
            FlattenSpec(),
            DenseSpec(3 * 4 * 4, 6),
        ],
        (2, 8, 8),
        rng,
    )
    x = rng.uniform(0.05, 1.0, size=(5, 2, 8, 8))
    y = rng.integers(0, 6, size=5)
    check_all_params(net, x, y)


def test_strided_conv_gradients_fd():
    rng = stage_rng(4, "stride-fd")
    net = Network.from_specs(
        [Conv2DSpec(4, 1, (3, 3), stride=2, padding=0), FlattenSpec(), DenseSpec(4 * 3 * 3, 4)],
        (1, 7, 7),
        rng,
    )
    x = rng.uniform(0.0, 1.0, size=(3, 1, 7, 7))
    y = rng.integers(0, 4, size=3)
    check_all_params(net, x, y)


def _loop_conv_forward(x, w, b, stride, pad):
    n, cin, h, wd = x.shape
    a, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((n, a, oh, ow))
    for ni in range(n):
        for ai in range(a):
            for i in range(oh):
                for j in range(ow):
                    patch = xp[ni, :, i * stride : i * stride + kh, j * stride : j * stride + kw]
                    out[ni, ai, i, j] = np.sum(patch * w[ai]) + b[ai]
    return out


def test_conv_gradient_matches_loop_oracle():
    rng = stage_rng(5, "loop-oracle")
    net = Network.from_specs(
        [Conv2DSpec(1, 1, (3, 3), stride=1, padding=0), FlattenSpec(), DenseSpec(9, 3)],
        (1, 5, 5),
        rng,
    )
    conv = net.parametric["conv1"]
    x = rng.uniform(0.0, 1.0, size=(2, 1, 5, 5))
    y = rng.integers(0, 3, size=2)

    # forward agreement with the explicit loop implementation
    ours = conv.forward(x)
    loop = _loop_conv_forward(x, conv.W, conv.b, 1, 0)
    assert np.allclose(ours, loop, atol=1e-12)

    # weight gradient agreement with a loop-accumulated oracle
    loss, _ = net.forward_loss(x, y)
    grads = net.backward()
    upstream = np.ones_like(ours)
    conv.forward(x)
    conv.backward(upstream)
    oracle = np.zeros_like(conv.W)
    for ni in range(2):
        for i in range(3):
            for j in range(3):
                oracle[0, 0] += upstream[ni, 0, i, j] * x[ni, 0, i : i + 3, j : j + 3]
    assert np.allclose(conv.grad_W, oracle, atol=1e-10)
    assert grads["conv1"][0].shape == conv.W.shape


def test_zero_input_dense_relu_gives_zero_weight_gradient():
    rng = stage_rng(6, "zero-input")
    net = Network.from_specs([DenseSpec(5, 4), ReLUSpec(), DenseSpec(4, 3)], (5,), rng)
    x = np.zeros((6, 5))
    y = rng.integers(0, 3, size=6)
    net.forward_loss(x, y)
    grads = net.backward()
    assert np.all(grads["dense1"][0] == 0.0)


def test_maxpool_routes_gradient_to_argmax():
    rng = stage_rng(7, "pool")
    from rwprune.nn import MaxPool2x2

    pool = MaxPool2x2()
    x = rng.normal(size=(2, 3, 4, 4))
    out = pool.forward(x)
    grad = rng.normal(size=out.shape)
    dx = pool.backward(grad)
    # gradient mass is conserved and lands only on maxima
    assert np.isclose(dx.sum(), grad.sum(), rtol=1e-12)
    assert np.count_nonzero(dx) <= out.size


def test_pool_rejects_odd_spatial_dims():
    from rwprune.errors import ShapeError
    from rwprune.nn import MaxPool2x2

    with pytest.raises(ShapeError):
        MaxPool2x2().forward(np.zeros((1, 1, 5, 4)))


def test_network_construction_validates_shapes():
    from rwprune.errors import ConfigError

    with pytest.raises(ConfigError):
        Network([DenseSpec(10, 5), DenseSpec(6, 2)], (10,))
    with pytest.raises(ConfigError):
        Network([Conv2DSpec(2, 3)], (1, 8, 8))
    with pytest.raises(ConfigError):
        Network([MaxPool2x2Spec()], (1, 7, 7))


def test_forward_loss_rejects_shape_mismatch():
    from rwprune.errors import ShapeError

    rng = stage_rng(8, "mismatch")
    net = Network.from_specs([DenseSpec(5, 3)], (5,), rng)
    with pytest.raises(ShapeError):
        net.forward_loss(np.zeros((2, 6)), np.array([0, 1]))
