"""Single-writer training loop with pluggable extra weight gradients.

``grad_extras`` is how regularizers and ADMM proximal terms attach to the
loop: a callable evaluated once per batch returning extra dW contributions
by layer name. Extras are added before gradient masking so masked positions
stay frozen no matter what the extras would contribute.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .optim import OptimizerConfig, OptimizerState, apply_gradient_mask, optimizer_step

GradExtras = Callable[[object], dict[str, np.ndarray]]


def dataset_loss(net, data, batch_size: int = 512) -> float:
    """Exact mean cross-entropy over the whole dataset."""
    n = len(data.labels)
    if n == 0:
        raise ValueError("cannot compute loss of an empty dataset")
    total = 0.0
    for start in range(0, n, batch_size):
        x = data.inputs[start : start + batch_size]
        y = data.labels[start : start + batch_size]
        loss, _ = net.forward_loss(x, y)
        total += loss * len(y)
    return total / n


def train_epochs(
    net,
    data,
    epochs: int,
    optimizer: OptimizerConfig,
    rng: np.random.Generator,
    *,
    batch_size: int = 128,
    grad_extras: GradExtras | None = None,
    frozen: frozenset[str] = frozenset(),
    epoch_callback: Callable[[object, int], None] | None = None,
) -> list[float]:
    """Train in place for ``epochs`` epochs; returns mean batch loss per epoch.

    Batch order comes only from ``rng``, so identical generators reproduce
    identical trajectories. Moment buffers start fresh on every call.
    """
    state = OptimizerState(optimizer, net)
    n = len(data.labels)
    history = []
    for epoch in range(epochs):
        perm = rng.permutation(n)
        epoch_loss = 0.0
        batches = 0
        for start in range(0, n, batch_size):
            idx = perm[start : start + batch_size]
            loss, _ = net.forward_loss(data.inputs[idx], data.labels[idx])
            grads = net.backward()
            if grad_extras is not None:
                for name, extra in grad_extras(net).items():
                    dw, db = grads[name]
                    grads[name] = (dw + extra, db)
            if net.masks:
                grads = apply_gradient_mask(grads, net.masks)
            optimizer_step(net, grads, state, frozen=frozen)
            epoch_loss += loss
            batches += 1
        history.append(epoch_loss / max(batches, 1))
        if epoch_callback is not None:
            epoch_callback(net, epoch)
    return history
