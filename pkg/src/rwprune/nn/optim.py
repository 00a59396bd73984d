"""SGD and Adam with gradient masking and post-step re-zeroing.

Masked weight positions receive zero gradient and are additionally forced
back to exactly 0.0 after every update, so momentum and Adam moment buffers
cannot reintroduce nonzeros at pruned positions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ShapeError


@dataclass(frozen=True)
class SGD:
    lr: float = 0.01
    momentum: float = 0.9


@dataclass(frozen=True)
class Adam:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


OptimizerConfig = SGD | Adam


class OptimizerState:
    """Per-parameter moment buffers plus the shared step counter."""

    def __init__(self, config: OptimizerConfig, net):
        self.config = config
        self.t = 0
        self.slots: dict[str, dict[str, np.ndarray]] = {}
        for name, layer in net.parametric.items():
            if isinstance(config, SGD):
                self.slots[name] = {"vW": np.zeros_like(layer.W), "vb": np.zeros_like(layer.b)}
            else:
                self.slots[name] = {
                    "mW": np.zeros_like(layer.W),
                    "vW": np.zeros_like(layer.W),
                    "mb": np.zeros_like(layer.b),
                    "vb": np.zeros_like(layer.b),
                }


def apply_gradient_mask(
    grads: dict[str, tuple[np.ndarray, np.ndarray]], masks: dict[str, np.ndarray]
) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Zero weight gradients at masked positions; biases pass through."""
    out = {}
    for name, (dw, db) in grads.items():
        mask = masks.get(name)
        if mask is not None:
            if mask.shape != dw.shape:
                raise ShapeError(f"mask shape {mask.shape} does not match gradient {dw.shape}")
            dw = dw * mask
        out[name] = (dw, db)
    return out


def _sgd_update(param, grad, buf, lr, momentum):
    buf *= momentum
    buf += grad
    param -= lr * buf


def _adam_update(param, grad, m, v, cfg: Adam, t: int):
    m *= cfg.beta1
    m += (1.0 - cfg.beta1) * grad
    v *= cfg.beta2
    v += (1.0 - cfg.beta2) * np.square(grad)
    m_hat = m / (1.0 - cfg.beta1**t)
    v_hat = v / (1.0 - cfg.beta2**t)
    param -= cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps)


def optimizer_step(
    net,
    grads: dict[str, tuple[np.ndarray, np.ndarray]],
    state: OptimizerState,
    frozen: frozenset[str] = frozenset(),
) -> None:
    """One in-place update; masked weights are re-zeroed afterwards."""
    state.t += 1
    cfg = state.config
    for name, layer in net.parametric.items():
        if name in frozen or name not in grads:
            continue
        dw, db = grads[name]
        if dw.shape != layer.W.shape:
            raise ShapeError(f"gradient shape {dw.shape} does not match weights {layer.W.shape}")
        slot = state.slots[name]
        if isinstance(cfg, SGD):
            _sgd_update(layer.W, dw, slot["vW"], cfg.lr, cfg.momentum)
            _sgd_update(layer.b, db, slot["vb"], cfg.lr, cfg.momentum)
        else:
            _adam_update(layer.W, dw, slot["mW"], slot["vW"], cfg, state.t)
            _adam_update(layer.b, db, slot["mb"], slot["vb"], cfg, state.t)
        mask = net.masks.get(name)
        if mask is not None:
            layer.W *= mask
