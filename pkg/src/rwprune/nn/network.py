"""Network assembly, loss, analytic backward pass and evaluation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, ShapeError
from ..tensors import validate_mask
from .layers import Conv2D, Dense, Flatten, Layer, MaxPool2x2, ReLU


@dataclass(frozen=True)
class DenseSpec:
    in_features: int
    out_features: int


@dataclass(frozen=True)
class Conv2DSpec:
    filters: int
    in_channels: int
    kernel: tuple[int, int] = (3, 3)
    stride: int = 1
    padding: int = 0


@dataclass(frozen=True)
class ReLUSpec:
    pass


@dataclass(frozen=True)
class MaxPool2x2Spec:
    pass


@dataclass(frozen=True)
class FlattenSpec:
    pass


LayerSpec = DenseSpec | Conv2DSpec | ReLUSpec | MaxPool2x2Spec | FlattenSpec


def _propagate(spec: LayerSpec, shape: tuple[int, ...]) -> tuple[int, ...]:
    """Shape of one sample after the layer; raises on incompatibility."""
    if isinstance(spec, DenseSpec):
        if len(shape) != 1 or shape[0] != spec.in_features:
            raise ConfigError(f"dense layer expects ({spec.in_features},), got {shape}")
        return (spec.out_features,)
    if isinstance(spec, Conv2DSpec):
        if len(shape) != 3 or shape[0] != spec.in_channels:
            raise ConfigError(f"conv layer expects ({spec.in_channels}, H, W), got {shape}")
        layer = Conv2D(spec.filters, spec.in_channels, spec.kernel, spec.stride, spec.padding)
        oh, ow = layer.output_hw(shape[1], shape[2])
        return (spec.filters, oh, ow)
    if isinstance(spec, MaxPool2x2Spec):
        if len(shape) != 3:
            raise ConfigError(f"max pool expects (C, H, W), got {shape}")
        if shape[1] % 2 or shape[2] % 2:
            raise ConfigError(f"max pool needs even spatial dims, got {shape}")
        return (shape[0], shape[1] // 2, shape[2] // 2)
    if isinstance(spec, FlattenSpec):
        return (int(np.prod(shape)),)
    return shape  # ReLU


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over the batch and its gradient in the logits."""
    n = logits.shape[0]
    if labels.shape != (n,):
        raise ShapeError(f"labels shape {labels.shape} does not match batch {n}")
    if labels.min() < 0 or labels.max() >= logits.shape[1]:
        raise ValueError("labels out of class range")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_z
    loss = -float(log_probs[np.arange(n), labels].mean())
    dlogits = np.exp(log_probs)
    dlogits[np.arange(n), labels] -= 1.0
    return loss, dlogits / n


class Network:
    """Ordered layers plus named weight tensors, biases and optional masks.

    Masks pair one-to-one with weight tensors; entries at mask zero are kept
    at exactly 0.0 by gradient masking plus post-step re-zeroing.
    """

    def __init__(self, specs: list[LayerSpec], input_shape: tuple[int, ...]):
        self.specs = list(specs)
        self.input_shape = tuple(input_shape)
        self.layers: list[Layer] = []
        self.masks: dict[str, np.ndarray] = {}
        counters = {"dense": 0, "conv": 0}
        shape = self.input_shape
        for spec in specs:
            shape = _propagate(spec, shape)
            if isinstance(spec, DenseSpec):
                counters["dense"] += 1
                layer: Layer = Dense(spec.in_features, spec.out_features)
                layer.name = f"dense{counters['dense']}"
            elif isinstance(spec, Conv2DSpec):
                counters["conv"] += 1
                layer = Conv2D(spec.filters, spec.in_channels, spec.kernel, spec.stride, spec.padding)
                layer.name = f"conv{counters['conv']}"
            elif isinstance(spec, ReLUSpec):
                layer = ReLU()
            elif isinstance(spec, MaxPool2x2Spec):
                layer = MaxPool2x2()
            else:
                layer = Flatten()
            self.layers.append(layer)
        self.output_shape = shape

    @classmethod
    def from_specs(
        cls, specs: list[LayerSpec], input_shape: tuple[int, ...], rng: np.random.Generator
    ) -> "Network":
        net = cls(specs, input_shape)
        for layer in net.layers:
            layer.init_params(rng)
        return net

    # -- parameter access -------------------------------------------------

    @property
    def parametric(self) -> dict[str, Layer]:
        return {layer.name: layer for layer in self.layers if layer.has_params}

    def weight(self, name: str) -> np.ndarray:
        return self.parametric[name].W

    def num_weights(self) -> int:
        return sum(layer.W.size for layer in self.parametric.values())

    def conv_layer_names(self) -> list[str]:
        return [name for name, layer in self.parametric.items() if layer.W.ndim == 4]

    def set_mask(self, name: str, mask: np.ndarray) -> None:
        layer = self.parametric[name]
        validate_mask(mask, layer.W)
        self.masks[name] = mask

    def apply_masks(self) -> None:
        for name, mask in self.masks.items():
            self.parametric[name].W *= mask

    # -- forward / backward ------------------------------------------------

    def predict(self, x: np.ndarray) -> np.ndarray:
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def forward_loss(self, x: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
        logits = self.predict(x)
        loss, dlogits = softmax_cross_entropy(logits, labels)
        self._dlogits = dlogits
        return loss, logits

    def backward(self) -> dict[str, tuple[np.ndarray, np.ndarray]]:
        """Gradients of the mean batch loss; call after ``forward_loss``."""
        grad = self._dlogits
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return {
            name: (layer.grad_W, layer.grad_b) for name, layer in self.parametric.items()
        }

    # -- evaluation ---------------------------------------------------------

    def evaluate(self, dataset, batch_size: int = 512) -> float:
        """Argmax accuracy over the dataset; deterministic."""
        n = len(dataset.labels)
        if n == 0:
            raise ValueError("cannot evaluate on an empty dataset")
        correct = 0
        for start in range(0, n, batch_size):
            x = dataset.inputs[start : start + batch_size]
            y = dataset.labels[start : start + batch_size]
            pred = self.predict(x).argmax(axis=1)
            correct += int((pred == y).sum())
        return correct / n

    def copy(self) -> "Network":
        out = Network(self.specs, self.input_shape)
        for mine, theirs in zip(out.layers, self.layers):
            if theirs.has_params:
                mine.W = theirs.W.copy()
                mine.b = theirs.b.copy()
        out.masks = {name: mask.copy() for name, mask in self.masks.items()}
        return out
