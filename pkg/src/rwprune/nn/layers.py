"""Feed-forward layers with exact analytic gradients, float64 throughout.

Each layer caches what it needs on forward; ``backward`` consumes the
upstream gradient, stashes parameter gradients on the layer and returns the
gradient with respect to its input.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ShapeError


class Layer:
    has_params = False
    name = ""

    def init_params(self, rng: np.random.Generator) -> None:
        pass

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def copy(self) -> "Layer":
        raise NotImplementedError


class Dense(Layer):
    """Fully connected layer; weights stored as (out_features, in_features)."""

    has_params = True

    def __init__(self, in_features: int, out_features: int):
        self.in_features = in_features
        self.out_features = out_features
        self.W = np.zeros((out_features, in_features))
        self.b = np.zeros(out_features)
        self.grad_W = None
        self.grad_b = None
        self._x = None

    def init_params(self, rng: np.random.Generator) -> None:
        scale = np.sqrt(2.0 / self.in_features)
        self.W = rng.standard_normal((self.out_features, self.in_features)) * scale
        self.b = np.zeros(self.out_features)

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ShapeError(
                f"{self.name or 'dense'} expected (N, {self.in_features}) input, got {x.shape}"
            )
        self._x = x
        return x @ self.W.T + self.b

    def backward(self, grad: np.ndarray) -> np.ndarray:
        self.grad_W = grad.T @ self._x
        self.grad_b = grad.sum(axis=0)
        return grad @ self.W

    def copy(self) -> "Dense":
        out = Dense(self.in_features, self.out_features)
        out.W = self.W.copy()
        out.b = self.b.copy()
        out.name = self.name
        return out


class Conv2D(Layer):
    """2-D convolution with zero padding; weights stored as (A, B, C, D)."""

    has_params = True

    def __init__(
        self,
        filters: int,
        in_channels: int,
        kernel: tuple[int, int] = (3, 3),
        stride: int = 1,
        padding: int = 0,
    ):
        if stride < 1 or padding < 0:
            raise ShapeError(f"invalid conv stride/padding {stride}/{padding}")
        self.filters = filters
        self.in_channels = in_channels
        self.kernel = tuple(kernel)
        self.stride = stride
        self.padding = padding
        self.W = np.zeros((filters, in_channels, *self.kernel))
        self.b = np.zeros(filters)
        self.grad_W = None
        self.grad_b = None
        self._cols = None
        self._in_shape = None

    def init_params(self, rng: np.random.Generator) -> None:
        fan_in = self.in_channels * self.kernel[0] * self.kernel[1]
        self.W = rng.standard_normal(self.W.shape) * np.sqrt(2.0 / fan_in)
        self.b = np.zeros(self.filters)

    def output_hw(self, h: int, w: int) -> tuple[int, int]:
        kh, kw = self.kernel
        oh = (h + 2 * self.padding - kh) // self.stride + 1
        ow = (w + 2 * self.padding - kw) // self.stride + 1
        if oh < 1 or ow < 1:
            raise ShapeError(f"conv kernel {self.kernel} does not fit input {h}x{w}")
        return oh, ow

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ShapeError(
                f"{self.name or 'conv'} expected (N, {self.in_channels}, H, W) input, got {x.shape}"
            )
        p, s = self.padding, self.stride
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
        windows = sliding_window_view(xp, self.kernel, axis=(2, 3))[:, :, ::s, ::s]
        self._cols = windows  # (N, B, OH, OW, C, D), view into xp
        self._in_shape = x.shape
        out = np.tensordot(windows, self.W, axes=([1, 4, 5], [1, 2, 3]))
        return out.transpose(0, 3, 1, 2) + self.b[None, :, None, None]

    def backward(self, grad: np.ndarray) -> np.ndarray:
        self.grad_W = np.tensordot(grad, self._cols, axes=([0, 2, 3], [0, 2, 3]))
        self.grad_b = grad.sum(axis=(0, 2, 3))
        dcols = np.einsum("naij,abcd->nbijcd", grad, self.W)
        n, _, h, w = self._in_shape
        p, s = self.padding, self.stride
        kh, kw = self.kernel
        oh, ow = grad.shape[2], grad.shape[3]
        dxp = np.zeros((n, self.in_channels, h + 2 * p, w + 2 * p))
        for c in range(kh):
            for d in range(kw):
                dxp[:, :, c : c + s * oh : s, d : d + s * ow : s] += dcols[:, :, :, :, c, d]
        return dxp[:, :, p : p + h, p : p + w]

    def copy(self) -> "Conv2D":
        out = Conv2D(self.filters, self.in_channels, self.kernel, self.stride, self.padding)
        out.W = self.W.copy()
        out.b = self.b.copy()
        out.name = self.name
        return out


class ReLU(Layer):
    def forward(self, x: np.ndarray) -> np.ndarray:
        self._active = x > 0.0
        return np.where(self._active, x, 0.0)

    def backward(self, grad: np.ndarray) -> np.ndarray:
        return grad * self._active

    def copy(self) -> "ReLU":
        return ReLU()


class MaxPool2x2(Layer):
    """2x2 max pooling with stride 2; requires even spatial dimensions."""

    def forward(self, x: np.ndarray) -> np.ndarray:
        n, ch, h, w = x.shape
        if h % 2 or w % 2:
            raise ShapeError(f"2x2 max pool needs even spatial dims, got {h}x{w}")
        ho, wo = h // 2, w // 2
        tiles = x.reshape(n, ch, ho, 2, wo, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, ch, ho, wo, 4)
        # argmax takes the first maximum, so tie handling is deterministic
        self._argmax = tiles.argmax(axis=-1)
        self._in_shape = x.shape
        return np.take_along_axis(tiles, self._argmax[..., None], axis=-1)[..., 0]

    def backward(self, grad: np.ndarray) -> np.ndarray:
        n, ch, h, w = self._in_shape
        ho, wo = h // 2, w // 2
        dtiles = np.zeros((n, ch, ho, wo, 4))
        np.put_along_axis(dtiles, self._argmax[..., None], grad[..., None], axis=-1)
        return dtiles.reshape(n, ch, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, ch, h, w)

    def copy(self) -> "MaxPool2x2":
        return MaxPool2x2()


class Flatten(Layer):
    def forward(self, x: np.ndarray) -> np.ndarray:
        self._in_shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad: np.ndarray) -> np.ndarray:
        return grad.reshape(self._in_shape)

    def copy(self) -> "Flatten":
        return Flatten()
