"""Layers with explicit forward/backward passes (NCHW layout).

Each layer caches what its backward pass needs during ``forward`` and fills
``grads`` (same keys as ``params``) during ``backward``.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ConfigError


class Layer:
    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.need_input_grad = True

    def output_shape(self, shape):
        return shape

    def forward(self, x):
        raise NotImplementedError

    def backward(self, dy):
        raise NotImplementedError

    def astype(self, dtype):
        for k in self.params:
            self.params[k] = self.params[k].astype(dtype)
        return self


def _he_uniform(rng, shape, fan_in, dtype):
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Conv2D(Layer):
    def __init__(self, in_channels, channels, kernel=3, stride=1, padding=None, rng=None, dtype=np.float32):
        super().__init__()
        if kernel < 1 or stride < 1 or channels < 1:
            raise ConfigError("conv2d needs kernel, stride and channels >= 1")
        self.kernel, self.stride = int(kernel), int(stride)
        self.padding = self.kernel // 2 if padding is None else int(padding)
        rng = rng or np.random.default_rng(0)
        fan_in = in_channels * kernel * kernel
        self.params["W"] = _he_uniform(rng, (channels, in_channels, kernel, kernel), fan_in, dtype)
        self.params["b"] = np.zeros(channels, dtype=dtype)

    def output_shape(self, shape):
        c, h, w = shape
        p, k, s = self.padding, self.kernel, self.stride
        return (self.params["W"].shape[0], (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1)

    def forward(self, x):
        p, k, s = self.padding, self.kernel, self.stride
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
        cols = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::s, ::s]
        out = np.tensordot(cols, self.params["W"], axes=([1, 4, 5], [1, 2, 3]))
        self._cache = (x.shape, cols)
        out = out.transpose(0, 3, 1, 2) + self.params["b"][None, :, None, None]
        return np.ascontiguousarray(out)

    def backward(self, dy):
        xshape, cols = self._cache
        W = self.params["W"]
        self.grads["W"] = np.tensordot(dy, cols, axes=([0, 2, 3], [0, 2, 3])).astype(W.dtype, copy=False)
        self.grads["b"] = dy.sum(axis=(0, 2, 3), dtype=np.float64).astype(W.dtype)
        if not self.need_input_grad:
            return None
        p, k, s = self.padding, self.kernel, self.stride
        n, c, h, w = xshape
        ho, wo = dy.shape[2:]
        dcols = np.tensordot(dy, W, axes=([1], [0])).transpose(0, 3, 1, 2, 4, 5)
        dxp = np.zeros((n, c, h + 2 * p, w + 2 * p), dtype=dy.dtype)
        for i in range(k):
            for j in range(k):
                dxp[:, :, i:i + s * ho:s, j:j + s * wo:s] += dcols[..., i, j]
        return dxp[:, :, p:p + h, p:p + w] if p else dxp


class MaxPool2D(Layer):
    """Max pooling without padding; gradient routes to the first maximal cell."""

    def __init__(self, kernel=2, stride=None):
        super().__init__()
        self.kernel = int(kernel)
        self.stride = int(stride or kernel)

    def output_shape(self, shape):
        c, h, w = shape
        k, s = self.kernel, self.stride
        return (c, (h - k) // s + 1, (w - k) // s + 1)

    def forward(self, x):
        k, s = self.kernel, self.stride
        n, c, h, w = x.shape
        win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::s, ::s]
        ho, wo = win.shape[2:4]
        flat = win.reshape(n, c, ho, wo, k * k)
        arg = flat.argmax(axis=-1)
        out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
        # flat input index of every selected cell
        di, dj = np.divmod(arg, k)
        rows = np.arange(ho)[None, None, :, None] * s + di
        cols = np.arange(wo)[None, None, None, :] * s + dj
        base = (np.arange(n)[:, None, None, None] * c + np.arange(c)[None, :, None, None]) * (h * w)
        self._cache = (x.shape, (base + rows * w + cols).ravel())
        return out

    def backward(self, dy):
        shape, index = self._cache
        dx = np.bincount(index, weights=dy.ravel(), minlength=int(np.prod(shape)))
        return dx.astype(dy.dtype, copy=False).reshape(shape)


class ReLU(Layer):
    def forward(self, x):
        self._mask = x > 0
        return np.where(self._mask, x, 0).astype(x.dtype, copy=False)

    def backward(self, dy):
        return np.where(self._mask, dy, 0).astype(dy.dtype, copy=False)


class GlobalAvgPool(Layer):
    def output_shape(self, shape):
        return (shape[0],)

    def forward(self, x):
        self._shape = x.shape
        return x.mean(axis=(2, 3), dtype=np.float64).astype(x.dtype)

    def backward(self, dy):
        n, c, h, w = self._shape
        return np.broadcast_to((dy / (h * w))[:, :, None, None], self._shape).astype(dy.dtype)


class Flatten(Layer):
    def output_shape(self, shape):
        return (int(np.prod(shape)),)

    def forward(self, x):
        self._shape = x.shape
        return x.reshape(len(x), -1)

    def backward(self, dy):
        return dy.reshape(self._shape)


class Dense(Layer):
    def __init__(self, in_features, units, rng=None, dtype=np.float32):
        super().__init__()
        if units < 1:
            raise ConfigError("dense needs units >= 1")
        rng = rng or np.random.default_rng(0)
        self.params["W"] = _he_uniform(rng, (in_features, units), in_features, dtype)
        self.params["b"] = np.zeros(units, dtype=dtype)

    def output_shape(self, shape):
        return (self.params["W"].shape[1],)

    def forward(self, x):
        self._x = x
        return x @ self.params["W"] + self.params["b"]

    def backward(self, dy):
        self.grads["W"] = self._x.T @ dy
        self.grads["b"] = dy.sum(axis=0, dtype=np.float64).astype(dy.dtype)
        return dy @ self.params["W"].T if self.need_input_grad else None


class L2Normalize(Layer):
    """Row-wise ``h / ||h||``.

    Rows whose norm is below ``eps`` have no direction; they map to the
    constant unit vector ``1/sqrt(d)`` with zero gradient, which keeps every
    output on the unit sphere.
    """

    def __init__(self, eps=1e-12):
        super().__init__()
        self.eps = eps

    def forward(self, h):
        norm = np.sqrt(np.sum(np.square(h, dtype=np.float64), axis=1, keepdims=True))
        degenerate = norm < self.eps
        y = h / np.where(degenerate, 1.0, norm)
        y = np.where(degenerate, 1.0 / np.sqrt(h.shape[1]), y).astype(h.dtype)
        self._cache = (y, norm, degenerate)
        return y

    def backward(self, dy):
        y, norm, degenerate = self._cache
        y64 = y.astype(np.float64)
        proj = np.sum(y64 * dy, axis=1, keepdims=True)
        dh = (dy - y64 * proj) / np.where(degenerate, 1.0, norm)
        return np.where(degenerate, 0.0, dh).astype(dy.dtype)


class Residual(Layer):
    """conv-relu-conv plus identity (or 1x1 projection) skip, then relu."""

    def __init__(self, in_channels, channels, kernel=3, rng=None, dtype=np.float32):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.conv1 = Conv2D(in_channels, channels, kernel, 1, None, rng, dtype)
        self.relu1 = ReLU()
        self.conv2 = Conv2D(channels, channels, kernel, 1, None, rng, dtype)
        self.proj = Conv2D(in_channels, channels, 1, 1, 0, rng, dtype) if in_channels != channels else None
        self.relu2 = ReLU()
        self._sync()

    def _children(self):
        kids = {"conv1": self.conv1, "conv2": self.conv2}
        if self.proj is not None:
            kids["proj"] = self.proj
        return kids

    def _sync(self):
        self.params = {f"{name}.{k}": v for name, layer in self._children().items() for k, v in layer.params.items()}

    def astype(self, dtype):
        for layer in self._children().values():
            layer.astype(dtype)
        self._sync()
        return self

    def output_shape(self, shape):
        return self.conv2.output_shape(self.conv1.output_shape(shape))

    def forward(self, x):
        for name, layer in self._children().items():
            for k in layer.params:
                layer.params[k] = self.params[f"{name}.{k}"]
        main = self.conv2.forward(self.relu1.forward(self.conv1.forward(x)))
        skip = self.proj.forward(x) if self.proj is not None else x
        return self.relu2.forward(main + skip)

    def backward(self, dy):
        self.conv1.need_input_grad = self.need_input_grad
        if self.proj is not None:
            self.proj.need_input_grad = self.need_input_grad
        d = self.relu2.backward(dy)
        dx = self.conv1.backward(self.relu1.backward(self.conv2.backward(d)))
        if self.proj is not None:
            dskip = self.proj.backward(d)
        else:
            dskip = d
        self.grads = {f"{name}.{k}": v for name, layer in self._children().items() for k, v in layer.grads.items()}
        if not self.need_input_grad:
            return None
        return dx + dskip
