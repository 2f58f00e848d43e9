"""Layer primitives with explicit forward/backward passes.

Activations are ``(batch, channels, height, width)`` arrays until global
average pooling, ``(batch, features)`` after. Each layer is a small config
object; parameters live outside it in a plain ``dict`` so the model can
hand them to the optimizer and the checkpoint writer in one flat order.

``forward`` returns ``(output, cache)`` and ``backward`` consumes that cache,
returning ``(grad_input, grad_params)``.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ShapeMismatchError


def conv_output_size(size: int, kernel: int, stride: int = 1, padding: int = 0) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def _windows(x, kernel, stride):
    """(N, C, Ho, Wo, k, k) strided view of the spatial windows of ``x``."""
    win = sliding_window_view(x, (kernel, kernel), axis=(2, 3))
    return win[:, :, ::stride, ::stride]


def _scatter_windows(dwin, shape, kernel, stride):
    """Adjoint of :func:`_windows`: sum window gradients back onto the input grid."""
    out = np.zeros(shape, dtype=dwin.dtype)
    ho, wo = dwin.shape[2:4]
    for i in range(kernel):
        for j in range(kernel):
            out[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += dwin[..., i, j]
    return out


class Layer:
    kind = "layer"

    def output_shape(self, in_shape):
        return in_shape

    def init_params(self, in_shape, rng, dtype):
        return {}

    def describe(self):
        return {"type": self.kind}

    def __repr__(self):
        args = ", ".join(f"{k}={v}" for k, v in self.describe().items() if k != "type")
        return f"{type(self).__name__}({args})"


class Conv2d(Layer):
    kind = "conv2d"

    def __init__(self, out_channels, kernel=3, stride=1, padding=0):
        self.out_channels = int(out_channels)
        self.kernel = int(kernel)
        self.stride = int(stride)
        self.padding = int(padding)

    def describe(self):
        return {"type": self.kind, "out_channels": self.out_channels, "kernel": self.kernel,
                "stride": self.stride, "padding": self.padding}

    def output_shape(self, in_shape):
        if len(in_shape) != 3:
            raise ShapeMismatchError(f"conv2d needs a (C, H, W) input, got {in_shape}")
        c, h, w = in_shape
        ho = conv_output_size(h, self.kernel, self.stride, self.padding)
        wo = conv_output_size(w, self.kernel, self.stride, self.padding)
        if ho < 1 or wo < 1:
            raise ShapeMismatchError(f"conv2d {self.describe()} cannot take a {h}x{w} input")
        return (self.out_channels, ho, wo)

    def init_params(self, in_shape, rng, dtype):
        fan_in = in_shape[0] * self.kernel * self.kernel
        w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(self.out_channels, in_shape[0], self.kernel, self.kernel))
        return {"weight": w.astype(dtype), "bias": np.zeros(self.out_channels, dtype=dtype)}

    def forward(self, x, params):
        p, k = self.padding, self.kernel
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
        win = _windows(xp, k, self.stride)
        n, c, ho, wo = win.shape[:4]
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * k * k)
        wmat = params["weight"].reshape(self.out_channels, -1)
        y = cols @ wmat.T + params["bias"]
        y = y.reshape(n, ho, wo, self.out_channels).transpose(0, 3, 1, 2)
        return np.ascontiguousarray(y), (cols, xp.shape, x.shape)

    def backward(self, dy, cache, params):
        cols, xp_shape, x_shape = cache
        k, p = self.kernel, self.padding
        n, f, ho, wo = dy.shape
        dyr = dy.transpose(0, 2, 3, 1).reshape(-1, f)
        wmat = params["weight"].reshape(f, -1)
        grads = {"weight": (dyr.T @ cols).reshape(params["weight"].shape), "bias": dyr.sum(axis=0)}
        c = xp_shape[1]
        dwin = (dyr @ wmat).reshape(n, ho, wo, c, k, k).transpose(0, 3, 1, 2, 4, 5)
        dxp = _scatter_windows(dwin, xp_shape, k, self.stride)
        dx = dxp[:, :, p : p + x_shape[2], p : p + x_shape[3]] if p else dxp
        return dx, grads


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, params):
        mask = x > 0
        return x * mask, mask

    def backward(self, dy, cache, params):
        return dy * cache, {}


class MaxPool2d(Layer):
    """Max pooling; on ties the gradient goes to the first maximum in window order."""

    kind = "maxpool"

    def __init__(self, kernel=2, stride=None):
        self.kernel = int(kernel)
        self.stride = int(stride) if stride is not None else self.kernel

    def describe(self):
        return {"type": self.kind, "kernel": self.kernel, "stride": self.stride}

    def output_shape(self, in_shape):
        if len(in_shape) != 3:
            raise ShapeMismatchError(f"maxpool needs a (C, H, W) input, got {in_shape}")
        c, h, w = in_shape
        ho = conv_output_size(h, self.kernel, self.stride)
        wo = conv_output_size(w, self.kernel, self.stride)
        if ho < 1 or wo < 1:
            raise ShapeMismatchError(f"maxpool {self.kernel}x{self.kernel} cannot take a {h}x{w} input")
        return (c, ho, wo)

    def forward(self, x, params):
        win = _windows(x, self.kernel, self.stride)
        flat = win.reshape(*win.shape[:4], -1)
        arg = flat.argmax(axis=-1)
        y = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
        return y, (arg, x.shape)

    def backward(self, dy, cache, params):
        arg, x_shape = cache
        k = self.kernel
        onehot = arg[..., None] == np.arange(k * k)
        dwin = (onehot * dy[..., None]).reshape(*dy.shape, k, k)
        return _scatter_windows(dwin, x_shape, k, self.stride), {}


class GlobalAvgPool(Layer):
    kind = "gap"

    def output_shape(self, in_shape):
        if len(in_shape) != 3:
            raise ShapeMismatchError(f"global average pooling needs (C, H, W), got {in_shape}")
        return (in_shape[0],)

    def forward(self, x, params):
        return x.mean(axis=(2, 3)), x.shape

    def backward(self, dy, cache, params):
        n, c, h, w = cache
        dx = np.broadcast_to((dy / (h * w))[:, :, None, None], cache)
        return np.ascontiguousarray(dx), {}


class Linear(Layer):
    kind = "linear"

    def __init__(self, out_features):
        self.out_features = int(out_features)

    def describe(self):
        return {"type": self.kind, "out_features": self.out_features}

    def output_shape(self, in_shape):
        if len(in_shape) != 1:
            raise ShapeMismatchError(f"linear layer needs a flat input, got {in_shape}")
        return (self.out_features,)

    def init_params(self, in_shape, rng, dtype):
        w = rng.normal(0.0, np.sqrt(2.0 / in_shape[0]), size=(self.out_features, in_shape[0]))
        return {"weight": w.astype(dtype), "bias": np.zeros(self.out_features, dtype=dtype)}

    def forward(self, x, params):
        return x @ params["weight"].T + params["bias"], x

    def backward(self, dy, cache, params):
        return dy @ params["weight"], {"weight": dy.T @ cache, "bias": dy.sum(axis=0)}


LAYER_TYPES = {cls.kind: cls for cls in (Conv2d, ReLU, MaxPool2d, GlobalAvgPool, Linear)}


def layer_from_dict(d):
    d = dict(d)
    try:
        cls = LAYER_TYPES[d.pop("type")]
    except KeyError as exc:
        raise ValueError(f"unknown layer type {exc}") from None
    return cls(**d)


def cross_entropy(logits, labels):
    """Mean negative log-likelihood of ``labels`` under ``softmax(logits)``.

    Returns ``(loss, grad)`` with ``grad`` the derivative of the mean loss
    with respect to ``logits``.
    """
    z = np.asarray(logits)
    y = np.asarray(labels, dtype=np.int64)
    if z.ndim != 2 or y.shape != (z.shape[0],):
        raise ShapeMismatchError(f"logits {z.shape} and labels {y.shape} do not pair up")
    if y.size and (y.min() < 0 or y.max() >= z.shape[1]):
        raise ValueError("labels out of range for the number of classes")
    shifted = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(len(y))
    loss = float(np.mean(lse - shifted[rows, y]))
    grad = np.exp(shifted - lse[:, None])
    grad[rows, y] -= 1.0
    return loss, grad / len(y)


def softmax(logits):
    z = np.asarray(logits)
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)
