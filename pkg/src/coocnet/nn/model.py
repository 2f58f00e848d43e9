"""Sequential CNN model, loss/gradient evaluation, and the reference architecture."""

from __future__ import annotations

import numpy as np

from .. import _rng
from ..errors import DivergenceError, ShapeMismatchError
from .layers import Conv2d, GlobalAvgPool, Linear, MaxPool2d, ReLU, cross_entropy, layer_from_dict, softmax

N_CLASSES = 2


class Model:
    """A stack of layers plus their parameters.

    ``input_shape`` is ``(planes, bins, bins)``; ``metadata`` records how the
    input was produced (bins, direction mode, normalization, training seed)
    so that a checkpoint carries everything needed for prediction.
    """

    def __init__(self, layers, input_shape, params=None, seed=0, dtype=np.float64, metadata=None):
        self.layers = list(layers)
        self.input_shape = tuple(int(s) for s in input_shape)
        self.dtype = np.dtype(dtype)
        if self.dtype not in (np.float32, np.float64):
            raise ValueError(f"dtype must be float32 or float64, got {self.dtype}")
        self.metadata = dict(metadata or {})
        self.shapes = [self.input_shape]
        for layer in self.layers:
            self.shapes.append(tuple(layer.output_shape(self.shapes[-1])))
        if self.shapes[-1] != (N_CLASSES,):
            raise ShapeMismatchError(f"model must end in {N_CLASSES} logits, ends in {self.shapes[-1]}")
        if params is None:
            rng = _rng.make_rng(seed, _rng.INIT)
            params = [layer.init_params(shape, rng, self.dtype) for layer, shape in zip(self.layers, self.shapes)]
        elif len(params) != len(self.layers):
            raise ShapeMismatchError("one parameter dict per layer is required")
        self.params = params
        expected = [layer.init_params(s, _rng.make_rng(0), self.dtype) for layer, s in zip(self.layers, self.shapes)]
        for i, (got, want) in enumerate(zip(self.params, expected)):
            if set(got) != set(want) or any(got[k].shape != want[k].shape for k in want):
                raise ShapeMismatchError(f"layer {i} parameters do not match its descriptor")
            for k in got:
                got[k] = np.ascontiguousarray(got[k], dtype=self.dtype)

    def parameters(self):
        """Parameter arrays in declaration order (layer, then weight before bias)."""
        return [p[k] for p in self.params for k in sorted(p, key=_param_order)]

    def named_parameters(self):
        return [(f"{i}.{k}", p[k]) for i, p in enumerate(self.params) for k in sorted(p, key=_param_order)]

    def describe(self):
        return [layer.describe() for layer in self.layers]

    def copy(self):
        params = [{k: v.copy() for k, v in p.items()} for p in self.params]
        return Model([layer_from_dict(d) for d in self.describe()], self.input_shape, params,
                     dtype=self.dtype, metadata=self.metadata)

    def check_input(self, batch):
        x = np.asarray(batch)
        if x.ndim != 4 or tuple(x.shape[1:]) != self.input_shape:
            raise ShapeMismatchError(f"model expects (batch, {', '.join(map(str, self.input_shape))}), got {x.shape}")
        return x.astype(self.dtype, copy=False)

    def _forward(self, x, keep):
        caches = []
        for i, (layer, p) in enumerate(zip(self.layers, self.params)):
            x, cache = layer.forward(x, p)
            if not np.isfinite(x).all():
                raise DivergenceError(f"non-finite activations after layer {i} ({layer!r})")
            if keep:
                caches.append(cache)
        return x, caches

    def __repr__(self):
        body = ", ".join(repr(layer) for layer in self.layers)
        return f"Model(input={self.input_shape}, [{body}])"


def _param_order(name):
    return (name != "weight", name)


def forward(model: Model, batch) -> np.ndarray:
    """Logits of shape ``(batch, 2)``."""
    logits, _ = model._forward(model.check_input(batch), keep=False)
    return logits


def predict_proba(model: Model, batch, chunk: int = 32) -> np.ndarray:
    """Probability of the "tampered" class, evaluated ``chunk`` rows at a time."""
    x = model.check_input(batch)
    out = [softmax(forward(model, x[i : i + chunk]))[:, 1] for i in range(0, len(x), chunk)]
    return np.concatenate(out) if out else np.zeros(0)


def loss_and_gradients(model: Model, batch, labels, return_logits=False):
    """Mean cross-entropy and its gradient for every parameter.

    Gradients come back as a list of dicts mirroring ``model.params``. With
    ``return_logits`` the forward logits are appended to the returned tuple.
    """
    x = model.check_input(batch)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (len(x),):
        raise ShapeMismatchError(f"{len(x)} inputs but labels of shape {labels.shape}")
    logits, caches = model._forward(x, keep=True)
    loss, dy = cross_entropy(logits, labels)
    grads = [None] * len(model.layers)
    for i in range(len(model.layers) - 1, -1, -1):
        dy, grads[i] = model.layers[i].backward(dy, caches[i], model.params[i])
    if not np.isfinite(loss) or any(not np.isfinite(g).all() for gd in grads for g in gd.values()):
        raise DivergenceError("non-finite loss or gradient")
    if return_logits:
        return loss, grads, logits
    return loss, grads


def backward(model: Model, batch, labels):
    return loss_and_gradients(model, batch, labels)[1]


def flat_gradients(model: Model, grads):
    """Gradient dicts flattened into :meth:`Model.parameters` order."""
    return [g[k] for g in grads for k in sorted(g, key=_param_order)]


def reference_layers():
    """The compact reference stack: three strided convolutions, one max-pool, GAP, FC."""
    return [
        Conv2d(16, 3, stride=2, padding=1),
        ReLU(),
        Conv2d(32, 3, stride=2, padding=1),
        ReLU(),
        MaxPool2d(2),
        Conv2d(64, 3, stride=2, padding=1),
        ReLU(),
        GlobalAvgPool(),
        Linear(N_CLASSES),
    ]


def reference_model(planes: int = 6, bins: int = 64, seed: int = 0, dtype=np.float64, **metadata) -> Model:
    metadata = {"bins": bins, "planes": planes, "seed": seed, **metadata}
    return Model(reference_layers(), (planes, bins, bins), seed=seed, dtype=dtype, metadata=metadata)
