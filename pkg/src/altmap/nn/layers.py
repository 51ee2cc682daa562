"""Stateful layers with cached activations, and a sequential container."""

from __future__ import annotations

import numpy as np

from . import functional as F

__all__ = [
    "Parameter",
    "Layer",
    "Conv2D",
    "Dense",
    "ReLU",
    "SELU",
    "Dropout",
    "MaxPool2D",
    "Flatten",
    "Rescale",
    "Sequential",
    "init_weights",
]


class Parameter:
    """A trainable array with its gradient and Adam moment estimates."""

    def __init__(self, value: np.ndarray):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.m = np.zeros_like(self.value)
        self.v = np.zeros_like(self.value)
        self.t = 0

    @property
    def shape(self):
        return self.value.shape


def init_weights(shape, fan_in: int, fan_out: int, scheme: str, rng) -> np.ndarray:
    if scheme == "he_normal":
        return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)
    if scheme == "lecun_normal":
        return rng.normal(0.0, np.sqrt(1.0 / fan_in), size=shape)
    if scheme == "glorot_uniform":
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-limit, limit, size=shape)
    raise ValueError(f"unknown init scheme {scheme!r}")


class Layer:
    kind = "layer"

    def params(self) -> list[Parameter]:
        return []

    def forward(self, x, train: bool = False):
        raise NotImplementedError

    def backward(self, grad):
        raise NotImplementedError

    def config(self) -> dict:
        return {"kind": self.kind}


class Conv2D(Layer):
    kind = "conv2d"

    def __init__(self, in_channels: int, filters: int, kernel: int, init: str = "he_normal", rng=None):
        if kernel % 2 == 0:
            raise ValueError("kernel size must be odd")
        rng = np.random.default_rng(0) if rng is None else rng
        fan_in = kernel * kernel * in_channels
        fan_out = kernel * kernel * filters
        shape = (kernel, kernel, in_channels, filters)
        self.weight = Parameter(init_weights(shape, fan_in, fan_out, init, rng))
        self.bias = Parameter(np.zeros(filters))
        self.kernel, self.in_channels, self.filters, self.init = kernel, in_channels, filters, init
        self._x = None

    def params(self):
        return [self.weight, self.bias]

    def forward(self, x, train=False):
        self._x = x
        return F.conv2d_forward(x, self.weight.value, self.bias.value)

    def backward(self, grad):
        gx, gw, gb = F.conv2d_backward(grad, self._x, self.weight.value)
        self.weight.grad += gw
        self.bias.grad += gb
        return gx

    def config(self):
        return {"kind": self.kind, "in_channels": self.in_channels, "filters": self.filters,
                "kernel": self.kernel, "init": self.init}


class Dense(Layer):
    kind = "dense"

    def __init__(self, in_features: int, out_features: int, init: str = "glorot_uniform", rng=None):
        rng = np.random.default_rng(0) if rng is None else rng
        shape = (in_features, out_features)
        self.weight = Parameter(init_weights(shape, in_features, out_features, init, rng))
        self.bias = Parameter(np.zeros(out_features))
        self.in_features, self.out_features, self.init = in_features, out_features, init
        self._x = None

    def params(self):
        return [self.weight, self.bias]

    def forward(self, x, train=False):
        self._x = x
        return F.dense_forward(x, self.weight.value, self.bias.value)

    def backward(self, grad):
        gx, gw, gb = F.dense_backward(grad, self._x, self.weight.value)
        self.weight.grad += gw
        self.bias.grad += gb
        return gx

    def config(self):
        return {"kind": self.kind, "in_features": self.in_features,
                "out_features": self.out_features, "init": self.init}


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, train=False):
        self._x = x
        return F.relu(x)

    def backward(self, grad):
        return F.relu_grad(self._x, grad)


class SELU(Layer):
    kind = "selu"

    def forward(self, x, train=False):
        self._x = x
        return F.selu(x)

    def backward(self, grad):
        return F.selu_grad(self._x, grad)


class Dropout(Layer):
    """Inverted dropout; ``rng`` must be set before training-mode forward passes."""

    kind = "dropout"

    def __init__(self, rate: float, rng=None):
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate
        self.rng = rng
        self._mask = None

    def forward(self, x, train=False):
        out, self._mask = F.dropout(x, self.rate, "train" if train else "infer", self.rng)
        return out

    def backward(self, grad):
        return F.dropout_grad(grad, self._mask)

    def config(self):
        return {"kind": self.kind, "rate": self.rate}


class MaxPool2D(Layer):
    kind = "maxpool2d"

    def __init__(self, size: int = 2):
        self.size = size

    def forward(self, x, train=False):
        self._shape = np.shape(x)
        out, self._arg = F.maxpool2d_forward(x, self.size)
        return out

    def backward(self, grad):
        return F.maxpool2d_backward(grad, self._arg, self._shape, self.size)

    def config(self):
        return {"kind": self.kind, "size": self.size}


class Flatten(Layer):
    kind = "flatten"

    def forward(self, x, train=False):
        self._shape = np.shape(x)
        return np.reshape(x, (self._shape[0], -1))

    def backward(self, grad):
        return np.reshape(grad, self._shape)


class Rescale(Layer):
    """Fixed affine map ``gain * x + offset`` (no trainable parameters)."""

    kind = "rescale"

    def __init__(self, gain: float = 2.0, offset: float = -1.0):
        self.gain, self.offset = float(gain), float(offset)

    def forward(self, x, train=False):
        return self.gain * np.asarray(x) + self.offset

    def backward(self, grad):
        return self.gain * grad

    def config(self):
        return {"kind": self.kind, "gain": self.gain, "offset": self.offset}


class Sequential:
    """A stack of layers producing logits; softmax is applied by the caller."""

    def __init__(self, layers):
        self.layers = list(layers)

    def params(self) -> list[Parameter]:
        return [p for layer in self.layers for p in layer.params()]

    def forward(self, x, train: bool = False):
        for layer in self.layers:
            x = layer.forward(x, train)
        return x

    def backward(self, grad):
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def zero_grad(self):
        for p in self.params():
            p.grad[...] = 0.0

    def set_rng(self, rng):
        for layer in self.layers:
            if isinstance(layer, Dropout):
                layer.rng = rng

    def predict_proba(self, x, batch_size: int = 512) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        out = [F.softmax(self.forward(x[i : i + batch_size])) for i in range(0, len(x), batch_size)]
        if not out:
            return np.zeros((0, self.layers[-1].out_features))
        return np.concatenate(out)

    def config(self) -> list[dict]:
        return [layer.config() for layer in self.layers]
