"""Stateful layers over :mod:`camsim.nn.ops`.

A layer keeps the cache of its most recent ``forward`` call, so one layer
instance serves one forward/backward pass at a time.
"""

from __future__ import annotations

import numpy as np

from . import ops


class Parameter:
    """A trainable array with its gradient slot and Adam state."""

    def __init__(self, value, name: str = ""):
        self.value = np.array(value, dtype=np.float64)
        self.name = name
        self.grad = None
        self.m = np.zeros_like(self.value)
        self.v = np.zeros_like(self.value)
        self.step = 0

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad = np.zeros_like(self.value)

    def accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        self.grad += g

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.value.shape})"


class Layer:
    def parameters(self) -> list[Parameter]:
        return []

    def forward(self, x):
        raise NotImplementedError

    def backward(self, dy):
        raise NotImplementedError


class Conv2d(Layer):
    def __init__(self, cin, cout, kernel=3, stride=1, padding=None, rng=None,
                 zero_init=False, bias=True, name="conv"):
        padding = kernel // 2 if padding is None else padding
        if zero_init:
            w = np.zeros((kernel, kernel, cin, cout))
        else:
            rng = rng if rng is not None else np.random.default_rng(0)
            w = rng.normal(0.0, np.sqrt(2.0 / (kernel * kernel * cin)), (kernel, kernel, cin, cout))
        self.weight = Parameter(w, f"{name}.weight")
        self.bias = Parameter(np.zeros(cout), f"{name}.bias") if bias else None
        self.stride, self.padding = stride, padding
        self._cache = None

    def parameters(self):
        return [self.weight] if self.bias is None else [self.weight, self.bias]

    def forward(self, x):
        b = None if self.bias is None else self.bias.value
        y, self._cache = ops.conv2d(x, self.weight.value, b, self.stride, self.padding)
        return y

    def backward(self, dy):
        dx, dw, db = ops.conv2d_backward(dy, self._cache)
        self.weight.accumulate(dw)
        if self.bias is not None:
            self.bias.accumulate(db)
        return dx


class Activation(Layer):
    def __init__(self, kind: str):
        self.kind = kind
        self._cache = None

    def forward(self, x):
        y, self._cache = ops.activation(x, self.kind)
        return y

    def backward(self, dy):
        return ops.activation_backward(dy, self._cache, self.kind)


class GlobalAvgPool(Layer):
    def forward(self, x):
        y, self._shape = ops.global_avg_pool(x)
        return y

    def backward(self, dy):
        return ops.global_avg_pool_backward(dy, self._shape)


class AvgPool2(Layer):
    def forward(self, x):
        y, self._shape = ops.avg_pool2(x)
        return y

    def backward(self, dy):
        return ops.avg_pool2_backward(dy, self._shape)


class Resample(Layer):
    def __init__(self, mode: str = "bilinear"):
        self.mode = mode
        self._cache = None

    def forward(self, x, size):
        y, self._cache = ops.resample(x, size[0], size[1], self.mode)
        return y

    def backward(self, dy):
        return ops.resample_backward(dy, self._cache)


class Sequential(Layer):
    def __init__(self, *layers):
        self.layers = list(layers)

    def parameters(self):
        return [p for layer in self.layers for p in layer.parameters()]

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, dy):
        for layer in reversed(self.layers):
            dy = layer.backward(dy)
        return dy


def conv_block(cin, cout, rng, name):
    """Two 3x3 convolutions, each followed by ReLU."""
    return Sequential(
        Conv2d(cin, cout, 3, rng=rng, name=f"{name}.0"), Activation("relu"),
        Conv2d(cout, cout, 3, rng=rng, name=f"{name}.1"), Activation("relu"),
    )


def zero_grads(params):
    for p in params:
        p.zero_grad()
