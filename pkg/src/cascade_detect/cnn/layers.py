"""Layers with explicit forward/backward passes on NCHW numpy arrays.

Every layer is stateless: parameters come in as a dict and the forward pass
returns a cache that the backward pass consumes. This keeps a single code path
for float32 training and float64 gradient checks.
"""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class NonFiniteActivationError(FloatingPointError):
    pass


class Layer:
    kind = "layer"
    param_names: tuple[str, ...] = ()

    def output_shape(self, in_shape):
        return in_shape

    def init_params(self, in_shape, rng, dtype) -> dict:
        return {}

    def param_shapes(self, in_shape) -> dict:
        return {}

    def forward(self, params, x, train=False, rng=None):
        raise NotImplementedError

    def backward(self, params, dout, cache, need_dx=True):
        """Returns ``(dx, grads)``; ``dx`` is None when ``need_dx`` is false."""
        raise NotImplementedError

    def to_dict(self) -> dict:
        return {"type": self.kind}


def _col2im(dcols, x_shape, k):
    """Adjoint of :func:`_im2col`: scatter-add (B, OH, OW, C*k*k) back to x."""
    B, C = x_shape[:2]
    oh, ow = dcols.shape[1:3]
    dcols = dcols.reshape(B, oh, ow, C, k, k)
    dx = np.zeros(x_shape, dtype=dcols.dtype)
    for i in range(k):
        for j in range(k):
            dx[:, :, i : i + oh, j : j + ow] += dcols[..., i, j].transpose(0, 3, 1, 2)
    return dx


def _unfold(x, k):
    """(B, C, H, W) -> (B, C*k*k, OH*OW), one contiguous copy per kernel offset."""
    B, C, H, W = x.shape
    oh, ow = H - k + 1, W - k + 1
    cols = np.empty((B, C, k, k, oh, ow), dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, :, i, j] = x[:, :, i : i + oh, j : j + ow]
    return cols.reshape(B, C * k * k, oh * ow)


def _fold(dcols, x_shape, k, out_hw):
    """Adjoint of :func:`_unfold`."""
    B, C = x_shape[:2]
    oh, ow = out_hw
    dcols = dcols.reshape(B, C, k, k, oh, ow)
    dx = np.zeros(x_shape, dtype=dcols.dtype)
    for i in range(k):
        for j in range(k):
            dx[:, :, i : i + oh, j : j + ow] += dcols[:, :, i, j]
    return dx


def _im2col(x, k):
    """(B, C, H, W) -> (B, OH, OW, C*k*k) valid windows, stride 1."""
    win = sliding_window_view(x, (k, k), axis=(2, 3))  # B, C, OH, OW, k, k
    b, c, oh, ow = win.shape[:4]
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(b, oh, ow, c * k * k)


class Conv2D(Layer):
    """Valid convolution, stride 1, tied weights (F, C, k, k)."""

    kind = "conv"
    param_names = ("W", "b")

    def __init__(self, filters, kernel):
        self.filters = int(filters)
        self.kernel = int(kernel)

    def output_shape(self, in_shape):
        c, h, w = in_shape
        k = self.kernel
        if h < k or w < k:
            raise ValueError(f"conv {k}x{k} does not fit input {in_shape}")
        return (self.filters, h - k + 1, w - k + 1)

    def param_shapes(self, in_shape):
        c = in_shape[0]
        return {"W": (self.filters, c, self.kernel, self.kernel), "b": (self.filters,)}

    def init_params(self, in_shape, rng, dtype):
        shapes = self.param_shapes(in_shape)
        fan_in = in_shape[0] * self.kernel**2
        return {
            "W": (rng.standard_normal(shapes["W"]) * math.sqrt(2.0 / fan_in)).astype(dtype),
            "b": np.zeros(shapes["b"], dtype=dtype),
        }

    def forward(self, params, x, train=False, rng=None):
        W, b = params["W"], params["b"]
        B = x.shape[0]
        cols = _unfold(x, self.kernel)  # B, C*k*k, OH*OW
        y = np.matmul(W.reshape(self.filters, -1), cols) + b[:, None]
        _, oh, ow = self.output_shape(x.shape[1:])
        return y.reshape(B, self.filters, oh, ow), (x.shape, cols)

    def backward(self, params, dout, cache, need_dx=True):
        W = params["W"]
        x_shape, cols = cache
        dy = dout.reshape(dout.shape[0], self.filters, -1)  # B, F, P
        grads = {
            "W": np.tensordot(dy, cols, axes=([0, 2], [0, 2])).reshape(W.shape),
            "b": dy.sum(axis=(0, 2)),
        }
        if not need_dx:
            return None, grads
        dcols = np.matmul(W.reshape(self.filters, -1).T, dy)
        return _fold(dcols, x_shape, self.kernel, dout.shape[2:]), grads

    def to_dict(self):
        return {"type": self.kind, "filters": self.filters, "kernel": self.kernel}


class LocallyConnected(Layer):
    """Like :class:`Conv2D` but with separate weights at every output position."""

    kind = "local"
    param_names = ("W", "b")

    def __init__(self, filters, kernel):
        self.filters = int(filters)
        self.kernel = int(kernel)

    def output_shape(self, in_shape):
        return Conv2D(self.filters, self.kernel).output_shape(in_shape)

    def param_shapes(self, in_shape):
        c = in_shape[0]
        _, oh, ow = self.output_shape(in_shape)
        return {"W": (oh, ow, self.filters, c * self.kernel**2), "b": (self.filters, oh, ow)}

    def init_params(self, in_shape, rng, dtype):
        shapes = self.param_shapes(in_shape)
        fan_in = in_shape[0] * self.kernel**2
        return {
            "W": (rng.standard_normal(shapes["W"]) * math.sqrt(2.0 / fan_in)).astype(dtype),
            "b": np.zeros(shapes["b"], dtype=dtype),
        }

    def forward(self, params, x, train=False, rng=None):
        cols = _im2col(x, self.kernel).transpose(1, 2, 0, 3)  # OH, OW, B, D
        y = np.matmul(cols, params["W"].transpose(0, 1, 3, 2))  # OH, OW, B, F
        return y.transpose(2, 3, 0, 1) + params["b"], (x.shape, cols)

    def backward(self, params, dout, cache, need_dx=True):
        x_shape, cols = cache
        dy = dout.transpose(2, 3, 0, 1)  # OH, OW, B, F
        grads = {
            "W": np.matmul(dy.transpose(0, 1, 3, 2), cols),
            "b": dout.sum(axis=0),
        }
        if not need_dx:
            return None, grads
        dcols = np.matmul(dy, params["W"]).transpose(2, 0, 1, 3)  # B, OH, OW, D
        return _col2im(dcols, x_shape, self.kernel), grads

    def to_dict(self):
        return {"type": self.kind, "filters": self.filters, "kernel": self.kernel}


class ReLU(Layer):
    kind = "relu"

    def forward(self, params, x, train=False, rng=None):
        mask = x > 0
        return x * mask, mask

    def backward(self, params, dout, cache, need_dx=True):
        return dout * cache, {}


class MaxPool(Layer):
    """Non-overlapping max pooling; gradient goes to the first maximum only."""

    kind = "maxpool"

    def __init__(self, size=2):
        self.size = int(size)

    def output_shape(self, in_shape):
        c, h, w = in_shape
        s = self.size
        if h % s or w % s:
            raise ValueError(f"maxpool {s}x{s} needs dims divisible by {s}, got {in_shape}")
        return (c, h // s, w // s)

    def _quadrants(self, x):
        s = self.size
        return [x[:, :, i::s, j::s] for i in range(s) for j in range(s)]

    def forward(self, params, x, train=False, rng=None):
        quads = self._quadrants(x)
        y = quads[0]
        for q in quads[1:]:
            y = np.maximum(y, q)
        # first quadrant (row-major within the window) holding the maximum
        arg = np.full(y.shape, len(quads) - 1, dtype=np.int8)
        for n in range(len(quads) - 2, -1, -1):
            arg[quads[n] == y] = n
        return y, (x.shape, arg)

    def backward(self, params, dout, cache, need_dx=True):
        x_shape, arg = cache
        dx = np.zeros(x_shape, dtype=dout.dtype)
        for n, view in enumerate(self._quadrants(dx)):
            view[...] = dout * (arg == n)
        return dx, {}

    def to_dict(self):
        return {"type": self.kind, "size": self.size}


class Flatten(Layer):
    kind = "flatten"

    def output_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, params, x, train=False, rng=None):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, params, dout, cache, need_dx=True):
        return dout.reshape(cache), {}


class Dense(Layer):
    """Fully connected layer, optionally with DropConnect on its weights.

    In training each example sees its own Bernoulli(keep) mask over ``W``;
    at inference the weights are scaled by ``keep`` (their expectation).
    """

    kind = "dense"
    param_names = ("W", "b")

    def __init__(self, units, drop_connect=False):
        self.units = int(units)
        self.drop_connect = bool(drop_connect)
        self.keep_prob = 1.0

    def output_shape(self, in_shape):
        if len(in_shape) != 1:
            raise ValueError(f"dense layer needs flat input, got {in_shape}")
        return (self.units,)

    def param_shapes(self, in_shape):
        return {"W": (in_shape[0], self.units), "b": (self.units,)}

    def init_params(self, in_shape, rng, dtype):
        fan_in = in_shape[0]
        return {
            "W": (rng.standard_normal((fan_in, self.units)) * math.sqrt(2.0 / fan_in)).astype(dtype),
            "b": np.zeros(self.units, dtype=dtype),
        }

    def forward(self, params, x, train=False, rng=None):
        W, b = params["W"], params["b"]
        p = self.keep_prob
        if not self.drop_connect or p >= 1.0:
            return x @ W + b, (x, None)
        if not train:
            return x @ (W * W.dtype.type(p)) + b, (x, None)
        mask = rng.random((x.shape[0],) + W.shape) < p
        y = np.einsum("bd,bdu->bu", x, W * mask, optimize=True) + b
        return y, (x, mask)

    def backward(self, params, dout, cache, need_dx=True):
        W = params["W"]
        x, mask = cache
        if mask is None:
            scaled = self.drop_connect and self.keep_prob < 1.0
            scale = W.dtype.type(self.keep_prob if scaled else 1.0)
            grads = {"W": (x.T @ dout) * scale, "b": dout.sum(axis=0)}
            return ((dout @ W.T) * scale if need_dx else None), grads
        grads = {
            "W": np.einsum("bd,bu,bdu->du", x, dout, mask, optimize=True),
            "b": dout.sum(axis=0),
        }
        dx = np.einsum("bu,bdu->bd", dout, W * mask, optimize=True) if need_dx else None
        return dx, grads

    def to_dict(self):
        return {"type": self.kind, "units": self.units, "drop_connect": self.drop_connect}


LAYER_TYPES = {
    "conv": Conv2D,
    "local": LocallyConnected,
    "relu": ReLU,
    "maxpool": MaxPool,
    "flatten": Flatten,
    "dense": Dense,
}


def layer_from_dict(d: dict) -> Layer:
    d = dict(d)
    cls = LAYER_TYPES[d.pop("type")]
    return cls(**d)


def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def check_finite(x, where: str):
    if not np.all(np.isfinite(x)):
        raise NonFiniteActivationError(f"non-finite activation after {where}")
