"""Central-difference gradient checks for single layers and whole networks.

The analytic gradients come from the normal code path (whatever dtype the
parameters carry, float64 for checks). The finite differences are evaluated
on an extended-precision copy (``np.longdouble``) with their own loss code,
so rounding in an O(1) loss does not swamp small gradients.

Relative error is ``|num - ana| / max(|num| + |ana|, floor)``.
"""

from __future__ import annotations

import numpy as np

from .layers import Layer
from .network import Model, loss_and_grads

WIDE = np.longdouble


def _rel_err(num, ana, floor: float) -> float:
    return float(abs(num - ana) / max(abs(num) + abs(ana), floor))


def _probe_indices(shape, n, rng):
    size = int(np.prod(shape))
    return [np.unravel_index(i, shape) for i in rng.choice(size, size=min(n, size), replace=False)]


def _widen(params: dict) -> dict:
    return {k: np.asarray(v, dtype=WIDE) for k, v in params.items()}


def _central(f, arr, idx, eps):
    old = arr[idx]
    arr[idx] = old + eps
    plus = f()
    arr[idx] = old - eps
    minus = f()
    arr[idx] = old
    return (plus - minus) / (2 * WIDE(eps))


def check_layer(
    layer: Layer,
    params: dict,
    x: np.ndarray,
    n_probes: int = 100,
    eps: float = 1e-6,
    floor: float = 1e-8,
    train: bool = False,
    seed: int = 0,
) -> dict[str, float]:
    """Worst relative error per parameter (and ``"x"``) for ``sum(R * layer(x))``."""
    rng = np.random.default_rng(seed)
    mask_seed = int(rng.integers(2**31))
    y, cache = layer.forward(params, x, train=train, rng=np.random.default_rng(mask_seed))
    R = rng.standard_normal(y.shape)
    dx, grads = layer.backward(params, R, cache, need_dx=True)
    grads = dict(grads, x=dx)

    wide = _widen(params)
    wide_x = np.asarray(x, dtype=WIDE)
    wide_r = R.astype(WIDE)

    def f():
        out, _ = layer.forward(wide, wide_x, train=train, rng=np.random.default_rng(mask_seed))
        return np.sum(wide_r * out)

    report = {}
    for name in sorted(params) + ["x"]:
        arr = wide_x if name == "x" else wide[name]
        report[name] = max(
            (_rel_err(_central(f, arr, idx, eps), grads[name][idx], floor) for idx in _probe_indices(arr.shape, n_probes, rng)),
            default=0.0,
        )
    return report


def _wide_loss(logits, y):
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.sum(np.exp(z), axis=1, keepdims=True))
    return -np.mean(logp[np.arange(len(y)), y])


def check_network(
    model: Model,
    x: np.ndarray,
    y: np.ndarray,
    n_probes: int = 100,
    eps: float = 1e-6,
    floor: float = 1e-8,
    train: bool = True,
    seed: int = 0,
) -> dict[tuple[int, str], float]:
    """Worst relative error of the mean cross-entropy gradient per ``(layer, name)``.

    DropConnect masks are replayed from one seed so every evaluation sees the same mask.
    """
    rng = np.random.default_rng(seed)
    mask_seed = int(rng.integers(2**31))
    y = np.asarray(y, dtype=np.int64)
    _, grads = loss_and_grads(model, x, y, rng=np.random.default_rng(mask_seed), train=train)

    wide = Model(model.spec, [_widen(p) for p in model.params], model.keep_prob, model.input_mean)
    layers = wide.layers()
    # perturbing layer i leaves everything before it unchanged, so cache the
    # inputs of each layer; sampling layers come after the cache point so the
    # replayed mask stream stays identical
    first_random = next(
        (i for i, l in enumerate(layers) if train and getattr(l, "drop_connect", False)), len(layers)
    )
    inputs = []
    h = np.asarray(x, dtype=WIDE) - WIDE(wide.input_mean)
    for layer, p in zip(layers[:first_random], wide.params):
        inputs.append(h)
        h, _ = layer.forward(p, h, train=train)
    inputs.append(h)

    def loss_from(start):
        start = min(start, first_random)
        h = inputs[start]
        rng = np.random.default_rng(mask_seed)
        for layer, p in zip(layers[start:], wide.params[start:]):
            h, _ = layer.forward(p, h, train=train, rng=rng)
        return _wide_loss(h, y)

    if not np.isclose(float(loss_from(0)), loss_and_grads(model, x, y, np.random.default_rng(mask_seed), train)[0]):
        raise RuntimeError("wide-precision replay disagrees with the network loss")

    report = {}
    for i, p in enumerate(wide.params):
        for name in sorted(p):
            f = lambda: loss_from(i)  # noqa: E731
            report[(i, name)] = max(
                _rel_err(_central(f, p[name], idx, eps), grads[i][name][idx], floor)
                for idx in _probe_indices(p[name].shape, n_probes, rng)
            )
    return report
