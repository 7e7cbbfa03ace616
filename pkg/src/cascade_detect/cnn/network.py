"""Network specification, forward/backward over the layer stack, SGD training."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .layers import Dense, Layer, NonFiniteActivationError, check_finite, layer_from_dict, softmax


class TrainingDivergedError(FloatingPointError):
    def __init__(self, epoch: int, loss: float):
        super().__init__(f"training diverged at epoch {epoch} (loss={loss})")
        self.epoch = epoch
        self.loss = loss


@dataclass(frozen=True)
class NetworkSpec:
    """Layer list plus input shape (channels, height, width)."""

    layers: tuple[dict, ...]
    input_shape: tuple[int, int, int] = (3, 32, 32)

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(dict(d) for d in self.layers))
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
        self.build()  # validates layer types and shapes

    def build(self) -> list[Layer]:
        layers = [layer_from_dict(d) for d in self.layers]
        shape = self.input_shape
        for layer in layers:
            shape = layer.output_shape(shape)
        if shape != (2,):
            raise ValueError(f"network must end in 2 outputs, got {shape}")
        return layers

    def shapes(self) -> list[tuple]:
        """Input shape of every layer."""
        out = [self.input_shape]
        for layer in self.build():
            out.append(layer.output_shape(out[-1]))
        return out[:-1]

    def to_dict(self) -> dict:
        return {"layers": [dict(d) for d in self.layers], "input_shape": list(self.input_shape)}

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        return cls(tuple(d["layers"]), tuple(d.get("input_shape", (3, 32, 32))))


def reference_spec(patch_px: int = 32, channels: int = 3) -> NetworkSpec:
    return NetworkSpec(
        (
            {"type": "conv", "filters": 16, "kernel": 5},
            {"type": "relu"},
            {"type": "maxpool", "size": 2},
            {"type": "conv", "filters": 32, "kernel": 5},
            {"type": "relu"},
            {"type": "maxpool", "size": 2},
            {"type": "local", "filters": 16, "kernel": 3},
            {"type": "relu"},
            {"type": "flatten"},
            {"type": "dense", "units": 64, "drop_connect": True},
            {"type": "relu"},
            {"type": "dense", "units": 2},
        ),
        (channels, patch_px, patch_px),
    )


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 5e-4
    batch_size: int = 64
    epochs: int = 30
    lr_decay: float = 0.1
    lr_decay_at: float = 2.0 / 3.0
    keep_prob: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be >= 0")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")
        if not 0 < self.keep_prob <= 1:
            raise ValueError("keep_prob must be in (0, 1]")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")

    def lr_at(self, epoch: int) -> float:
        drop = epoch >= math.ceil(self.lr_decay_at * self.epochs)
        return self.learning_rate * (self.lr_decay if drop else 1.0)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


@dataclass
class Model:
    spec: NetworkSpec
    params: list[dict]
    keep_prob: float = 0.5
    input_mean: float = 0.0
    metadata: dict = field(default_factory=dict)

    def layers(self) -> list[Layer]:
        layers = self.spec.build()
        for layer in layers:
            if isinstance(layer, Dense):
                layer.keep_prob = self.keep_prob
        return layers


def init_params(spec: NetworkSpec, seed: int = 0, dtype=np.float32) -> list[dict]:
    rng = np.random.default_rng(seed)
    return [
        layer.init_params(shape, rng, dtype) for layer, shape in zip(spec.build(), spec.shapes())
    ]


def forward(model: Model, x, train: bool = False, rng=None, keep_caches: bool = False):
    """Logits for a batch (B, C, H, W); optionally the per-layer caches."""
    x = np.asarray(x)
    dtype = next((v.dtype for p in model.params for v in p.values()), x.dtype)
    h = x.astype(dtype, copy=False) - dtype.type(model.input_mean)
    if h.shape[1:] != model.spec.input_shape:
        raise ValueError(f"expected input (B, {model.spec.input_shape}), got {x.shape}")
    caches = []
    for layer, p in zip(model.layers(), model.params):
        h, cache = layer.forward(p, h, train=train, rng=rng)
        check_finite(h, layer.kind)
        if keep_caches:
            caches.append(cache)
    return (h, caches) if keep_caches else h


def predict_proba(model: Model, x, batch_size: int = 256) -> np.ndarray:
    """Class probabilities (B, 2) in inference mode."""
    x = np.asarray(x)
    out = [softmax(forward(model, x[i : i + batch_size])) for i in range(0, len(x), batch_size)]
    if not out:
        return np.zeros((0, 2))
    return np.concatenate(out).astype(np.float64)


def loss_and_grads(model: Model, x, y, rng=None, train: bool = True):
    """Mean softmax cross-entropy and its gradient for every parameter."""
    y = np.asarray(y, dtype=np.int64)
    logits, caches = forward(model, x, train=train, rng=rng, keep_caches=True)
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = len(y)
    loss = -float(logp[np.arange(n), y].astype(np.float64).sum()) / n
    d = np.exp(logp)
    d[np.arange(n), y] -= 1
    d /= d.dtype.type(n)
    layers = model.layers()
    grads = [None] * len(layers)
    for i in range(len(layers) - 1, -1, -1):
        d, grads[i] = layers[i].backward(model.params[i], d, caches[i], need_dx=i > 0)
    return loss, grads


def train_sgd(
    spec: NetworkSpec,
    X,
    y,
    config: TrainConfig = TrainConfig(),
    dtype=np.float32,
    callback=None,
    initial: list[dict] | None = None,
) -> Model:
    """Minibatch SGD with momentum and L2 weight decay on the weights.

    The learning rate drops by ``lr_decay`` once ``lr_decay_at`` of the epochs
    are done. ``callback(epoch, mean_loss)`` is invoked after each epoch.
    ``initial`` replaces the seeded random initialization (copied, not mutated).
    """
    X = np.asarray(X)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 4 or len(X) != len(y):
        raise ValueError("X must be (n, C, H, W) with one label per row")
    if len(X) == 0:
        raise ValueError("cannot train on an empty set")
    if len(np.unique(y)) != 2:
        raise ValueError("training needs both classes present")
    rng = np.random.default_rng(config.seed)
    params = init_params(spec, seed=int(rng.integers(2**31)), dtype=dtype)
    if initial is not None:
        params = [{k: np.array(v, dtype=dtype) for k, v in p.items()} for p in initial]
    model = Model(spec, params, keep_prob=config.keep_prob, input_mean=float(X.mean(dtype=np.float64)))
    velocity = [{k: np.zeros_like(v) for k, v in p.items()} for p in params]
    history = []
    for epoch in range(config.epochs):
        lr = dtype(config.lr_at(epoch))
        order = rng.permutation(len(X))
        losses = []
        for start in range(0, len(X), config.batch_size):
            idx = order[start : start + config.batch_size]
            try:
                loss, grads = loss_and_grads(model, X[idx], y[idx], rng=rng)
            except NonFiniteActivationError:
                raise TrainingDivergedError(epoch, math.nan) from None
            if not math.isfinite(loss):
                raise TrainingDivergedError(epoch, loss)
            losses.append(loss * len(idx))
            for p, g, v in zip(params, grads, velocity):
                for k in p:
                    step = g[k] + dtype(config.weight_decay) * p[k] if k == "W" else g[k]
                    v[k] *= dtype(config.momentum)
                    v[k] -= lr * step
                    p[k] += v[k]
        mean_loss = math.fsum(losses) / len(X)
        if not math.isfinite(mean_loss):
            raise TrainingDivergedError(epoch, mean_loss)
        history.append(mean_loss)
        if callback is not None:
            callback(epoch, mean_loss)
    model.metadata.update(
        epochs_run=config.epochs,
        final_loss=history[-1],
        seed=config.seed,
        loss_history=history,
        train_config=config.to_dict(),
    )
    return model


def parameter_count(spec: NetworkSpec) -> int:
    return sum(
        int(np.prod(s))
        for layer, shape in zip(spec.build(), spec.shapes())
        for s in layer.param_shapes(shape).values()
    )

