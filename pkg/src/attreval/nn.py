"""Small numpy classifiers with exact reverse-mode gradients.

Parameters are stored as read-only float32 arrays; every forward/backward
pass runs in float64. A ``Network`` is never mutated once built: training
and fine-tuning return new instances.
"""

from __future__ import annotations

import hashlib
import io
import math
import struct
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .data import LabeledDataset

CHUNK = 1024


class ShapeMismatchError(ValueError):
    def __init__(self, layer_index: int, layer, expected, got):
        self.layer_index = layer_index
        super().__init__(
            f"layer {layer_index} ({type(layer).__name__}) expects input shape "
            f"{tuple(expected)}, got {tuple(got)}"
        )


class NonFiniteGradientError(FloatingPointError):
    def __init__(self, layer_index: int):
        self.layer_index = layer_index
        super().__init__(f"non-finite gradient at layer {layer_index}")


class TrainingDivergedError(FloatingPointError):
    def __init__(self, epoch: int):
        self.epoch = epoch
        super().__init__(f"loss became non-finite in epoch {epoch}")


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=np.float32, copy=True)
    a.flags.writeable = False
    return a


# ---------------------------------------------------------------------------
# Layers
# ---------------------------------------------------------------------------


class Layer:
    param_names: tuple[str, ...] = ()

    def output_shape(self, in_shape):
        return tuple(in_shape)

    def params(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in self.param_names}

    def with_params(self, **params) -> "Layer":
        return self

    def forward(self, x):
        """Return (output, cache)."""
        raise NotImplementedError

    def backward(self, cache, grad_out, need_input=True):
        """Return (grad_input, {param: grad})."""
        raise NotImplementedError


class Dense(Layer):
    param_names = ("weights", "bias")

    def __init__(self, weights, bias):
        self.weights = _frozen(weights)
        self.bias = _frozen(bias)
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise ValueError("Dense expects weights (out, in) and bias (out,)")
        self._w = self.weights.astype(np.float64)
        self._b = self.bias.astype(np.float64)

    @classmethod
    def init(cls, n_in: int, n_out: int, rng, gain: float = 6.0):
        bound = math.sqrt(gain / n_in)
        return cls(rng.uniform(-bound, bound, size=(n_out, n_in)), np.zeros(n_out))

    @property
    def input_shape(self):
        return (self.weights.shape[1],)

    def output_shape(self, in_shape):
        return (self.weights.shape[0],)

    def with_params(self, weights=None, bias=None):
        return Dense(self.weights if weights is None else weights, self.bias if bias is None else bias)

    def forward(self, x):
        return x @ self._w.T + self._b, x

    def backward(self, x, g, need_input=True):
        grads = {"weights": g.T @ x, "bias": g.sum(axis=0)}
        return (g @ self._w if need_input else None), grads


class ReLU(Layer):
    def forward(self, x):
        mask = x > 0
        return np.where(mask, x, 0.0), mask

    def backward(self, mask, g, need_input=True):
        return g * mask, {}


class Flatten(Layer):
    def output_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x):
        return x.reshape(len(x), -1), x.shape

    def backward(self, shape, g, need_input=True):
        return g.reshape(shape), {}


class Conv2D(Layer):
    """Valid (unpadded) 2-D convolution over (channels, height, width) inputs."""

    param_names = ("kernels", "bias")

    def __init__(self, kernels, bias, stride: int = 1):
        self.kernels = _frozen(kernels)
        self.bias = _frozen(bias)
        self.stride = int(stride)
        if self.kernels.ndim != 4 or self.bias.shape != (self.kernels.shape[0],):
            raise ValueError("Conv2D expects kernels (out, in, kh, kw) and bias (out,)")
        if self.stride < 1:
            raise ValueError("stride must be positive")
        self._k = self.kernels.astype(np.float64)
        self._kmat = self._k.reshape(self._k.shape[0], -1)
        self._b = self.bias.astype(np.float64)

    @classmethod
    def init(cls, c_in: int, c_out: int, size: int, rng, stride: int = 1):
        fan_in = c_in * size * size
        bound = math.sqrt(6.0 / fan_in)
        return cls(rng.uniform(-bound, bound, size=(c_out, c_in, size, size)), np.zeros(c_out), stride)

    def with_params(self, kernels=None, bias=None):
        return Conv2D(
            self.kernels if kernels is None else kernels,
            self.bias if bias is None else bias,
            self.stride,
        )

    def output_shape(self, in_shape):
        c, h, w = in_shape
        o, ci, kh, kw = self.kernels.shape
        if c != ci or h < kh or w < kw:
            raise ValueError(f"Conv2D cannot take input shape {tuple(in_shape)}")
        return (o, (h - kh) // self.stride + 1, (w - kw) // self.stride + 1)

    def forward(self, x):
        b, c, h, w = x.shape
        o, _, kh, kw = self.kernels.shape
        s = self.stride
        win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::s, ::s]
        ho, wo = win.shape[2], win.shape[3]
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(b * ho * wo, c * kh * kw)
        out = cols @ self._kmat.T + self._b
        return out.reshape(b, ho, wo, o).transpose(0, 3, 1, 2), (x.shape, cols, ho, wo)

    def backward(self, cache, g, need_input=True):
        in_shape, cols, ho, wo = cache
        b, c, h, w = in_shape
        o, _, kh, kw = self.kernels.shape
        s = self.stride
        gcol = g.transpose(0, 2, 3, 1).reshape(b * ho * wo, o)
        grads = {
            "kernels": (gcol.T @ cols).reshape(self.kernels.shape),
            "bias": gcol.sum(axis=0),
        }
        if not need_input:
            return None, grads
        dcols = (gcol @ self._kmat).reshape(b, ho, wo, c, kh, kw)
        dx = np.zeros(in_shape)
        for i in range(kh):
            for j in range(kw):
                dx[:, :, i : i + s * (ho - 1) + 1 : s, j : j + s * (wo - 1) + 1 : s] += (
                    dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
                )
        return dx, grads


class MaxPool2D(Layer):
    """Non-overlapping max pooling; trailing rows/columns that do not fill a window are dropped."""

    def __init__(self, size: int = 2):
        self.size = int(size)

    def output_shape(self, in_shape):
        c, h, w = in_shape
        return (c, h // self.size, w // self.size)

    def forward(self, x):
        b, c, h, w = x.shape
        s = self.size
        ho, wo = h // s, w // s
        win = x[:, :, : ho * s, : wo * s].reshape(b, c, ho, s, wo, s).transpose(0, 1, 2, 4, 3, 5)
        win = win.reshape(b, c, ho, wo, s * s)
        arg = win.argmax(axis=-1)
        out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
        return out, (x.shape, arg)

    def backward(self, cache, g, need_input=True):
        shape, arg = cache
        b, c, h, w = shape
        s = self.size
        ho, wo = arg.shape[2], arg.shape[3]
        win = np.zeros((b, c, ho, wo, s * s))
        np.put_along_axis(win, arg[..., None], g[..., None], axis=-1)
        win = win.reshape(b, c, ho, wo, s, s).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, ho * s, wo * s)
        dx = np.zeros(shape)
        dx[:, :, : ho * s, : wo * s] = win
        return dx, {}


# ---------------------------------------------------------------------------
# Network
# ---------------------------------------------------------------------------


class Network:
    """Ordered layer stack ending in a Dense classification head."""

    def __init__(self, layers: Sequence[Layer], input_shape, head_index: int | None = None):
        self.layers = tuple(layers)
        self.input_shape = tuple(int(d) for d in input_shape)
        param_idx = [i for i, layer in enumerate(self.layers) if layer.param_names]
        if not param_idx:
            raise ValueError("network has no parameterized layer")
        if head_index is None:
            head_index = param_idx[-1]
        if not isinstance(self.layers[head_index], Dense) or head_index != param_idx[-1]:
            raise ValueError("head must be the last parameterized layer and Dense")
        self.head_index = head_index
        shape = self.input_shape
        self._shapes = [shape]
        for i, layer in enumerate(self.layers):
            try:
                out = layer.output_shape(shape)
            except ValueError:
                raise ShapeMismatchError(i, layer, getattr(layer, "input_shape", "?"), shape) from None
            if isinstance(layer, Dense) and (len(shape) != 1 or shape[0] != layer.weights.shape[1]):
                raise ShapeMismatchError(i, layer, layer.input_shape, shape)
            shape = out
            self._shapes.append(shape)
        if len(shape) != 1:
            raise ValueError("network output must be a vector")
        self.num_classes = shape[0]

    # -- parameters -----------------------------------------------------
    def parameters(self) -> list[tuple[int, str, np.ndarray]]:
        return [(i, name, arr) for i, layer in enumerate(self.layers) for name, arr in layer.params().items()]

    def parameter_count(self, head_only: bool = False) -> int:
        return sum(a.size for i, _, a in self.parameters() if not head_only or i == self.head_index)

    def with_layer_params(self, updates: dict[int, dict[str, np.ndarray]]) -> "Network":
        layers = [
            layer.with_params(**updates[i]) if i in updates else layer for i, layer in enumerate(self.layers)
        ]
        return Network(layers, self.input_shape, self.head_index)

    def reinitialized(self, seed) -> "Network":
        """Same architecture, fresh seeded initialization."""
        rng = np.random.default_rng(seed)
        layers = []
        for i, layer in enumerate(self.layers):
            if isinstance(layer, Dense):
                gain = 3.0 if i == self.head_index else 6.0
                layers.append(Dense.init(layer.weights.shape[1], layer.weights.shape[0], rng, gain))
            elif isinstance(layer, Conv2D):
                o, c, k, _ = layer.kernels.shape
                layers.append(Conv2D.init(c, o, k, rng, layer.stride))
            else:
                layers.append(layer)
        return Network(layers, self.input_shape, self.head_index)

    def fingerprint(self) -> str:
        return hashlib.sha256(dump_network(self)).hexdigest()

    def __eq__(self, other):
        if not isinstance(other, Network):
            return NotImplemented
        return dump_network(self) == dump_network(other)

    def __hash__(self):
        return hash(self.fingerprint())

    # -- passes ---------------------------------------------------------
    def _check_input(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x)
        if x.shape[1:] != self.input_shape:
            raise ShapeMismatchError(0, self.layers[0], self.input_shape, x.shape[1:])
        return x

    def run(self, x, start: int = 0, stop: int | None = None, keep_cache: bool = False):
        """Run layers[start:stop] on a batch; optionally keep per-layer caches."""
        caches = []
        stop = len(self.layers) if stop is None else stop
        for layer in self.layers[start:stop]:
            x, cache = layer.forward(x)
            if keep_cache:
                caches.append(cache)
        return x, caches

    def backprop(self, caches, grad_out, start: int = 0, need_input: bool = True, params: bool = True):
        """Backward through layers[start:start+len(caches)].

        Returns (grad wrt the input of layer ``start``, {layer index: {name: grad}}).
        """
        g = grad_out
        grads = {}
        stop = start + len(caches)
        for i in range(stop - 1, start - 1, -1):
            layer = self.layers[i]
            want_input = need_input or i > start
            g, pg = layer.backward(caches[i - start], g, need_input=want_input)
            if params and pg:
                grads[i] = pg
            if g is not None and not np.all(np.isfinite(g)):
                raise NonFiniteGradientError(i)
        return g, grads

    def logits(self, x) -> np.ndarray:
        x = self._check_input(x)
        if len(x) == 0:
            return np.zeros((0, self.num_classes))
        return np.concatenate(
            [self.run(x[s : s + CHUNK].astype(np.float64))[0] for s in range(0, len(x), CHUNK)]
        )


def softmax(z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def forward(net: Network, x) -> np.ndarray:
    """Logits o(x) for one sample (shape == net.input_shape) or a batch."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape == net.input_shape:
        return net.logits(x[None])[0]
    return net.logits(x)


def predict(net: Network, x) -> np.ndarray:
    """Softmax probabilities f(x) = softmax(o(x))."""
    return softmax(forward(net, x))


def input_gradients(net: Network, x, targets, head: str = "probability") -> np.ndarray:
    """Batched gradient of o_t or f_t with respect to the inputs.

    ``targets`` gives one class index per row of ``x``.
    """
    if head not in ("logit", "probability"):
        raise ValueError(f"unknown head {head!r}")
    x = net._check_input(x)
    targets = np.asarray(targets, dtype=np.int64)
    if targets.shape != (len(x),):
        raise ValueError("need one target per sample")
    if len(targets) and (targets.min() < 0 or targets.max() >= net.num_classes):
        raise ValueError(f"target must lie in [0, {net.num_classes})")
    out = np.empty(x.shape)
    for s in range(0, len(x), CHUNK):
        xb, tb = x[s : s + CHUNK].astype(np.float64), targets[s : s + CHUNK]
        z, caches = net.run(xb, keep_cache=True)
        g = np.zeros_like(z)
        rows = np.arange(len(xb))
        if head == "logit":
            g[rows, tb] = 1.0
        else:
            p = softmax(z)
            py = p[rows, tb]
            g = -py[:, None] * p
            g[rows, tb] += py
        gx, _ = net.backprop(caches, g, params=False)
        out[s : s + CHUNK] = gx
    return out


def input_gradient(net: Network, x, target: int, head: str = "probability") -> np.ndarray:
    """Gradient of o_target (head='logit') or f_target (head='probability') w.r.t. x."""
    x = np.asarray(x, dtype=np.float64)
    return input_gradients(net, x[None], [target], head)[0]


def accuracy(net: Network, data: LabeledDataset) -> float:
    if len(data) == 0:
        raise ValueError("empty dataset")
    pred = net.logits(data.inputs).argmax(axis=1)
    return float(np.mean(pred == data.labels))


# ---------------------------------------------------------------------------
# Architectures
# ---------------------------------------------------------------------------


def mlp(n_in: int, hidden: Sequence[int] = (256,), n_classes: int = 10, seed=0) -> Network:
    rng = np.random.default_rng(seed)
    layers: list[Layer] = []
    width = n_in
    for h in hidden:
        layers += [Dense.init(width, h, rng), ReLU()]
        width = h
    layers.append(Dense.init(width, n_classes, rng, gain=3.0))
    return Network(layers, (n_in,))


def small_cnn(
    input_shape=(1, 28, 28), channels=(8, 16), kernel: int = 3, hidden: int = 64, n_classes: int = 10, seed=0
) -> Network:
    """Two conv blocks followed by two dense layers."""
    rng = np.random.default_rng(seed)
    layers: list[Layer] = []
    c_in = input_shape[0]
    shape = tuple(input_shape)
    for c in channels:
        conv = Conv2D.init(c_in, c, kernel, rng)
        pool = MaxPool2D(2)
        layers += [conv, ReLU(), pool]
        shape = pool.output_shape(conv.output_shape(shape))
        if min(shape[1:]) < 1:
            raise ValueError(f"input {tuple(input_shape)} is too small for {len(channels)} conv blocks")
        c_in = c
    flat = int(np.prod(shape))
    layers += [Flatten(), Dense.init(flat, hidden, rng), ReLU(), Dense.init(hidden, n_classes, rng, gain=3.0)]
    return Network(layers, input_shape)


def cancellation_net(step: float = 0.05, span: float = 3.0) -> Network:
    """Two-class net whose class-0 logit is the piecewise-linear interpolant of (x1 - x2)^2.

    Knots sit every ``step`` on [-span, span]; the class-1 logit is constant 0.
    Along the diagonal x1 == x2 every hinge is exactly at its kink, so the
    gradient there is zero.
    """
    n = int(round(span / step))
    knots = step * np.arange(n)
    slopes = np.full(n, 2 * step)
    slopes[0] = step
    w1 = np.concatenate([np.tile([[1.0, -1.0]], (n, 1)), np.tile([[-1.0, 1.0]], (n, 1))])
    b1 = -np.concatenate([knots, knots])
    w2 = np.stack([np.concatenate([slopes, slopes]), np.zeros(2 * n)])
    return Network([Dense(w1, b1), ReLU(), Dense(w2, np.zeros(2))], (2,))


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SGD:
    lr: float = 0.01
    momentum: float = 0.0

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")


@dataclass(frozen=True)
class Adam:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    optimizer: SGD | Adam = field(default_factory=SGD)
    schedule: str = "constant"
    warmup_epochs: int = 0
    batch_size: int = 64
    seed: int = 0
    scope: str = "full"

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.schedule not in ("constant", "cosine"):
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if self.warmup_epochs < 0 or (self.epochs > 0 and self.warmup_epochs >= self.epochs):
            raise ValueError("warmup_epochs must be smaller than epochs")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.scope not in ("full", "head_only"):
            raise ValueError(f"unknown scope {self.scope!r}")

    def with_(self, **kw) -> "TrainConfig":
        return replace(self, **kw)


@dataclass
class TrainHistory:
    loss: list[float] = field(default_factory=list)
    accuracy: list[float] = field(default_factory=list)
    steps: int = 0
    samples: int = 0
    # number of scalar parameter-gradient contributions: sum over steps of batch * trainable params
    gradient_updates: int = 0


def _lr_at(cfg: TrainConfig, step: int, steps_per_epoch: int) -> float:
    lr = cfg.optimizer.lr
    if cfg.schedule == "constant":
        return lr
    warm = cfg.warmup_epochs * steps_per_epoch
    total = cfg.epochs * steps_per_epoch
    if step < warm:
        return lr * (step + 1) / warm
    progress = (step - warm) / max(total - warm, 1)
    return 0.5 * lr * (1.0 + math.cos(math.pi * progress))


class _Optimizer:
    def __init__(self, cfg: TrainConfig, params: dict):
        self.opt = cfg.optimizer
        self.master = {k: v.astype(np.float64) for k, v in params.items()}
        self.state = {k: [np.zeros_like(v), np.zeros_like(v)] for k, v in self.master.items()}
        self.t = 0

    def step(self, grads: dict, lr: float):
        self.t += 1
        for k, g in grads.items():
            m, v = self.state[k]
            if isinstance(self.opt, SGD):
                if self.opt.momentum:
                    m *= self.opt.momentum
                    m += g
                    g = m
                self.master[k] -= lr * g
            else:
                b1, b2 = self.opt.beta1, self.opt.beta2
                m *= b1
                m += (1 - b1) * g
                v *= b2
                v += (1 - b2) * g * g
                mhat = m / (1 - b1**self.t)
                vhat = v / (1 - b2**self.t)
                self.master[k] -= lr * mhat / (np.sqrt(vhat) + self.opt.eps)


def _xent_grad(z: np.ndarray, y: np.ndarray):
    """Mean softmax cross-entropy, its logit gradient, and batch hit count."""
    shifted = z - z.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(len(y))
    loss = float(np.mean(logsum - shifted[rows, y]))
    p = np.exp(shifted - logsum[:, None])
    p[rows, y] -= 1.0
    hits = int(np.sum(z.argmax(axis=1) == y))
    return loss, p / len(y), hits


def _fit(net: Network, data: LabeledDataset, cfg: TrainConfig, head_only: bool):
    if len(data) == 0:
        raise ValueError("empty dataset")
    if data.labels.max() >= net.num_classes:
        raise ValueError("labels exceed network class count")
    history = TrainHistory()
    if cfg.epochs == 0:
        return net, history
    start = net.head_index if head_only else 0
    if head_only:
        # frozen body: its features are fixed, compute once
        x = net._check_input(data.inputs)
        feats = np.concatenate(
            [net.run(x[s : s + CHUNK].astype(np.float64), stop=start)[0] for s in range(0, len(x), CHUNK)]
        )
    else:
        feats = net._check_input(data.inputs)
    trainable = {
        (i, name): arr for i, name, arr in net.parameters() if i >= start
    }
    opt = _Optimizer(cfg, trainable)
    n_trainable = sum(a.size for a in trainable.values())
    work = net
    n = len(data)
    steps_per_epoch = math.ceil(n / cfg.batch_size)
    step = 0
    for epoch in range(cfg.epochs):
        order = np.random.default_rng([cfg.seed, epoch]).permutation(n)
        total_loss, hits = 0.0, 0
        for s in range(0, n, cfg.batch_size):
            idx = order[s : s + cfg.batch_size]
            xb, yb = feats[idx].astype(np.float64), data.labels[idx]
            z, caches = work.run(xb, start=start, keep_cache=True)
            loss, g, h = _xent_grad(z, yb)
            if not math.isfinite(loss):
                raise TrainingDivergedError(epoch)
            _, grads = work.backprop(caches, g, start=start, need_input=False)
            flat = {(i, name): gr for i, d in grads.items() for name, gr in d.items()}
            opt.step(flat, _lr_at(cfg, step, steps_per_epoch))
            updates: dict[int, dict] = {}
            for (i, name), arr in opt.master.items():
                updates.setdefault(i, {})[name] = arr
            work = work.with_layer_params(updates)
            step += 1
            total_loss += loss * len(idx)
            hits += h
            history.steps += 1
            history.samples += len(idx)
            history.gradient_updates += len(idx) * n_trainable
        mean_loss = total_loss / n
        if not math.isfinite(mean_loss):
            raise TrainingDivergedError(epoch)
        history.loss.append(mean_loss)
        history.accuracy.append(hits / n)
    return work, history


def train(net: Network, data: LabeledDataset, cfg: TrainConfig) -> tuple[Network, TrainHistory]:
    """Train every parameter of ``net`` with softmax cross-entropy.

    Per-epoch history records the running mean loss and accuracy seen during
    the epoch. Results are bit-reproducible for fixed (net, data, cfg).
    """
    if cfg.scope != "full":
        raise ValueError("train() requires scope='full'; use fine_tune() for head-only updates")
    return _fit(net, data, cfg, head_only=False)


def fine_tune(net: Network, data: LabeledDataset, cfg: TrainConfig) -> tuple[Network, TrainHistory]:
    """Continue training from ``net``; ``cfg.scope='head_only'`` freezes everything but the head."""
    return _fit(net, data, cfg, head_only=cfg.scope == "head_only")


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

NET_MAGIC = b"AEVNET1"
_KIND = {Dense: 1, Conv2D: 2, ReLU: 3, Flatten: 4, MaxPool2D: 5}


class CheckpointError(ValueError):
    pass


def _write_array(buf, a):
    a = np.asarray(a, dtype="<f4")
    buf.write(struct.pack("<I", a.ndim))
    buf.write(struct.pack(f"<{a.ndim}I", *a.shape))
    buf.write(a.tobytes(order="C"))


def dump_network(net: Network) -> bytes:
    buf = io.BytesIO()
    buf.write(NET_MAGIC)
    buf.write(struct.pack("<I", len(net.input_shape)))
    buf.write(struct.pack(f"<{len(net.input_shape)}I", *net.input_shape))
    buf.write(struct.pack("<II", len(net.layers), net.head_index))
    for layer in net.layers:
        buf.write(struct.pack("<B", _KIND[type(layer)]))
        if isinstance(layer, Conv2D):
            buf.write(struct.pack("<I", layer.stride))
        elif isinstance(layer, MaxPool2D):
            buf.write(struct.pack("<I", layer.size))
        for name in layer.param_names:
            _write_array(buf, getattr(layer, name))
    body = buf.getvalue()
    return body + hashlib.sha256(body).digest()


class _Reader:
    def __init__(self, raw: bytes):
        self.raw, self.pos = raw, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise CheckpointError(f"truncated data at byte {self.pos}")
        out = self.raw[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self, count: int = 1):
        vals = struct.unpack(f"<{count}I", self.take(4 * count))
        return vals if count != 1 else vals[0]

    def array(self) -> np.ndarray:
        ndim = self.u32()
        shape = tuple(self.u32(ndim)) if ndim != 1 else (self.u32(),)
        count = int(np.prod(shape)) if shape else 1
        return np.frombuffer(self.take(4 * count), dtype="<f4").reshape(shape).astype(np.float32)


def load_network(raw: bytes) -> Network:
    if raw[: len(NET_MAGIC)] != NET_MAGIC:
        raise CheckpointError("not an AEVNET1 checkpoint (bad magic or version)")
    if len(raw) < len(NET_MAGIC) + 32:
        raise CheckpointError("truncated checkpoint")
    body, digest = raw[:-32], raw[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError("checkpoint hash mismatch (corrupt or truncated)")
    r = _Reader(body)
    r.take(len(NET_MAGIC))
    ndim = r.u32()
    input_shape = (r.u32(ndim),) if ndim == 1 else tuple(r.u32(ndim))
    n_layers, head = r.u32(2)
    kinds = {v: k for k, v in _KIND.items()}
    layers: list[Layer] = []
    for _ in range(n_layers):
        (code,) = struct.unpack("<B", r.take(1))
        kind = kinds.get(code)
        if kind is None:
            raise CheckpointError(f"unknown layer code {code}")
        if kind is Dense:
            layers.append(Dense(r.array(), r.array()))
        elif kind is Conv2D:
            stride = r.u32()
            layers.append(Conv2D(r.array(), r.array(), stride))
        elif kind is MaxPool2D:
            layers.append(MaxPool2D(r.u32()))
        else:
            layers.append(kind())
    if r.pos != len(body):
        raise CheckpointError("trailing bytes after layer list")
    return Network(layers, input_shape, head)


def save_network(net: Network, path) -> None:
    with open(path, "wb") as fh:
        fh.write(dump_network(net))


def read_network(path) -> Network:
    with open(path, "rb") as fh:
        return load_network(fh.read())
