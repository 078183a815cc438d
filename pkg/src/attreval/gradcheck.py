"""Central finite-difference checks for layers and networks.

Each check contracts the layer output with a fixed random tensor so the
loss is a scalar, then compares analytic and numeric derivatives per
coordinate. Parameters are stored in float32, so the numeric derivative
divides by the actually representable step rather than by 2h.
"""

from __future__ import annotations

import numpy as np

from . import nn


def relative_error(analytic, numeric, floor: float = 1e-8) -> np.ndarray:
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def _loss(layer, x, r):
    out, _ = layer.forward(x)
    return float(np.sum(out * r))


def check_layer(layer: nn.Layer, x: np.ndarray, rng, h: float = 1e-3, max_coords: int = 64) -> dict:
    """Max relative error of input and parameter gradients of ``layer`` at batch ``x``."""
    x = np.asarray(x, dtype=np.float64)
    out, cache = layer.forward(x)
    r = rng.normal(size=out.shape)
    gx, grads = layer.backward(cache, r, need_input=True)
    errs = {}
    flat = x.reshape(-1)
    coords = rng.choice(flat.size, size=min(max_coords, flat.size), replace=False)
    num = np.empty(len(coords))
    for j, c in enumerate(coords):
        xp, xm = flat.copy(), flat.copy()
        xp[c] += h
        xm[c] -= h
        num[j] = (_loss(layer, xp.reshape(x.shape), r) - _loss(layer, xm.reshape(x.shape), r)) / (2 * h)
    errs["input"] = float(relative_error(gx.reshape(-1)[coords], num).max())
    for name, arr in layer.params().items():
        base = np.asarray(arr, dtype=np.float64).reshape(-1)
        coords = rng.choice(base.size, size=min(max_coords, base.size), replace=False)
        num = np.empty(len(coords))
        for j, c in enumerate(coords):
            vp, vm = base.copy(), base.copy()
            vp[c] += h
            vm[c] -= h
            vp, vm = vp.astype(np.float32), vm.astype(np.float32)
            step = float(vp[c]) - float(vm[c])
            lp = _loss(layer.with_params(**{name: vp.reshape(arr.shape)}), x, r)
            lm = _loss(layer.with_params(**{name: vm.reshape(arr.shape)}), x, r)
            num[j] = (lp - lm) / step
        errs[name] = float(relative_error(np.asarray(grads[name]).reshape(-1)[coords], num).max())
    return errs


def check_input_gradient(net: nn.Network, x: np.ndarray, target: int, head: str = "probability",
                         h: float = 1e-3, coords=None) -> float:
    """Max relative error between ``nn.input_gradient`` and central differences of o_t or f_t."""
    x = np.asarray(x, dtype=np.float64)
    g = nn.input_gradient(net, x, target, head)

    def value(z):
        o = nn.forward(net, z)
        return o[target] if head == "logit" else nn.softmax(o)[target]

    flat = x.reshape(-1)
    coords = np.arange(flat.size) if coords is None else np.asarray(coords)
    num = np.empty(len(coords))
    for j, c in enumerate(coords):
        xp, xm = flat.copy(), flat.copy()
        xp[c] += h
        xm[c] -= h
        num[j] = (value(xp.reshape(x.shape)) - value(xm.reshape(x.shape))) / (2 * h)
    return float(relative_error(g.reshape(-1)[coords], num).max())


def kink_free_input(shape, rng, margin: float = 0.05) -> np.ndarray:
    """Random values bounded away from zero and from each other, so ReLU and max-pool stay differentiable under +-h."""
    n = int(np.prod(shape))
    grid = (np.arange(n) - n / 2 + 0.5) * 2 * margin
    grid = np.where(np.abs(grid) < margin, np.sign(grid + 1e-12) * margin, grid)
    return rng.permutation(grid).reshape(shape) + rng.uniform(-0.1, 0.1) * margin
