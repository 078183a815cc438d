"""Exact oracles for the two sign-issue results.

* Shared secondary evidence: for a binary label y and a binary shared
  feature S2, occluding S2 in the competing class raises I(S2; y).
* Weak positive contributors: a feature that raises the target logit, but
  by less than it raises the other logits on average, lowers the softmax
  probability of the target.

Entropies use log base C (the class count) and the 0 * log 0 = 0 convention.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np


class ParameterRangeError(ValueError):
    pass


@dataclass(frozen=True)
class SharedFeatureDistribution:
    """P(y=1)=gamma, P(S2=1)=p, P(y=1 | S2=1)=alpha, log base C."""

    gamma: float
    p: float
    alpha: float
    C: int = 2

    def __post_init__(self):
        if not 0 < self.gamma < 1:
            raise ParameterRangeError(f"gamma={self.gamma} outside (0, 1)")
        if not 0 < self.p < 1:
            raise ParameterRangeError(f"p={self.p} outside (0, 1)")
        if not 0 <= self.alpha <= 1:
            raise ParameterRangeError(f"alpha={self.alpha} outside [0, 1]")
        if self.C < 2:
            raise ParameterRangeError("C must be at least 2")
        tol = 1e-12
        if self.gamma - self.alpha * self.p < -tol:
            raise ParameterRangeError("gamma - alpha*p < 0: joint table would be negative")
        if 1 - self.gamma - self.p + self.alpha * self.p < -tol:
            raise ParameterRangeError("1 - gamma - p + alpha*p < 0: joint table would be negative")

    @property
    def delta(self) -> float:
        return self.p - self.alpha * self.p


@dataclass(frozen=True)
class JointTable:
    """P(y=a, S2=b) in the order (1,1), (1,0), (0,1), (0,0)."""

    y1_s1: float
    y1_s0: float
    y0_s1: float
    y0_s0: float

    def __post_init__(self):
        vals = self.as_array()
        if np.any(vals < 0):
            raise ParameterRangeError("joint table has negative entries")
        if abs(vals.sum() - 1.0) > 1e-12:
            raise ParameterRangeError(f"joint table sums to {vals.sum()!r}")

    def as_array(self) -> np.ndarray:
        return np.array([self.y1_s1, self.y1_s0, self.y0_s1, self.y0_s0], dtype=np.float64)

    def as_matrix(self) -> np.ndarray:
        """2x2 matrix indexed [y, s] with y, s in {0, 1}."""
        return np.array([[self.y0_s0, self.y0_s1], [self.y1_s0, self.y1_s1]], dtype=np.float64)


def _clip(v: float) -> float:
    # rounding can leave -1e-17 where the exact value is zero
    return 0.0 if abs(v) < 1e-15 else v


def joint_table(d: SharedFeatureDistribution, manipulated: bool = False) -> JointTable:
    g, p, a = d.gamma, d.p, d.alpha
    if not manipulated:
        return JointTable(_clip(a * p), _clip(g - a * p), _clip((1 - a) * p), _clip(1 - g - p + a * p))
    return JointTable(_clip(a * p), _clip(g - a * p), 0.0, _clip(1 - g))


def _xlogx(x, base):
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros_like(x)
    nz = x > 0
    out[nz] = x[nz] * np.log(x[nz]) / math.log(base)
    return out


def entropy(probs, base: float) -> float:
    return float(-_xlogx(probs, base).sum())


def label_entropy(t: JointTable, C: int) -> float:
    m = t.as_matrix()
    return entropy(m.sum(axis=1), C)


def conditional_entropy(t: JointTable, C: int) -> float:
    """H(y | S2) = -sum P(y, s) log P(y | s)."""
    m = t.as_matrix()
    ps = m.sum(axis=0)
    total = 0.0
    for y, s in itertools.product(range(2), range(2)):
        if m[y, s] > 0:
            total -= m[y, s] * math.log(m[y, s] / ps[s]) / math.log(C)
    return total


def mutual_info(t: JointTable, C: int) -> float:
    """I(S2; y) = H(y) - H(y | S2), clamped at zero against rounding."""
    return max(label_entropy(t, C) - conditional_entropy(t, C), 0.0)


def mutual_info_kl(t: JointTable, C: int) -> float:
    """I(S2; y) as sum P(y,s) log(P(y,s) / (P(y) P(s))); an independent route."""
    m = t.as_matrix()
    py, ps = m.sum(axis=1), m.sum(axis=0)
    total = 0.0
    for y, s in itertools.product(range(2), range(2)):
        if m[y, s] > 0:
            total += m[y, s] * math.log(m[y, s] / (py[y] * ps[s])) / math.log(C)
    return total


def theorem1_check(d: SharedFeatureDistribution) -> dict:
    """Compare I(S2; y) before and after occluding S2 in the competing class.

    ``gap_exact`` is H(y|S2) - H~(y|S2); ``gap_taylor`` is the first-order
    approximation delta * log_C((1-p)/(1-gamma)) of the non-ideal terms.
    """
    if not d.p > d.gamma:
        raise ParameterRangeError(
            f"requires p > gamma (shared features span more than one class); got p={d.p}, gamma={d.gamma}"
        )
    t, tt = joint_table(d, False), joint_table(d, True)
    i0, i1 = mutual_info(t, d.C), mutual_info(tt, d.C)
    gap_exact = conditional_entropy(t, d.C) - conditional_entropy(tt, d.C)
    gap_taylor = d.delta * math.log((1 - d.p) / (1 - d.gamma)) / math.log(d.C)
    return {
        "I": float(i0),
        "I_tilde": float(i1),
        "gap_exact": float(gap_exact),
        "gap_taylor": float(gap_taylor),
        "holds": bool(i1 > i0),
    }


def ideal_terms(d: SharedFeatureDistribution) -> float:
    """-(alpha p log_C alpha + (1-alpha) p log_C(1-alpha)), the Taylor-free part of the gap."""
    a, p = d.alpha, d.p
    return -float(_xlogx(a, d.C) * p + _xlogx(1 - a, d.C) * p)


def theorem1_grid(gammas, ps_above: bool = True, alphas=(), classes=(2,), ps=None):
    """Evaluate ``theorem1_check`` on every valid grid point with p > gamma.

    With ``ps`` left as None the p axis runs from gamma + 0.05 to 0.9 in
    steps of 0.05. Invalid joint tables are skipped.
    """
    rows = []
    for C in classes:
        for g in gammas:
            p_axis = ps if ps is not None else np.round(np.arange(g + 0.05, 0.9 + 1e-9, 0.05), 10)
            for p in p_axis:
                if ps_above and not p > g:
                    continue
                for a in alphas:
                    try:
                        d = SharedFeatureDistribution(float(g), float(p), float(a), int(C))
                    except ParameterRangeError:
                        continue
                    res = theorem1_check(d)
                    rows.append({"gamma": d.gamma, "p": d.p, "alpha": d.alpha, "C": d.C, **res})
    return rows


# ---------------------------------------------------------------------------
# Weak positive contributors
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LogitAttribution:
    """Context logits o(N without i), logit attributions of feature i, and target y."""

    context_logits: tuple
    xi: tuple
    target: int

    def __post_init__(self):
        ctx = np.asarray(self.context_logits, dtype=np.float64)
        xi = np.asarray(self.xi, dtype=np.float64)
        if ctx.shape != xi.shape or ctx.ndim != 1:
            raise ValueError("context_logits and xi must be vectors of equal length")
        if len(ctx) < 2:
            raise ValueError("need at least two classes")
        if not (np.all(np.isfinite(ctx)) and np.all(np.isfinite(xi))):
            raise ValueError("non-finite entries")
        if not 0 <= self.target < len(ctx):
            raise ValueError("target out of range")

    @property
    def C(self) -> int:
        return len(self.context_logits)


def _softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def wpc_condition(a: LogitAttribution) -> dict:
    ctx = np.asarray(a.context_logits, dtype=np.float64)
    xi = np.asarray(a.xi, dtype=np.float64)
    y = a.target
    others = np.arange(a.C) != y
    # f_{y*}(N\i) / (1 - f_y(N\i)) == softmax over the non-target context logits
    w = _softmax(ctx[others])
    expectation = float(np.sum(w * np.exp(xi[others])))
    return {
        "is_positive": bool(xi[y] > 0),
        # relative slack keeps the equal-xi boundary case from passing on rounding noise
        "is_weak": bool(math.exp(xi[y]) < expectation * (1 - 1e-12)),
        "expectation": expectation,
    }


def theorem2_check(a: LogitAttribution) -> dict:
    ctx = np.asarray(a.context_logits, dtype=np.float64)
    xi = np.asarray(a.xi, dtype=np.float64)
    f_without = float(_softmax(ctx)[a.target])
    f_with = float(_softmax(ctx + xi)[a.target])
    sign = int(np.sign(f_with - f_without))
    cond = wpc_condition(a)
    is_wpc = cond["is_positive"] and cond["is_weak"]
    return {
        "f_with": f_with,
        "f_without": f_without,
        "attribution_sign": sign,
        "consistent": (not is_wpc) or sign < 0,
        "is_wpc": is_wpc,
    }


def wpc_fuzz(n: int = 100_000, seed: int = 0, classes=range(2, 11)) -> dict:
    """Sample ``n`` weak-positive-contributor instances and count sign violations.

    Context logits are uniform in [-5, 5] and logit attributions uniform in
    [-3, 3]; draws are rejected until the WPC condition holds. Everything is
    vectorized per class count, so the check is exact and fast.
    """
    rng = np.random.default_rng(seed)
    classes = list(classes)
    counts = np.bincount(rng.integers(0, len(classes), size=n), minlength=len(classes))
    violations = 0
    accepted = 0
    draws = 0
    for C, need in zip(classes, counts):
        got = 0
        while got < need:
            m = max(4 * int(need - got), 1024)
            ctx = rng.uniform(-5, 5, size=(m, C))
            xi = rng.uniform(-3, 3, size=(m, C))
            y = rng.integers(0, C, size=m)
            draws += m
            rows = np.arange(m)
            mask = np.ones((m, C), dtype=bool)
            mask[rows, y] = False
            ctx_o = ctx[mask].reshape(m, C - 1)
            xi_o = xi[mask].reshape(m, C - 1)
            expectation = np.sum(_softmax(ctx_o) * np.exp(xi_o), axis=1)
            xi_y = xi[rows, y]
            wpc = (xi_y > 0) & (np.exp(xi_y) < expectation)
            sel = np.flatnonzero(wpc)[: need - got]
            f_without = _softmax(ctx[sel])[np.arange(len(sel)), y[sel]]
            f_with = _softmax(ctx[sel] + xi[sel])[np.arange(len(sel)), y[sel]]
            violations += int(np.sum(~(f_with < f_without)))
            got += len(sel)
        accepted += got
    return {"instances": accepted, "violations": violations, "draws": draws, "seed": seed}
