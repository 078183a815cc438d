"""Gradient-based attribution methods.

Every explainer maps (net, x, target) to a signed map with x's shape.
Randomized explainers draw from a generator seeded by (config seed, sample
id), so a sample's map does not depend on which batch it was computed in.
Gradients are taken of the softmax output f_y by default, or of the logit
o_y with ``head="logit"``.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .nn import Network, input_gradients

KINDS = ("VG", "SG", "IG", "GxI", "EG", "SIG", "Random")
EXPLAIN_CHUNK = 256


@dataclass(frozen=True)
class Baseline:
    """Reference input modelling feature absence.

    kind: "constant" (every feature = value), "dataset_mean" (per-feature
    mean of a reference dataset), or "training_samples" (EG's distribution).
    """

    kind: str = "constant"
    value: float = 0.0

    def __post_init__(self):
        if self.kind not in ("constant", "dataset_mean", "training_samples"):
            raise ValueError(f"unknown baseline kind {self.kind!r}")


@dataclass(frozen=True)
class ExplainerConfig:
    kind: str = "IG"
    k: int = 32
    sigma: float = 0.15
    baseline: Baseline = field(default_factory=Baseline)
    seed: int = 0
    head: str = "probability"
    # IG/SIG path rule: "inclusive" sums s=0..k and divides by k; "right" sums s=1..k
    rule: str = "inclusive"
    # EG: "sampled" = k baseline draws x one uniform path point each; "nested" = k draws x (k+1)-point IG
    eg_mode: str = "sampled"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown explainer {self.kind!r}")
        if self.k < 1:
            raise ValueError("k must be positive")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        if self.kind in ("SG", "SIG") and not self.sigma > 0:
            raise ValueError(f"{self.kind} requires sigma > 0")
        if self.kind in ("IG", "GxI", "SIG") and self.baseline.kind == "training_samples":
            raise ValueError(f"{self.kind} needs a constant or dataset-mean baseline")
        if self.head not in ("logit", "probability"):
            raise ValueError(f"unknown head {self.head!r}")
        if self.rule not in ("inclusive", "right"):
            raise ValueError(f"unknown path rule {self.rule!r}")
        if self.eg_mode not in ("sampled", "nested"):
            raise ValueError(f"unknown EG mode {self.eg_mode!r}")

    @property
    def name(self) -> str:
        return self.kind.lower()

    def with_(self, **kw) -> "ExplainerConfig":
        return replace(self, **kw)


@dataclass(frozen=True)
class AttributionMap:
    values: np.ndarray
    target: int
    explainer_id: str
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not np.all(np.isfinite(self.values)):
            raise ValueError("attribution contains non-finite values")


def _rng(seed, sample_id) -> np.random.Generator:
    return np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, int(sample_id)])


def _sample_ids(n, sample_ids):
    if sample_ids is None:
        return np.arange(n)
    ids = np.asarray(sample_ids, dtype=np.int64)
    if ids.shape != (n,):
        raise ValueError("need one sample id per input")
    return ids


def resolve_baseline(cfg: ExplainerConfig, shape, reference=None) -> np.ndarray:
    """Turn the configured baseline into a concrete tensor of ``shape``."""
    if cfg.baseline.kind == "constant":
        return np.full(shape, cfg.baseline.value, dtype=np.float64)
    if cfg.baseline.kind == "dataset_mean":
        if reference is None:
            raise ValueError("dataset_mean baseline needs reference data")
        mean = np.asarray(reference, dtype=np.float64).mean(axis=0)
        if mean.shape != tuple(shape):
            raise ValueError(f"baseline shape {mean.shape} does not match input shape {tuple(shape)}")
        return mean
    raise ValueError("training_samples baselines are only meaningful for EG")


def _grads(net, pts, targets, head, counter):
    counter[0] += 1
    return input_gradients(net, pts, targets, head)


def _path_steps(cfg: ExplainerConfig) -> np.ndarray:
    start = 0 if cfg.rule == "inclusive" else 1
    return np.arange(start, cfg.k + 1) / cfg.k


# -- batched cores: x is (n, *shape), targets (n,) ------------------------


def vg_batch(net, x, targets, cfg, counter):
    return _grads(net, x, targets, cfg.head, counter)


def sg_batch(net, x, targets, cfg, counter, ids):
    total = np.zeros(x.shape)
    noise = np.stack([_rng(cfg.seed, i).normal(0.0, cfg.sigma, size=(cfg.k,) + x.shape[1:]) for i in ids], axis=1)
    for j in range(cfg.k):
        total += _grads(net, x + noise[j], targets, cfg.head, counter)
    return total / cfg.k


def ig_batch(net, x, targets, cfg, counter, baseline, noise_ids=None):
    diff = x - baseline
    total = np.zeros(x.shape)
    steps = _path_steps(cfg)
    noise = None
    if noise_ids is not None:
        noise = np.stack(
            [_rng(cfg.seed, i).normal(0.0, cfg.sigma, size=(len(steps),) + x.shape[1:]) for i in noise_ids], axis=1
        )
    for j, a in enumerate(steps):
        pts = baseline + a * diff
        if noise is not None:
            pts = pts + noise[j]
        total += _grads(net, pts, targets, cfg.head, counter)
    return diff * total / cfg.k


def gxi_batch(net, x, targets, cfg, counter):
    return x * _grads(net, x, targets, cfg.head, counter)


def eg_batch(net, x, targets, cfg, counter, pool, ids):
    pool = np.asarray(pool)
    if len(pool) == 0:
        raise ValueError("EG needs a non-empty baseline pool")
    if pool.shape[1:] != x.shape[1:]:
        raise ValueError("baseline pool shape does not match inputs")
    draws = [_rng(cfg.seed, i) for i in ids]
    picks = np.array([r.integers(0, len(pool), size=cfg.k) for r in draws])  # (n, k)
    total = np.zeros(x.shape)
    if cfg.eg_mode == "sampled":
        alphas = np.array([r.random(cfg.k) for r in draws])  # (n, k)
        for j in range(cfg.k):
            base = pool[picks[:, j]].astype(np.float64)
            a = alphas[:, j].reshape((-1,) + (1,) * (x.ndim - 1))
            diff = x - base
            total += diff * _grads(net, base + a * diff, targets, cfg.head, counter)
        return total / cfg.k
    inner = cfg.with_(kind="IG", baseline=Baseline())
    for j in range(cfg.k):
        total += ig_batch(net, x, targets, inner, counter, pool[picks[:, j]].astype(np.float64))
    return total / cfg.k


def random_batch(x, seed, ids):
    return np.stack([_rng(seed, i).uniform(-1.0, 1.0, size=x.shape[1:]) for i in ids])


def explain_batch(
    net: Network | None,
    x,
    targets,
    cfg: ExplainerConfig,
    sample_ids=None,
    reference=None,
    return_queries: bool = False,
):
    """Attributions for a batch of inputs.

    ``reference`` supplies the data behind dataset-mean baselines and EG's
    baseline pool. With ``return_queries`` the number of batched gradient
    queries issued per sample is returned as well.
    """
    x = np.asarray(x, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.int64)
    ids = _sample_ids(len(x), sample_ids)
    if targets.shape != (len(x),):
        raise ValueError("need one target per input")
    if cfg.kind in ("IG", "SIG"):
        reference = resolve_baseline(cfg, x.shape[1:], reference)
    parts, queries = [], 0
    for s in range(0, max(len(x), 1), EXPLAIN_CHUNK):
        out, q = _explain_chunk(net, x[s : s + EXPLAIN_CHUNK], targets[s : s + EXPLAIN_CHUNK], cfg,
                                ids[s : s + EXPLAIN_CHUNK], reference)
        parts.append(out)
        queries = queries or q
    out = np.concatenate(parts) if parts else np.zeros(x.shape)
    return (out, queries) if return_queries else out


def _explain_chunk(net, x, targets, cfg, ids, reference):
    counter = [0]
    if len(x) == 0:
        return np.zeros(x.shape), 0
    if cfg.kind == "Random":
        out = random_batch(x, cfg.seed, ids)
    elif cfg.kind == "VG":
        out = vg_batch(net, x, targets, cfg, counter)
    elif cfg.kind == "SG":
        out = sg_batch(net, x, targets, cfg, counter, ids)
    elif cfg.kind == "GxI":
        out = gxi_batch(net, x, targets, cfg, counter)
    elif cfg.kind in ("IG", "SIG"):
        out = ig_batch(net, x, targets, cfg, counter, reference, noise_ids=ids if cfg.kind == "SIG" else None)
    else:
        if reference is None:
            raise ValueError("EG needs a baseline pool (reference)")
        out = eg_batch(net, x, targets, cfg, counter, reference, ids)
    if not np.all(np.isfinite(out)):
        raise FloatingPointError(f"{cfg.kind} produced non-finite attributions")
    return out, counter[0]


def _single(net, x, y, cfg, sample_id=0, reference=None) -> AttributionMap:
    x = np.asarray(x, dtype=np.float64)
    if net is not None and not 0 <= y < net.num_classes:
        raise ValueError(f"target {y} out of range")
    vals, queries = explain_batch(net, x[None], [y], cfg, [sample_id], reference, return_queries=True)
    meta = {"head": cfg.head, "k": cfg.k, "sigma": cfg.sigma, "seed": cfg.seed, "queries": queries,
            "baseline": (cfg.baseline.kind, cfg.baseline.value), "rule": cfg.rule}
    return AttributionMap(vals[0], int(y), cfg.name, meta)


def explain_vg(net, x, y, cfg=ExplainerConfig("VG", k=1)) -> AttributionMap:
    return _single(net, x, y, cfg.with_(kind="VG"))


def explain_sg(net, x, y, cfg=ExplainerConfig("SG"), sample_id=0) -> AttributionMap:
    return _single(net, x, y, cfg.with_(kind="SG"), sample_id)


def explain_ig(net, x, y, cfg=ExplainerConfig("IG"), reference=None) -> AttributionMap:
    return _single(net, x, y, cfg.with_(kind="IG"), reference=reference)


def explain_gxi(net, x, y, cfg=ExplainerConfig("GxI", k=1)) -> AttributionMap:
    return _single(net, x, y, cfg.with_(kind="GxI"))


def explain_eg(net, x, y, cfg=ExplainerConfig("EG", baseline=Baseline("training_samples")), baseline_pool=None,
               sample_id=0) -> AttributionMap:
    return _single(net, x, y, cfg.with_(kind="EG"), sample_id, reference=baseline_pool)


def explain_sig(net, x, y, cfg=ExplainerConfig("SIG"), sample_id=0, reference=None) -> AttributionMap:
    return _single(net, x, y, cfg.with_(kind="SIG"), sample_id, reference)


def explain_random(x, y, seed=0, sample_id=0) -> AttributionMap:
    return _single(None, x, y, ExplainerConfig("Random", seed=seed), sample_id)


def explain(net, x, y, cfg: ExplainerConfig, sample_id=0, reference=None) -> AttributionMap:
    """Dispatch on ``cfg.kind``."""
    return _single(net, x, y, cfg, sample_id, reference)


def default_config(kind: str, **kw) -> ExplainerConfig:
    """Shared-budget defaults: k=32 queries, sigma=0.15, zero baseline."""
    kind = {k.lower(): k for k in KINDS}.get(kind.lower(), kind)
    base = Baseline("training_samples") if kind == "EG" else Baseline()
    k = 1 if kind in ("VG", "GxI", "Random") else 32
    params = {"k": k, "baseline": base}
    params.update(kw)
    return ExplainerConfig(kind, **params)


# ---------------------------------------------------------------------------
# Attribution dump
# ---------------------------------------------------------------------------

ATT_MAGIC = b"AEVATT1"


class AttributionFormatError(ValueError):
    pass


def dump_attribution(att: AttributionMap, explicand_id: int) -> bytes:
    """magic, u64 explicand id, u16-prefixed explainer id, u32 target, u32 ndim, u32 dims, <f4 values."""
    buf = io.BytesIO()
    name = att.explainer_id.encode("utf-8")
    vals = np.asarray(att.values, dtype="<f4")
    buf.write(ATT_MAGIC)
    buf.write(struct.pack("<Q", explicand_id))
    buf.write(struct.pack("<H", len(name)))
    buf.write(name)
    buf.write(struct.pack("<II", att.target, vals.ndim))
    buf.write(struct.pack(f"<{vals.ndim}I", *vals.shape))
    buf.write(vals.tobytes(order="C"))
    return buf.getvalue()


def load_attribution(raw: bytes, offset: int = 0) -> tuple[int, AttributionMap, int]:
    """Parse one record; returns (explicand id, map, offset after the record)."""

    def take(n):
        nonlocal offset
        if offset + n > len(raw):
            raise AttributionFormatError(f"truncated attribution record at byte {offset}")
        out = raw[offset : offset + n]
        offset += n
        return out

    if take(len(ATT_MAGIC)) != ATT_MAGIC:
        raise AttributionFormatError("bad attribution magic or version")
    (sid,) = struct.unpack("<Q", take(8))
    (nlen,) = struct.unpack("<H", take(2))
    name = take(nlen).decode("utf-8")
    target, ndim = struct.unpack("<II", take(8))
    shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
    count = int(np.prod(shape)) if shape else 1
    vals = np.frombuffer(take(4 * count), dtype="<f4").reshape(shape).astype(np.float32)
    return sid, AttributionMap(vals, target, name), offset


def load_attributions(raw: bytes) -> list[tuple[int, AttributionMap]]:
    out, offset = [], 0
    while offset < len(raw):
        sid, att, offset = load_attribution(raw, offset)
        out.append((sid, att))
    return out
