"""Attribution-guided occlusion: rank features, pick a ratio, replace them.

A feature is a scalar for flat inputs and a pixel for (channels, height,
width) inputs; occluding a pixel replaces all of its channels. Rankings are
per sample with ties broken by ascending feature index.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .data import LabeledDataset

ORDERS = ("highest_first", "lowest_first", "relevant_first", "irrelevant_first", "random")
_EPS = 1e-9


@dataclass(frozen=True)
class Replacement:
    """What an occluded feature becomes: a constant, or a dataset mean per feature or per channel."""

    kind: str = "constant"
    value: float = 0.0

    def __post_init__(self):
        if self.kind not in ("constant", "per_feature_mean", "per_channel_mean"):
            raise ValueError(f"unknown replacement {self.kind!r}")

    def describe(self) -> str:
        return f"constant({self.value!r})" if self.kind == "constant" else self.kind


@dataclass(frozen=True)
class ManipulationPlan:
    occluded: np.ndarray  # (n_samples, n_occluded) sorted feature indices
    ratio: float
    order: str
    replacement: Replacement
    sample_shape: tuple
    sample_ids: np.ndarray

    @property
    def feature_count(self) -> int:
        return feature_count(self.sample_shape)

    def to_records(self) -> list[dict]:
        return [
            {
                "sample_id": int(sid),
                "ratio": self.ratio,
                "order": self.order,
                "replacement": self.replacement.describe(),
                "occluded_indices": occ.tolist(),
            }
            for sid, occ in zip(self.sample_ids, self.occluded)
        ]

    def to_json(self) -> str:
        return json.dumps(self.to_records(), separators=(",", ":"))


def feature_count(sample_shape) -> int:
    sample_shape = tuple(sample_shape)
    if len(sample_shape) == 3:
        return sample_shape[1] * sample_shape[2]
    return int(np.prod(sample_shape))


def occlusion_count(ratio: float, n: int) -> int:
    """floor(ratio * n), tolerant of binary rounding such as 0.29 * 100."""
    return int(math.floor(ratio * n + _EPS))


def feature_scores(values: np.ndarray, signed: bool) -> np.ndarray:
    """Per-feature ranking key for a batch of maps (n, *shape) -> (n, features).

    Multi-channel maps sum channels per pixel: signed sums for signed orders,
    absolute sums for magnitude orders.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 4:
        agg = values if signed else np.abs(values)
        return agg.sum(axis=1).reshape(len(values), -1)
    flat = values.reshape(len(values), -1)
    return flat if signed else np.abs(flat)


def _rank_keys(values: np.ndarray, order: str) -> np.ndarray:
    if order == "highest_first":
        return -feature_scores(values, True)
    if order == "lowest_first":
        return feature_scores(values, True)
    if order == "relevant_first":
        return -feature_scores(values, False)
    if order == "irrelevant_first":
        return feature_scores(values, False)
    raise ValueError(f"unknown occlusion order {order!r}")


def rank_features(attr, order: str, seed=None, sample_id: int = 0) -> np.ndarray:
    """Permutation of feature indices, first-to-occlude first."""
    values = np.asarray(getattr(attr, "values", attr), dtype=np.float64)
    if not np.all(np.isfinite(values)):
        raise ValueError("attribution contains non-finite values")
    if order == "random":
        if seed is None:
            raise ValueError("random order requires a seed")
        return _random_ranks(feature_count(values.shape), seed, [sample_id])[0]
    return np.argsort(_rank_keys(values[None], order), axis=1, kind="stable")[0]


def _random_ranks(n_features: int, seed, sample_ids) -> np.ndarray:
    return np.stack(
        [np.random.default_rng([int(seed), int(sid)]).permutation(n_features) for sid in sample_ids]
    )


def build_plan(
    attrs,
    ratio: float,
    order: str,
    replacement: Replacement = Replacement(),
    seed=None,
    sample_ids=None,
    sample_shape=None,
) -> ManipulationPlan:
    """Occlude the first floor(ratio * n) ranked features of every sample.

    ``attrs`` is an (n_samples, *shape) array or a list of AttributionMaps.
    ``order='random'`` ignores the maps and draws a permutation per sample
    from (seed, sample id); pass ``sample_shape`` and no maps to build such
    plans without attributions.
    """
    if not 0 <= ratio <= 1:
        raise ValueError("ratio must lie in [0, 1]")
    if order not in ORDERS:
        raise ValueError(f"unknown occlusion order {order!r}")
    if attrs is not None and not isinstance(attrs, np.ndarray):
        shapes = {np.shape(getattr(a, "values", a)) for a in attrs}
        if len(shapes) > 1:
            raise ValueError(f"attribution maps have inconsistent shapes {sorted(shapes)}")
        attrs = np.stack([np.asarray(getattr(a, "values", a)) for a in attrs])
    if attrs is not None:
        shape = tuple(attrs.shape[1:])
        n_samples = len(attrs)
    else:
        if sample_shape is None or sample_ids is None:
            raise ValueError("need attributions, or sample_shape and sample_ids")
        shape = tuple(sample_shape)
        n_samples = len(sample_ids)
    ids = np.arange(n_samples) if sample_ids is None else np.asarray(sample_ids, dtype=np.int64)
    if ids.shape != (n_samples,):
        raise ValueError("need one sample id per attribution map")
    n = feature_count(shape)
    m = occlusion_count(ratio, n)
    if order == "random":
        if seed is None:
            raise ValueError("random order requires a seed")
        ranks = _random_ranks(n, seed, ids)
    else:
        if not np.all(np.isfinite(attrs)):
            raise ValueError("attribution contains non-finite values")
        ranks = np.argsort(_rank_keys(attrs, order), axis=1, kind="stable")
    occluded = np.sort(ranks[:, :m], axis=1)
    return ManipulationPlan(occluded, float(ratio), order, replacement, shape, ids)


def fill_values(replacement: Replacement, reference: np.ndarray, sample_shape) -> np.ndarray:
    """Replacement tensor of ``sample_shape`` derived from ``reference`` data."""
    sample_shape = tuple(sample_shape)
    if replacement.kind == "constant":
        return np.full(sample_shape, replacement.value, dtype=np.float64)
    ref = np.asarray(reference, dtype=np.float64)
    if replacement.kind == "per_feature_mean":
        return ref.mean(axis=0)
    if len(sample_shape) != 3:
        raise ValueError("per_channel_mean needs (channels, height, width) inputs")
    per_channel = ref.mean(axis=(0, 2, 3))
    return np.broadcast_to(per_channel[:, None, None], sample_shape).copy()


def occlusion_mask(plan: ManipulationPlan) -> np.ndarray:
    mask = np.zeros((len(plan.occluded), plan.feature_count), dtype=bool)
    if plan.occluded.size:
        mask[np.arange(len(plan.occluded))[:, None], plan.occluded] = True
    return mask


def apply_plan(data: LabeledDataset, plan: ManipulationPlan, reference=None, fill=None) -> LabeledDataset:
    """Copy of ``data`` with every planned feature replaced; labels untouched.

    Mean replacements are computed from ``reference`` inputs (default: ``data``)
    unless a precomputed ``fill`` tensor is given.
    """
    if tuple(data.sample_shape) != tuple(plan.sample_shape):
        raise ValueError(f"plan built for shape {plan.sample_shape}, data has {data.sample_shape}")
    if len(plan.occluded) != len(data):
        raise ValueError(f"plan covers {len(plan.occluded)} samples, data has {len(data)}")
    if plan.occluded.size and (plan.occluded.min() < 0 or plan.occluded.max() >= plan.feature_count):
        raise IndexError("occluded feature index out of range")
    if fill is None:
        ref = data.inputs if reference is None else reference
        fill = fill_values(plan.replacement, ref, plan.sample_shape)
    fill = np.asarray(fill, dtype=np.float32)
    mask = occlusion_mask(plan)
    x = np.array(data.inputs, copy=True)
    if len(plan.sample_shape) == 3:
        c = plan.sample_shape[0]
        xr = x.reshape(len(x), c, -1)
        fr = fill.reshape(c, -1)
        mask3 = np.broadcast_to(mask[:, None, :], xr.shape)
        xr[...] = np.where(mask3, fr[None], xr)
    else:
        xf = x.reshape(len(x), -1)
        xf[...] = np.where(mask, fill.reshape(1, -1), xf)
    return data.with_inputs(x)
