"""Retraining-based evaluation schemes and the area metric between curves.

A scheme is an occlusion order plus an update protocol. For every ratio and
repetition the explained network's attributions guide the occlusion of a
training subset and of the test set, the model is updated on the
manipulated training data, and its accuracy on the manipulated test set is
recorded.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import nn
from .data import LabeledDataset, stratified_subset
from .explainers import Baseline, ExplainerConfig, explain_batch
from .manipulate import ORDERS, Replacement, apply_plan, build_plan, fill_values

UPDATES = ("retrain_full", "finetune_full", "finetune_head")
KEEP_ORDERS = ("lowest_first", "irrelevant_first")
REMOVE_ORDERS = ("highest_first", "relevant_first")
DEFAULT_RATIOS = tuple(round(0.1 * i, 1) for i in range(1, 10))
TEST_ID_OFFSET = 1 << 40
TARGETS = ("predicted", "label")
DEFAULT_FRACTIONS = {"retrain_full": 1.0, "finetune_full": 0.2, "finetune_head": 0.1}


class SchemeError(ValueError):
    pass


class UntrainedNetworkError(SchemeError):
    pass


@dataclass(frozen=True)
class SchemeConfig:
    """Occlusion order x update protocol x ratio grid x repetitions.

    ``finetune_cfg`` is the training configuration of the update step; for
    ``retrain_full`` it is the full training setting applied to a freshly
    initialized copy of the network. ``train_fraction=None`` picks 1.0, 0.2
    or 0.1 by update kind. ``replacement=None`` derives the occlusion value
    from the explainer's baseline. Dropping "test" from ``explain_splits``
    evaluates on the unmanipulated test set. ``target`` picks the explained
    class: the network's prediction (default) or the true label, which lets
    label information leak into the manipulated test inputs.
    """

    name: str
    order: str
    update: str
    ratios: tuple = DEFAULT_RATIOS
    repetitions: int = 5
    train_fraction: float | None = None
    finetune_cfg: nn.TrainConfig = field(default_factory=nn.TrainConfig)
    explain_splits: tuple = ("train", "test")
    replacement: Replacement | None = None
    seed: int = 0
    target: str = "predicted"

    def __post_init__(self):
        if self.target not in TARGETS:
            raise SchemeError(f"unknown attribution target {self.target!r}")
        if self.order not in ORDERS:
            raise SchemeError(f"unknown order {self.order!r}")
        if self.update not in UPDATES:
            raise SchemeError(f"unknown update {self.update!r}")
        ratios = tuple(float(r) for r in self.ratios)
        if not ratios:
            raise SchemeError("ratio grid is empty")
        if any(not 0 <= r <= 1 for r in ratios) or any(b <= a for a, b in zip(ratios, ratios[1:])):
            raise SchemeError("ratios must be strictly ascending within [0, 1]")
        object.__setattr__(self, "ratios", ratios)
        splits = tuple(self.explain_splits)
        if "train" not in splits or not set(splits) <= {"train", "test"}:
            raise SchemeError("explain_splits must contain 'train' and optionally 'test'")
        object.__setattr__(self, "explain_splits", splits)
        if self.repetitions < 1:
            raise SchemeError("repetitions must be positive")
        if self.train_fraction is None:
            object.__setattr__(self, "train_fraction", DEFAULT_FRACTIONS[self.update])
        if not 0 < self.train_fraction <= 1:
            raise SchemeError("train_fraction must lie in (0, 1]")
        scope = "head_only" if self.update == "finetune_head" else "full"
        if self.finetune_cfg.scope != scope:
            object.__setattr__(self, "finetune_cfg", self.finetune_cfg.with_(scope=scope))

    def with_(self, **kw) -> "SchemeConfig":
        return replace(self, **kw)

    @property
    def keeps(self) -> bool:
        return self.order in KEEP_ORDERS


def base_train_config() -> nn.TrainConfig:
    """Small-scale training setting: 30 epochs of plain SGD at lr 0.01."""
    return nn.TrainConfig(epochs=30, optimizer=nn.SGD(0.01), batch_size=64)


def preset(name: str, train_cfg: nn.TrainConfig | None = None, **overrides) -> SchemeConfig:
    """Named schemes: remove/keep x retrain / fine-tune / head-only fine-tune.

    Fine-tuning runs 30 epochs (one warmup epoch, cosine schedule) on 20% of
    the training data; head-only fine-tuning runs 10 epochs on 10%.
    """
    base = train_cfg or base_train_config()
    ft = base.with_(epochs=30, warmup_epochs=1, schedule="cosine", scope="full")
    head = ft.with_(epochs=10, scope="head_only")
    table = {
        "ROAR": ("highest_first", "retrain_full", 1.0, base),
        "KeAR": ("lowest_first", "retrain_full", 1.0, base),
        "RAFT": ("highest_first", "finetune_full", 0.2, ft),
        "KAFT": ("lowest_first", "finetune_full", 0.2, ft),
        "RAFT-C": ("highest_first", "finetune_head", 0.1, head),
        "KAFT-C": ("lowest_first", "finetune_head", 0.1, head),
        "RAFT-C-abs": ("relevant_first", "finetune_head", 0.1, head),
        "KAFT-C-abs": ("irrelevant_first", "finetune_head", 0.1, head),
    }
    if name not in table:
        raise SchemeError(f"unknown preset {name!r}; choose from {sorted(table)}")
    order, update, frac, cfg = table[name]
    return SchemeConfig(name, order, update, train_fraction=frac, finetune_cfg=cfg, **overrides)


PRESETS = ("ROAR", "KeAR", "RAFT", "KAFT", "RAFT-C", "KAFT-C", "RAFT-C-abs", "KAFT-C-abs")


# ---------------------------------------------------------------------------
# Results
# ---------------------------------------------------------------------------


@dataclass
class EvalResult:
    scheme: str
    order: str
    ratios: tuple
    accuracy: dict  # explainer -> (n_ratios, n_reps)
    seeds: tuple  # per repetition
    gradient_updates: dict = field(default_factory=dict)  # explainer -> (n_ratios, n_reps)
    sample_passes: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    @property
    def explainers(self) -> list[str]:
        return list(self.accuracy)

    def mean(self, explainer: str) -> np.ndarray:
        return np.asarray(self.accuracy[explainer]).mean(axis=1)

    def std(self, explainer: str) -> np.ndarray:
        a = np.asarray(self.accuracy[explainer])
        return a.std(axis=1, ddof=1) if a.shape[1] > 1 else np.zeros(len(a))

    def curve(self, explainer: str) -> "DegradationCurve":
        return DegradationCurve(tuple(self.ratios), tuple(self.mean(explainer).tolist()), self.scheme, explainer)

    def merged(self, other: "EvalResult") -> "EvalResult":
        if (self.scheme, tuple(self.ratios), tuple(self.seeds)) != (other.scheme, tuple(other.ratios), tuple(other.seeds)):
            raise SchemeError("can only merge results of one scheme, grid and seed set")
        out = EvalResult(self.scheme, self.order, self.ratios, dict(self.accuracy), self.seeds,
                         dict(self.gradient_updates), dict(self.sample_passes), dict(self.provenance))
        out.accuracy.update(other.accuracy)
        out.gradient_updates.update(other.gradient_updates)
        out.sample_passes.update(other.sample_passes)
        expl = dict(self.provenance.get("explainers", {}))
        expl.update(other.provenance.get("explainers", {}))
        if expl:
            out.provenance["explainers"] = expl
        return out

    # -- persistence ----------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "scheme": self.scheme,
            "order": self.order,
            "ratios": list(self.ratios),
            "seeds": list(self.seeds),
            "accuracy": {k: np.asarray(v).tolist() for k, v in self.accuracy.items()},
            "gradient_updates": {k: np.asarray(v).tolist() for k, v in self.gradient_updates.items()},
            "sample_passes": {k: np.asarray(v).tolist() for k, v in self.sample_passes.items()},
            "provenance": self.provenance,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvalResult":
        return cls(
            d["scheme"],
            d["order"],
            tuple(d["ratios"]),
            {k: np.asarray(v, dtype=np.float64) for k, v in d["accuracy"].items()},
            tuple(d["seeds"]),
            {k: np.asarray(v, dtype=np.int64) for k, v in d.get("gradient_updates", {}).items()},
            {k: np.asarray(v, dtype=np.int64) for k, v in d.get("sample_passes", {}).items()},
            d.get("provenance", {}),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "EvalResult":
        return cls.from_dict(json.loads(text))

    def results_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["scheme", "explainer", "ratio", "repetition", "accuracy", "seed"])
        for name in sorted(self.accuracy):
            acc = np.asarray(self.accuracy[name])
            for i, r in enumerate(self.ratios):
                for j, seed in enumerate(self.seeds):
                    w.writerow([self.scheme, name, repr(float(r)), j, repr(float(acc[i, j])), seed])
        return buf.getvalue()

    def curves_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["scheme", "explainer", "ratio", "mean", "std"])
        for name in sorted(self.accuracy):
            for r, m, s in zip(self.ratios, self.mean(name), self.std(name)):
                w.writerow([self.scheme, name, repr(float(r)), repr(float(m)), repr(float(s))])
        return buf.getvalue()


@dataclass(frozen=True)
class DegradationCurve:
    ratios: tuple
    mean: tuple
    scheme: str = ""
    explainer: str = ""

    def __post_init__(self):
        if len(self.ratios) != len(self.mean):
            raise SchemeError("curve needs one value per ratio")


def read_curves_csv(text: str) -> dict[tuple[str, str], DegradationCurve]:
    rows: dict[tuple[str, str], list] = {}
    for row in csv.DictReader(io.StringIO(text)):
        rows.setdefault((row["scheme"], row["explainer"]), []).append((float(row["ratio"]), float(row["mean"])))
    return {
        key: DegradationCurve(tuple(r for r, _ in pts), tuple(m for _, m in pts), key[0], key[1])
        for key, pts in rows.items()
    }


def delta_acc(keep: DegradationCurve, remove: DegradationCurve) -> float:
    """Trapezoidal area of keep(r) - remove(r) over the shared ratio grid."""
    if tuple(keep.ratios) != tuple(remove.ratios):
        raise SchemeError("degradation curves use different ratio grids")
    r = np.asarray(keep.ratios, dtype=np.float64)
    diff = np.asarray(keep.mean, dtype=np.float64) - np.asarray(remove.mean, dtype=np.float64)
    if len(r) < 2:
        return 0.0
    return float(np.sum(0.5 * (diff[1:] + diff[:-1]) * np.diff(r)))


def delta_acc_per_repetition(keep: EvalResult, remove: EvalResult, explainer: str) -> np.ndarray:
    """Area metric for each repetition, pairing repetition i of both runs."""
    if tuple(keep.ratios) != tuple(remove.ratios):
        raise SchemeError("results use different ratio grids")
    a, b = np.asarray(keep.accuracy[explainer]), np.asarray(remove.accuracy[explainer])
    return np.array([
        delta_acc(DegradationCurve(keep.ratios, tuple(a[:, j])), DegradationCurve(keep.ratios, tuple(b[:, j])))
        for j in range(min(a.shape[1], b.shape[1]))
    ])


# ---------------------------------------------------------------------------
# Running a scheme
# ---------------------------------------------------------------------------


def default_replacement(explainer: ExplainerConfig) -> Replacement:
    """The explainer's own absence value where it has one, else the per-feature mean."""
    if explainer.kind in ("IG", "SIG", "GxI"):
        if explainer.baseline.kind == "constant":
            return Replacement("constant", explainer.baseline.value)
        return Replacement("per_feature_mean")
    return Replacement("per_feature_mean")


def repetition_seeds(scheme: SchemeConfig) -> tuple[int, ...]:
    ss = np.random.SeedSequence([scheme.seed, 0xE7A1])
    return tuple(int(s.generate_state(1, np.uint64)[0]) for s in ss.spawn(scheme.repetitions))


def _rep_streams(rep_seed: int) -> dict[str, int]:
    names = ("subset", "init", "shuffle", "order")
    states = np.random.SeedSequence(rep_seed).generate_state(len(names), np.uint32)
    return {n: int(s) for n, s in zip(names, states)}


def attribution_targets(net, data: LabeledDataset, target: str) -> np.ndarray:
    """Class explained per sample: the network's prediction, or the dataset label."""
    if target == "label":
        return np.asarray(data.labels)
    return net.logits(data.inputs).argmax(axis=1)


class AttributionCache:
    """Attributions on the explained network, computed on demand per sample index."""

    def __init__(self, net, data: LabeledDataset, cfg: ExplainerConfig, id_offset: int = 0, reference=None,
                 target: str = "predicted"):
        self.net, self.data, self.cfg = net, data, cfg
        self.targets = attribution_targets(net, data, target)
        self.id_offset = id_offset
        self.reference = reference
        self.values = np.zeros((len(data),) + data.sample_shape, dtype=np.float64)
        self.done = np.zeros(len(data), dtype=bool)
        self.queries = 0

    def get(self, indices) -> np.ndarray:
        indices = np.asarray(indices, dtype=np.int64)
        todo = np.unique(indices[~self.done[indices]])
        if len(todo):
            vals, q = explain_batch(
                self.net, self.data.inputs[todo], self.targets[todo], self.cfg,
                sample_ids=todo + self.id_offset, reference=self.reference, return_queries=True,
            )
            self.values[todo] = vals
            self.done[todo] = True
            self.queries = self.queries or q
        return self.values[indices]


def _update(net, data, scheme: SchemeConfig, streams):
    cfg = scheme.finetune_cfg.with_(seed=streams["shuffle"])
    if scheme.update == "retrain_full":
        return nn.train(net.reinitialized(streams["init"]), data, cfg)
    return nn.fine_tune(net, data, cfg)


def run_scheme(
    net: nn.Network,
    train: LabeledDataset,
    test: LabeledDataset,
    explainer: ExplainerConfig,
    scheme: SchemeConfig,
    cache: dict | None = None,
) -> EvalResult:
    """Evaluate one explainer under one scheme.

    ``cache`` may be shared between calls with the same network and data so
    attributions are computed only once per explainer.
    """
    chance = 1.0 / net.num_classes
    if nn.accuracy(net, test) <= chance + 0.05:
        raise UntrainedNetworkError("the explained network performs at chance level; train it first")
    name = explainer.name
    order = "random" if explainer.kind == "Random" else scheme.order
    replacement = scheme.replacement or default_replacement(explainer)
    fill = fill_values(replacement, train.inputs, train.sample_shape)
    reference = train.inputs if explainer.kind in ("EG",) or explainer.baseline.kind == "dataset_mean" else None

    cache = {} if cache is None else cache
    key = (name, explainer, scheme.target)
    if key not in cache and order != "random":
        cache[key] = (
            AttributionCache(net, train, explainer, 0, reference, scheme.target),
            AttributionCache(net, test, explainer, TEST_ID_OFFSET, reference, scheme.target),
        )
    seeds = repetition_seeds(scheme)
    n_r, n_k = len(scheme.ratios), scheme.repetitions
    acc = np.zeros((n_r, n_k))
    updates = np.zeros((n_r, n_k), dtype=np.int64)
    passes = np.zeros((n_r, n_k), dtype=np.int64)
    test_ids = np.arange(len(test))
    test_plans: dict = {}
    for j, rep_seed in enumerate(seeds):
        streams = _rep_streams(rep_seed)
        idx = stratified_subset(train, scheme.train_fraction, streams["subset"])
        subset = train.subset(idx)
        if order == "random":
            train_attr = test_attr = None
        else:
            train_cache, test_cache = cache[key]
            train_attr = train_cache.get(idx)
            test_attr = test_cache.get(test_ids)
        for i, ratio in enumerate(scheme.ratios):
            plan = build_plan(train_attr, ratio, order, replacement, seed=streams["order"],
                              sample_ids=idx, sample_shape=train.sample_shape)
            man_train = apply_plan(subset, plan, fill=fill)
            tkey = (ratio, streams["order"] if order == "random" else None)
            if "test" not in scheme.explain_splits:
                test_plans[tkey] = test
            if tkey not in test_plans:
                tplan = build_plan(test_attr, ratio, order, replacement, seed=streams["order"],
                                   sample_ids=test_ids + TEST_ID_OFFSET, sample_shape=test.sample_shape)
                test_plans[tkey] = apply_plan(test, tplan, fill=fill)
            man_test = test_plans[tkey]
            updated, hist = _update(net, man_train, scheme, streams)
            acc[i, j] = nn.accuracy(updated, man_test)
            updates[i, j] = hist.gradient_updates
            passes[i, j] = hist.samples
        if order == "random":
            test_plans.clear()
    provenance = {
        "scheme": scheme_to_dict(scheme),
        "explainers": {name: explainer_to_dict(explainer)},
        "effective_order": order,
        "replacement": replacement.describe(),
        "checkpoint": net.fingerprint(),
        "train_hash": train.content_hash(),
        "test_hash": test.content_hash(),
    }
    return EvalResult(scheme.name, scheme.order, scheme.ratios, {name: acc}, seeds,
                      {name: updates}, {name: passes}, provenance)


def evaluate(net, train, test, explainers, scheme: SchemeConfig, cache=None) -> EvalResult:
    """Run ``scheme`` for several explainers and merge the results."""
    cache = {} if cache is None else cache
    result = None
    for cfg in explainers:
        r = run_scheme(net, train, test, cfg, scheme, cache)
        result = r if result is None else result.merged(r)
    return result


def cost_ratio(cheap: EvalResult, full: EvalResult, explainer: str) -> float:
    """Mean gradient-update count of ``cheap`` relative to ``full``."""
    a = np.asarray(cheap.gradient_updates[explainer], dtype=np.float64).mean()
    b = np.asarray(full.gradient_updates[explainer], dtype=np.float64).mean()
    return float(a / b)


# ---------------------------------------------------------------------------
# Report
# ---------------------------------------------------------------------------


def compare_report(results: list[EvalResult]) -> list[dict]:
    """One row per explainer with curve means, and ΔAcc where both a keep and a remove run exist.

    Rows are sorted by ΔAcc (descending, missing last), then explainer name.
    """
    if not results:
        return []
    grids = {tuple(r.ratios) for r in results}
    if len(grids) > 1:
        raise SchemeError("results use inconsistent ratio grids")
    names = sorted({n for r in results for n in r.accuracy})
    rows = []
    for name in names:
        keep = next((r for r in results if name in r.accuracy and r.order in KEEP_ORDERS), None)
        remove = next((r for r in results if name in r.accuracy and r.order in REMOVE_ORDERS), None)
        row: dict = {"explainer": name}
        for r in results:
            if name in r.accuracy:
                row[f"{r.scheme}_mean"] = [float(v) for v in r.mean(name)]
                row[f"{r.scheme}_std"] = [float(v) for v in r.std(name)]
        if keep is not None and remove is not None:
            row["delta_acc"] = delta_acc(keep.curve(name), remove.curve(name))
            per_rep = delta_acc_per_repetition(keep, remove, name)
            row["delta_acc_std"] = float(per_rep.std(ddof=1)) if len(per_rep) > 1 else 0.0
            row["keep_scheme"], row["remove_scheme"] = keep.scheme, remove.scheme
        else:
            row["delta_acc"] = None
        rows.append(row)
    rows.sort(key=lambda r: (r["delta_acc"] is None, -(r["delta_acc"] or 0.0), r["explainer"]))
    return rows


def format_report(rows: list[dict], ratios) -> str:
    """CSV rendering of ``compare_report`` rows: one line per explainer and scheme."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["explainer", "scheme", *[f"r={r!r}" for r in ratios], "delta_acc", "delta_acc_std"])
    for row in rows:
        schemes = sorted(k[: -len("_mean")] for k in row if k.endswith("_mean"))
        for s in schemes:
            cells = [f"{m!r}±{sd!r}" for m, sd in zip(row[f"{s}_mean"], row[f"{s}_std"])]
            da = "" if row["delta_acc"] is None else repr(row["delta_acc"])
            ds = "" if row["delta_acc"] is None else repr(row["delta_acc_std"])
            w.writerow([row["explainer"], s, *cells, da, ds])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# Config (de)serialization
# ---------------------------------------------------------------------------


def train_config_to_dict(cfg: nn.TrainConfig) -> dict:
    d = asdict(cfg)
    d["optimizer"] = {"kind": type(cfg.optimizer).__name__, **asdict(cfg.optimizer)}
    return d


def train_config_from_dict(d: dict) -> nn.TrainConfig:
    d = dict(d)
    opt = dict(d.pop("optimizer"))
    kind = opt.pop("kind")
    optimizer = nn.SGD(**opt) if kind == "SGD" else nn.Adam(**opt)
    return nn.TrainConfig(optimizer=optimizer, **d)


def scheme_to_dict(s: SchemeConfig) -> dict:
    return {
        "name": s.name,
        "order": s.order,
        "update": s.update,
        "ratios": list(s.ratios),
        "repetitions": s.repetitions,
        "train_fraction": s.train_fraction,
        "finetune_cfg": train_config_to_dict(s.finetune_cfg),
        "explain_splits": list(s.explain_splits),
        "replacement": None if s.replacement is None else asdict(s.replacement),
        "seed": s.seed,
        "target": s.target,
    }


def scheme_from_dict(d: dict) -> SchemeConfig:
    d = dict(d)
    d["ratios"] = tuple(d["ratios"])
    d["explain_splits"] = tuple(d["explain_splits"])
    d["finetune_cfg"] = train_config_from_dict(d["finetune_cfg"])
    d["replacement"] = None if d["replacement"] is None else Replacement(**d["replacement"])
    return SchemeConfig(**d)


def explainer_to_dict(e: ExplainerConfig) -> dict:
    return asdict(e)


def explainer_from_dict(d: dict) -> ExplainerConfig:
    d = dict(d)
    d["baseline"] = Baseline(**d["baseline"])
    return ExplainerConfig(**d)
