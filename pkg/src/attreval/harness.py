"""Run manifests, dataset specifiers and small parsing helpers shared by the CLI.

A manifest records every input of a run (configs, seeds, dataset hashes,
checkpoint fingerprint) plus the files it wrote, so the run can be replayed
from the manifest alone.
"""

from __future__ import annotations

import hashlib
import json
import platform
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, nn
from .data import LabeledDataset, SyntheticSpec, default_mnist_path, generate_synthetic, load_mnist

MANIFEST_VERSION = 1

SYNTHETIC_KINDS = {
    "planted": "planted_evidence",
    "planted_evidence": "planted_evidence",
    "blobs": "blobs",
    "cancellation": "cancellation_pair",
    "cancellation_pair": "cancellation_pair",
}


class HarnessError(Exception):
    category = "error"
    exit_code = 1


class UsageError(HarnessError):
    category = "usage"
    exit_code = 2


class InputError(HarnessError):
    category = "input"
    exit_code = 3


class HashMismatchError(HarnessError):
    category = "hash-mismatch"
    exit_code = 4


class CheckFailedError(HarnessError):
    category = "check-failed"
    exit_code = 5


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------


def parse_range(text: str) -> list[float]:
    """``a:b:step`` (inclusive of b up to rounding), or a comma list."""
    text = text.strip()
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise UsageError(f"range {text!r} must look like start:stop:step")
        a, b, s = (float(p) for p in parts)
        if s <= 0 or b < a:
            raise UsageError(f"range {text!r} needs step > 0 and stop >= start")
        n = int(np.floor((b - a) / s + 1e-9)) + 1
        return [round(a + i * s, 10) for i in range(n)]
    try:
        return [float(p) for p in text.split(",") if p.strip()]
    except ValueError as exc:
        raise UsageError(f"cannot parse {text!r} as numbers") from exc


def parse_int_range(text: str) -> list[int]:
    if ":" in text and text.count(":") == 1:
        a, b = text.split(":")
        return list(range(int(a), int(b) + 1))
    return [int(v) for v in parse_range(text)]


# ---------------------------------------------------------------------------
# Datasets
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DatasetRef:
    """Parsed ``--dataset`` value: ``synthetic:<kind>[:key=val,...]`` or ``mnist[:path]``."""

    source: str
    synthetic: SyntheticSpec | None = None
    path: str | None = None

    @classmethod
    def parse(cls, text: str) -> "DatasetRef":
        head, _, rest = text.partition(":")
        if head == "mnist":
            return cls("mnist", path=rest or str(default_mnist_path()))
        if head != "synthetic":
            raise UsageError(f"unknown dataset {text!r}; use synthetic:<kind> or mnist[:path]")
        kind, _, opts = rest.partition(":")
        if kind not in SYNTHETIC_KINDS:
            raise UsageError(f"unknown synthetic kind {kind!r}; choose from {sorted(SYNTHETIC_KINDS)}")
        kw: dict = {"kind": SYNTHETIC_KINDS[kind]}
        fields = SyntheticSpec.__dataclass_fields__
        # commas inside [...] belong to list values
        for item in filter(None, re.split(r",(?=[A-Za-z_]+=)", opts)):
            key, _, val = item.partition("=")
            if key not in fields or key == "kind":
                raise UsageError(f"unknown synthetic option {key!r}")
            kw[key] = json.loads(val)
            if isinstance(kw[key], list):
                kw[key] = tuple(tuple(v) if isinstance(v, list) else v for v in kw[key])
        try:
            return cls("synthetic", synthetic=SyntheticSpec(**kw))
        except ValueError as exc:
            raise UsageError(str(exc)) from exc

    def to_dict(self) -> dict:
        if self.source == "mnist":
            return {"source": "mnist", "path": self.path}
        return {"source": "synthetic", "spec": asdict(self.synthetic)}

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetRef":
        if d["source"] == "mnist":
            return cls("mnist", path=d["path"])
        spec = dict(d["spec"])
        for key in ("shared_classes", "shared_block"):
            if spec.get(key) is not None:
                spec[key] = tuple(spec[key])
        if spec.get("primary_blocks") is not None:
            spec["primary_blocks"] = tuple(tuple(b) for b in spec["primary_blocks"])
        return cls("synthetic", synthetic=SyntheticSpec(**spec))

    def load(self) -> tuple[LabeledDataset, LabeledDataset]:
        if self.source == "mnist":
            try:
                return load_mnist(self.path)
            except FileNotFoundError as exc:
                raise InputError(f"MNIST files not found under {self.path}: {exc}") from exc
        return generate_synthetic(self.synthetic)


def dataset_hashes(train: LabeledDataset, test: LabeledDataset) -> dict:
    return {"train": train.content_hash(), "test": test.content_hash()}


# ---------------------------------------------------------------------------
# Manifests
# ---------------------------------------------------------------------------


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def versions() -> dict:
    return {"attreval": __version__, "numpy": np.__version__, "python": platform.python_version()}


@dataclass
class RunManifest:
    command: str
    dataset: dict
    dataset_hash: dict
    config: dict
    seeds: dict = field(default_factory=dict)
    model: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)  # relative file name -> sha256
    versions: dict = field(default_factory=versions)
    manifest_version: int = MANIFEST_VERSION

    def record_output(self, directory, name: str) -> None:
        self.outputs[name] = file_sha256(Path(directory) / name)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "RunManifest":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise InputError(f"manifest is not valid JSON: {exc}") from exc
        if d.get("manifest_version") != MANIFEST_VERSION:
            raise InputError(f"unsupported manifest version {d.get('manifest_version')!r}")
        return cls(**d)

    def write(self, directory) -> Path:
        path = Path(directory) / "manifest.json"
        path.write_text(self.to_json())
        return path

    @classmethod
    def read(cls, path) -> "RunManifest":
        path = Path(path)
        if path.is_dir():
            path = path / "manifest.json"
        if not path.exists():
            raise InputError(f"no manifest at {path}")
        return cls.from_json(path.read_text())

    def check_dataset(self, train: LabeledDataset, test: LabeledDataset) -> None:
        got = dataset_hashes(train, test)
        if got != self.dataset_hash:
            raise HashMismatchError(
                f"dataset content differs from the one recorded in the manifest "
                f"(train {got['train'][:12]} vs {self.dataset_hash.get('train', '')[:12]})"
            )

    def verify_outputs(self, directory) -> list[str]:
        """Names of recorded outputs whose current content differs."""
        bad = []
        for name, digest in sorted(self.outputs.items()):
            p = Path(directory) / name
            if not p.exists() or file_sha256(p) != digest:
                bad.append(name)
        return bad


def build_model(arch: str, sample_shape, num_classes: int, hidden=(256,), seed: int = 0) -> nn.Network:
    if arch == "mlp":
        return nn.mlp(int(np.prod(sample_shape)), tuple(hidden), num_classes, seed=seed)
    if arch == "cnn":
        if len(sample_shape) != 3:
            raise UsageError("the cnn architecture needs (channels, height, width) inputs")
        try:
            return nn.small_cnn(tuple(sample_shape), n_classes=num_classes, seed=seed)
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
    raise UsageError(f"unknown architecture {arch!r}")


def as_image_data(train: LabeledDataset, test: LabeledDataset, side: int):
    shape = (1, side, side)
    return train.reshaped(shape), test.reshaped(shape)
