"""Datasets: MNIST IDX ingestion and synthetic generators.

All inputs are float32 arrays scaled to [0, 1]; labels are int64 class
indices. Inputs for a dataset share one per-sample shape.
"""

from __future__ import annotations

import hashlib
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801


class DatasetFormatError(ValueError):
    """Raised for malformed dataset files."""


@dataclass(frozen=True)
class LabeledDataset:
    inputs: np.ndarray
    labels: np.ndarray
    num_classes: int
    split: str = "train"

    def __post_init__(self):
        inputs = np.ascontiguousarray(self.inputs, dtype=np.float32)
        labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if inputs.ndim < 2:
            raise ValueError("inputs must have a leading sample axis")
        if len(inputs) != len(labels):
            raise ValueError(
                f"{len(inputs)} inputs but {len(labels)} labels"
            )
        if len(labels) and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise ValueError(f"labels must lie in [0, {self.num_classes})")
        if self.split not in ("train", "test"):
            raise ValueError(f"unknown split {self.split!r}")
        inputs.flags.writeable = False
        labels.flags.writeable = False
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def sample_shape(self) -> tuple[int, ...]:
        return tuple(self.inputs.shape[1:])

    def subset(self, indices) -> "LabeledDataset":
        indices = np.asarray(indices, dtype=np.int64)
        return LabeledDataset(
            self.inputs[indices], self.labels[indices], self.num_classes, self.split
        )

    def with_inputs(self, inputs: np.ndarray) -> "LabeledDataset":
        return LabeledDataset(inputs, self.labels, self.num_classes, self.split)

    def reshaped(self, sample_shape) -> "LabeledDataset":
        return self.with_inputs(self.inputs.reshape((len(self),) + tuple(sample_shape)))

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(np.asarray(self.inputs.shape, dtype="<i8").tobytes())
        h.update(self.inputs.astype("<f4").tobytes())
        h.update(self.labels.astype("<i8").tobytes())
        h.update(str(self.num_classes).encode())
        return h.hexdigest()


def stratified_subset(data: LabeledDataset, fraction: float, seed) -> np.ndarray:
    """Indices of a class-stratified random subset, sorted ascending."""
    if not 0 < fraction <= 1:
        raise ValueError("fraction must lie in (0, 1]")
    if fraction == 1:
        return np.arange(len(data))
    rng = np.random.default_rng(seed)
    picked = []
    for c in range(data.num_classes):
        idx = np.flatnonzero(data.labels == c)
        n = int(round(fraction * len(idx)))
        picked.append(rng.choice(idx, size=n, replace=False))
    return np.sort(np.concatenate(picked))


# ---------------------------------------------------------------------------
# MNIST
# ---------------------------------------------------------------------------

_MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


def _read_idx(path: Path, magic: int, ndim: int) -> np.ndarray:
    raw = path.read_bytes()
    if len(raw) < 4 + 4 * ndim:
        raise DatasetFormatError(f"{path}: truncated header ({len(raw)} bytes)")
    (found,) = struct.unpack(">I", raw[:4])
    if found != magic:
        # first differing byte of the big-endian magic
        expected = struct.pack(">I", magic)
        offset = next(i for i in range(4) if raw[i] != expected[i])
        raise DatasetFormatError(
            f"{path}: bad magic 0x{found:08x} (expected 0x{magic:08x}), "
            f"first mismatch at byte offset {offset}"
        )
    dims = struct.unpack(f">{ndim}I", raw[4 : 4 + 4 * ndim])
    header = 4 + 4 * ndim
    expected_len = header + int(np.prod(dims))
    if len(raw) < expected_len:
        raise DatasetFormatError(
            f"{path}: truncated payload, {len(raw)} bytes but header implies {expected_len}"
        )
    return np.frombuffer(raw, dtype=np.uint8, count=expected_len - header, offset=header).reshape(dims)


def _find(directory: Path, name: str) -> Path:
    for candidate in (name, name.replace("-idx", ".idx")):
        if (directory / candidate).exists():
            return directory / candidate
    raise FileNotFoundError(f"{name} not found in {directory}")


def load_mnist(path, flatten: bool = True) -> tuple[LabeledDataset, LabeledDataset]:
    """Load the four standard MNIST IDX files from ``path``.

    Pixel bytes are divided by 255, so 255 maps to exactly 1.0. With
    ``flatten`` the samples are 784-vectors, otherwise (1, 28, 28) images.
    """
    directory = Path(path)
    out = []
    for split, (img_name, lbl_name) in _MNIST_FILES.items():
        images = _read_idx(_find(directory, img_name), IMAGES_MAGIC, 3)
        labels = _read_idx(_find(directory, lbl_name), LABELS_MAGIC, 1)
        if len(images) != len(labels):
            raise DatasetFormatError(
                f"{split}: {len(images)} images but {len(labels)} labels"
            )
        x = images.astype(np.float32) / np.float32(255.0)
        x = x.reshape(len(x), -1) if flatten else x[:, None, :, :]
        out.append(LabeledDataset(x, labels.astype(np.int64), 10, split))
    return out[0], out[1]


def default_mnist_path() -> Path:
    return Path(os.environ.get("MNIST_DIR", "/root/data/mnist"))


# ---------------------------------------------------------------------------
# Synthetic data
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of a synthetic classification task.

    ``planted_evidence`` draws images on a ``grid`` x ``grid`` canvas. Class
    ``c`` always lights its own primary block; the two classes in
    ``shared_classes`` additionally light ``shared_block`` with probability
    ``p_on``. Everything else is background noise.
    """

    kind: str = "planted_evidence"
    num_classes: int = 5
    train_per_class: int = 400
    test_per_class: int = 200
    grid: int = 16
    block_size: int = 2
    shared_classes: tuple[int, int] = (0, 1)
    p_on: float = 0.8
    noise_std: float = 0.15
    seed: int = 0
    primary_blocks: tuple | None = None
    shared_block: tuple[int, int] | None = None

    def __post_init__(self):
        if self.kind not in ("planted_evidence", "blobs", "cancellation_pair"):
            raise ValueError(f"unknown synthetic kind {self.kind!r}")
        if not 0 < self.p_on < 1:
            raise ValueError("p_on must lie in (0, 1)")
        if self.num_classes < 2:
            raise ValueError("need at least two classes")

    def block_origins(self) -> tuple[list[tuple[int, int]], tuple[int, int]]:
        """Top-left corners of the primary blocks and of the shared block."""
        b = self.block_size
        if self.primary_blocks is not None:
            primary = [tuple(o) for o in self.primary_blocks]
        else:
            per_row = self.grid // (2 * b)
            primary = [
                (2 * b * (c // per_row) + 1, 2 * b * (c % per_row) + 1)
                for c in range(self.num_classes)
            ]
        shared = tuple(self.shared_block) if self.shared_block is not None else (
            self.grid - b - 1,
            self.grid - b - 1,
        )
        return primary, shared

    def block_indices(self) -> tuple[list[np.ndarray], np.ndarray]:
        """Flat pixel indices of each primary block and of the shared block."""
        primary, shared = self.block_origins()
        b, g = self.block_size, self.grid

        def flat(origin):
            r, c = origin
            if r < 0 or c < 0 or r + b > g or c + b > g:
                raise ValueError(f"block at {origin} leaves the {g}x{g} grid")
            rr, cc = np.meshgrid(np.arange(r, r + b), np.arange(c, c + b), indexing="ij")
            return (rr * g + cc).ravel()

        prim = [flat(o) for o in primary]
        shared_idx = flat(shared)
        seen = set()
        for idx in prim + [shared_idx]:
            if seen & set(idx.tolist()):
                raise ValueError("overlapping primary/shared blocks")
            seen |= set(idx.tolist())
        return prim, shared_idx

    def shared_distribution(self):
        """(gamma, p, alpha) of the shared block w.r.t. the first sharing class."""
        from .theory import SharedFeatureDistribution

        gamma = 1.0 / self.num_classes
        p = 2.0 * self.p_on / self.num_classes
        return SharedFeatureDistribution(gamma=gamma, p=p, alpha=0.5, C=self.num_classes)


def _planted(spec: SyntheticSpec, per_class: int, rng: np.random.Generator, split: str):
    prim, shared = spec.block_indices()
    n_feat = spec.grid * spec.grid
    labels = np.repeat(np.arange(spec.num_classes), per_class)
    n = len(labels)
    x = np.abs(rng.normal(0.0, spec.noise_std, size=(n, n_feat)))
    for c, idx in enumerate(prim):
        rows = np.flatnonzero(labels == c)
        x[np.ix_(rows, idx)] = 1.0 - np.abs(rng.normal(0.0, spec.noise_std, size=(len(rows), len(idx))))
    active = np.isin(labels, spec.shared_classes) & (rng.random(n) < spec.p_on)
    rows = np.flatnonzero(active)
    x[np.ix_(rows, shared)] = 1.0 - np.abs(rng.normal(0.0, spec.noise_std, size=(len(rows), len(shared))))
    x = np.clip(x, 0.0, 1.0)
    order = rng.permutation(n)
    return LabeledDataset(x[order], labels[order], spec.num_classes, split), active[order]


def _blobs(spec: SyntheticSpec, per_class: int, rng: np.random.Generator, split: str, centers):
    labels = np.repeat(np.arange(spec.num_classes), per_class)
    x = centers[labels] + rng.normal(0.0, spec.noise_std, size=(len(labels), centers.shape[1]))
    x = np.clip(x, 0.0, 1.0)
    order = rng.permutation(len(labels))
    return LabeledDataset(x[order], labels[order], spec.num_classes, split)


def _cancellation(per_class: int, rng: np.random.Generator, split: str):
    # label = 1 iff (x1 - x2)^2 exceeds its median-ish threshold
    n = 2 * per_class
    x = rng.random((4 * n, 2))
    score = (x[:, 0] - x[:, 1]) ** 2
    y = (score > 1.0 / 12.0).astype(np.int64)
    pos = np.flatnonzero(y == 1)[:per_class]
    neg = np.flatnonzero(y == 0)[:per_class]
    keep = np.sort(np.concatenate([pos, neg]))
    return LabeledDataset(x[keep], y[keep], 2, split)


def generate_synthetic(spec: SyntheticSpec, return_shared_mask: bool = False):
    """Build deterministic (train, test) splits for ``spec``."""
    root = np.random.SeedSequence([spec.seed, 0x5EED])
    train_rng, test_rng, aux_rng = (np.random.default_rng(s) for s in root.spawn(3))
    if spec.kind == "planted_evidence":
        train, m_train = _planted(spec, spec.train_per_class, train_rng, "train")
        test, m_test = _planted(spec, spec.test_per_class, test_rng, "test")
        if return_shared_mask:
            return train, test, m_train, m_test
        return train, test
    if spec.kind == "blobs":
        centers = aux_rng.random((spec.num_classes, spec.grid * spec.grid))
        return (
            _blobs(spec, spec.train_per_class, train_rng, "train", centers),
            _blobs(spec, spec.test_per_class, test_rng, "test", centers),
        )
    return _cancellation(spec.train_per_class, train_rng, "train"), _cancellation(
        spec.test_per_class, test_rng, "test"
    )
