"""Multi-view datasets: container, binary file format, synthetic generators.

On-disk layout (little-endian):
    magic "MVDS", u32 version=1, u32 n_views, u32 n_samples, u8 has_labels,
    u32 dim per view, then per view row-major f32 data, then u32 labels.
Data is f32 on disk and f64 in memory.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractError, DomainError, FormatError

MAGIC = b"MVDS"
VERSION = 1


@dataclass
class MultiViewBatch:
    """Aligned per-modality data matrices plus optional integer labels."""

    views: list[np.ndarray]
    labels: np.ndarray | None = None

    def __post_init__(self):
        if not self.views:
            raise ContractError("MultiViewBatch: at least one view required")
        n = self.views[0].shape[0]
        views = []
        for v in self.views:
            arr = np.asarray(v, dtype=np.float64)
            if arr.ndim != 2 or arr.shape[0] != n:
                raise ContractError("MultiViewBatch: views must be (n, dim) with a shared n")
            views.append(arr)
        self.views = views
        if self.labels is not None:
            lab = np.asarray(self.labels, dtype=np.int64)
            if lab.shape != (n,):
                raise ContractError("MultiViewBatch: labels must be a vector of length n")
            if lab.size and lab.min() < 0:
                raise ContractError("MultiViewBatch: labels must be non-negative")
            self.labels = lab

    @property
    def n_samples(self) -> int:
        return self.views[0].shape[0]

    @property
    def n_views(self) -> int:
        return len(self.views)

    @property
    def dims(self) -> list[int]:
        return [v.shape[1] for v in self.views]

    def subset(self, idx: np.ndarray) -> "MultiViewBatch":
        return MultiViewBatch(
            views=[v[idx] for v in self.views],
            labels=None if self.labels is None else self.labels[idx],
        )


@dataclass
class SyntheticSpec:
    """Shared-label dataset: orthogonal class prototypes per view, a fixed
    per-view linear style map, and per-sample background noise."""

    n_classes: int
    n_samples: int
    dims: list[int]
    style_noise: float = 0.0
    background_noise: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.n_classes < 1 or self.n_samples < 1:
            raise ContractError("SyntheticSpec: n_classes and n_samples must be >= 1")
        if any(d < self.n_classes for d in self.dims):
            raise ContractError("SyntheticSpec: every view dim must be >= n_classes")
        if self.style_noise < 0 or self.background_noise < 0:
            raise ContractError("SyntheticSpec: noise levels must be >= 0")


PROTOTYPE_SCALE = 3.0

# class prototypes and style maps come from a fixed generator, so datasets
# produced with different seeds share the same class structure (only the
# label order and background noise differ); train/test pairs can therefore
# be generated with different seeds
STRUCTURE_SEED = 1805


def generate_synthetic(spec: SyntheticSpec) -> MultiViewBatch:
    """Deterministic per seed. Labels cycle through classes before a seeded
    shuffle, so the label histogram is identical across seeds."""
    structure = np.random.default_rng(STRUCTURE_SEED)
    rng = np.random.default_rng(spec.seed)
    labels = np.arange(spec.n_samples) % spec.n_classes
    rng.shuffle(labels)
    views = []
    for dim in spec.dims:
        basis, _ = np.linalg.qr(structure.normal(size=(dim, dim)))
        prototypes = PROTOTYPE_SCALE * basis[: spec.n_classes]
        style = np.eye(dim) + spec.style_noise * structure.normal(size=(dim, dim))
        clean = prototypes[labels] @ style.T
        noise = spec.background_noise * rng.normal(size=(spec.n_samples, dim))
        views.append(clean + noise)
    return MultiViewBatch(views=views, labels=labels)


def binarize(batch: MultiViewBatch, threshold: float) -> MultiViewBatch:
    """Threshold values in [0, 1] to {0, 1}; labels pass through."""
    for v in batch.views:
        if v.min() < 0.0 or v.max() > 1.0:
            raise DomainError("binarize: values must lie in [0, 1]")
    views = [(v >= threshold).astype(np.float64) for v in batch.views]
    return MultiViewBatch(views=views, labels=batch.labels)


def one_hot_labels(batch: MultiViewBatch, n_classes: int | None = None) -> np.ndarray:
    """Companion one-hot view built from the labels (rows sum to 1)."""
    if batch.labels is None:
        raise ContractError("one_hot_labels: batch has no labels")
    c = int(batch.labels.max()) + 1 if n_classes is None else n_classes
    out = np.zeros((batch.n_samples, c))
    out[np.arange(batch.n_samples), batch.labels] = 1.0
    return out


def with_one_hot_label_view(batch: MultiViewBatch, n_classes: int | None = None) -> MultiViewBatch:
    """Append the one-hot label view as an extra modality."""
    return MultiViewBatch(
        views=list(batch.views) + [one_hot_labels(batch, n_classes)],
        labels=batch.labels,
    )


def from_image_arrays(arrays: list[np.ndarray],
                      labels: np.ndarray | None = None) -> MultiViewBatch:
    """Flatten per-view image stacks (n, h, w) into a batch, scaling uint8
    inputs to [0, 1]. Fetching image datasets is out of scope; this converts
    arrays the caller already has."""
    views = []
    for arr in arrays:
        arr = np.asarray(arr)
        if arr.ndim < 2:
            raise ContractError("from_image_arrays: each view needs at least 2 dims")
        flat = arr.reshape(arr.shape[0], -1).astype(np.float64)
        if np.issubdtype(np.asarray(arr).dtype, np.integer):
            flat = flat / 255.0
        views.append(flat)
    return MultiViewBatch(views=views, labels=labels)


def write_dataset(path: str | Path, batch: MultiViewBatch) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IIIB", VERSION, batch.n_views, batch.n_samples,
                             1 if batch.labels is not None else 0))
        for dim in batch.dims:
            fh.write(struct.pack("<I", dim))
        for v in batch.views:
            fh.write(v.astype("<f4").tobytes(order="C"))
        if batch.labels is not None:
            fh.write(batch.labels.astype("<u4").tobytes())


def _read_exact(fh, n: int, what: str) -> bytes:
    offset = fh.tell()
    buf = fh.read(n)
    if len(buf) != n:
        raise FormatError(
            f"truncated dataset while reading {what} at byte {offset}: "
            f"expected {n} bytes, got {len(buf)}"
        )
    return buf


def read_dataset(path: str | Path) -> MultiViewBatch:
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4, "magic")
        if magic != MAGIC:
            raise FormatError(f"bad magic {magic!r} at byte 0: expected {MAGIC!r}")
        version, n_views, n_samples, has_labels = struct.unpack(
            "<IIIB", _read_exact(fh, 13, "header")
        )
        if version != VERSION:
            raise FormatError(f"unsupported dataset version {version} at byte 4")
        if n_views == 0:
            raise FormatError("dataset declares 0 views (byte 8)")
        if n_samples == 0:
            raise FormatError("dataset declares 0 samples (byte 12)")
        dims = [
            struct.unpack("<I", _read_exact(fh, 4, f"dim of view {i}"))[0]
            for i in range(n_views)
        ]
        views = []
        for i, dim in enumerate(dims):
            raw = _read_exact(fh, 4 * n_samples * dim, f"data of view {i}")
            arr = np.frombuffer(raw, dtype="<f4").reshape(n_samples, dim)
            views.append(arr.astype(np.float64))
        labels = None
        if has_labels:
            raw = _read_exact(fh, 4 * n_samples, "labels")
            labels = np.frombuffer(raw, dtype="<u4").astype(np.int64)
        trailing = fh.read(1)
        if trailing:
            raise FormatError(f"unexpected trailing bytes at byte {fh.tell() - 1}")
    return MultiViewBatch(views=views, labels=labels)
