"""Dataset ingestion and synthesis.

Readers for the MNIST IDX files and CIFAR-10 binary batches, a CSV reader,
the 1-D sinusoid used for the regression demo, and input normalisation.
Gzipped IDX files (``*.gz``) are read transparently.
"""

from __future__ import annotations

import csv
import enum
import gzip
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import DatasetError
from .tasks import encode_labels

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CIFAR_RECORD = 1 + 3072

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}
CIFAR_FILES = {
    "train": [f"data_batch_{i}.bin" for i in range(1, 6)],
    "test": ["test_batch.bin"],
}
NORMALIZE_MODES = ("none", "unit_norm", "center_scale")


class Source(str, enum.Enum):
    MNIST = "mnist"
    CIFAR10 = "cifar10"
    CSV = "csv"
    SYNTHETIC = "synthetic"


@dataclass(frozen=True)
class RawImageSet:
    pixels: np.ndarray  # (N, D0), bytes scaled to [0, 1]
    labels: np.ndarray  # (N,) int
    source: Source


@dataclass(frozen=True)
class Dataset:
    """Inputs with regression targets (N x C) and stable row identifiers."""

    inputs: np.ndarray
    targets: np.ndarray
    row_ids: np.ndarray = None
    labels: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        x = np.asarray(self.inputs, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        y = np.asarray(self.targets, dtype=float)
        if y.ndim == 1:
            y = y[:, None]
        if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
            raise DatasetError(f"inputs must be a non-empty N x D matrix, got shape {x.shape}")
        if y.shape[0] != x.shape[0]:
            raise DatasetError(f"{x.shape[0]} inputs but {y.shape[0]} targets")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise DatasetError("dataset contains non-finite values")
        ids = np.arange(x.shape[0]) if self.row_ids is None else np.asarray(self.row_ids)
        if ids.shape[0] != x.shape[0]:
            raise DatasetError("row_ids length does not match inputs")
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "targets", y)
        object.__setattr__(self, "row_ids", ids)

    def __len__(self):
        return self.inputs.shape[0]

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        labels = None if self.labels is None else self.labels[idx]
        return Dataset(self.inputs[idx], self.targets[idx], self.row_ids[idx], labels, dict(self.meta))


# ---------------------------------------------------------------------------
# binary readers
# ---------------------------------------------------------------------------


def _read_bytes(path) -> bytes:
    path = Path(path)
    try:
        if path.suffix == ".gz":
            with gzip.open(path, "rb") as fh:
                return fh.read()
        return path.read_bytes()
    except OSError as exc:
        raise DatasetError(f"cannot read {path}: {exc}") from exc


def _resolve(path) -> Path:
    """Accept either the plain or the gzipped name of a file."""
    path = Path(path)
    if path.exists():
        return path
    gz = path.with_name(path.name + ".gz")
    if gz.exists():
        return gz
    raise DatasetError(f"file not found: {path} (or {gz.name})")


def read_idx(path) -> np.ndarray:
    """Parse an IDX file (images or labels) into a uint8 array."""
    buf = _read_bytes(_resolve(path))
    if len(buf) < 8:
        raise DatasetError(f"{path}: truncated IDX header")
    magic, count = struct.unpack(">II", buf[:8])
    if magic == IDX_IMAGES_MAGIC:
        if len(buf) < 16:
            raise DatasetError(f"{path}: truncated IDX header")
        rows, cols = struct.unpack(">II", buf[8:16])
        shape, offset = (count, rows * cols), 16
    elif magic == IDX_LABELS_MAGIC:
        shape, offset = (count,), 8
    else:
        raise DatasetError(f"{path}: bad IDX magic 0x{magic:08x}")
    need = offset + int(np.prod(shape))
    if len(buf) < need:
        raise DatasetError(f"{path}: truncated, expected {need} bytes, found {len(buf)}")
    return np.frombuffer(buf, dtype=np.uint8, count=need - offset, offset=offset).reshape(shape)


def write_idx_images(path, images: np.ndarray) -> None:
    """Write uint8 images of shape (N, rows, cols) as an IDX file (gzip if ``.gz``)."""
    images = np.asarray(images, dtype=np.uint8)
    n, rows, cols = images.shape
    payload = struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols) + images.tobytes()
    _write_bytes(path, payload)


def write_idx_labels(path, labels) -> None:
    labels = np.asarray(labels, dtype=np.uint8)
    _write_bytes(path, struct.pack(">II", IDX_LABELS_MAGIC, labels.size) + labels.tobytes())


def _write_bytes(path, payload: bytes) -> None:
    path = Path(path)
    if path.suffix == ".gz":
        # no name and mtime=0 keep the compressed bytes reproducible
        with open(path, "wb") as raw, gzip.GzipFile(filename="", fileobj=raw, mode="wb", mtime=0) as fh:
            fh.write(payload)
    else:
        path.write_bytes(payload)


def load_mnist_idx(images_path, labels_path, limit: int) -> RawImageSet:
    """First ``limit`` MNIST examples, pixels scaled so byte 255 maps to 1.0."""
    if limit < 1:
        raise DatasetError("limit must be >= 1 (empty dataset requested)")
    images = read_idx(images_path)
    labels = read_idx(labels_path)
    if images.ndim != 2 or labels.ndim != 1:
        raise DatasetError("images/labels files are swapped or malformed")
    if images.shape[0] != labels.shape[0]:
        raise DatasetError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    if limit > images.shape[0]:
        raise DatasetError(f"limit {limit} exceeds the {images.shape[0]} available examples")
    pixels = images[:limit].astype(np.float64) / 255.0
    return RawImageSet(pixels, labels[:limit].astype(np.int64), Source.MNIST)


def load_cifar10_bin(batch_paths: Sequence, limit: int) -> RawImageSet:
    """Read CIFAR-10 binary batches (1 label byte + 3072 channel-major pixels per record)."""
    if limit < 1:
        raise DatasetError("limit must be >= 1 (empty dataset requested)")
    chunks = []
    total = 0
    for path in batch_paths:
        buf = _read_bytes(_resolve(path))
        if len(buf) % CIFAR_RECORD:
            raise DatasetError(f"{path}: size {len(buf)} is not a multiple of {CIFAR_RECORD}")
        recs = np.frombuffer(buf, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
        chunks.append(recs)
        total += recs.shape[0]
        if total >= limit:
            break
    if total < limit:
        raise DatasetError(f"limit {limit} exceeds the {total} available records")
    recs = np.concatenate(chunks)[:limit]
    pixels = recs[:, 1:].astype(np.float64) / 255.0
    return RawImageSet(pixels, recs[:, 0].astype(np.int64), Source.CIFAR10)


def write_cifar10_bin(path, labels, pixels_u8) -> None:
    labels = np.asarray(labels, dtype=np.uint8).reshape(-1, 1)
    pixels_u8 = np.asarray(pixels_u8, dtype=np.uint8).reshape(labels.shape[0], 3072)
    Path(path).write_bytes(np.hstack([labels, pixels_u8]).tobytes())


def load_csv(path, limit: Optional[int] = None) -> RawImageSet:
    """CSV with header ``x0,...,xD,label``; feature values are used as given."""
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = [r for r in reader if r]
    except (OSError, StopIteration) as exc:
        raise DatasetError(f"cannot read CSV {path}: {exc}") from exc
    if not header or header[-1].strip() != "label":
        raise DatasetError(f"{path}: last CSV column must be 'label'")
    if limit is not None:
        if limit < 1:
            raise DatasetError("limit must be >= 1 (empty dataset requested)")
        if limit > len(rows):
            raise DatasetError(f"limit {limit} exceeds the {len(rows)} CSV rows")
        rows = rows[:limit]
    if not rows:
        raise DatasetError(f"{path}: no data rows")
    try:
        arr = np.array([[float(v) for v in r] for r in rows])
    except ValueError as exc:
        raise DatasetError(f"{path}: non-numeric value ({exc})") from exc
    if arr.shape[1] != len(header):
        raise DatasetError(f"{path}: ragged rows")
    return RawImageSet(arr[:, :-1], arr[:, -1].astype(np.int64), Source.CSV)


def load_split(dataset: str, data_dir, split: str, limit: int) -> RawImageSet:
    """Load the first ``limit`` examples of the named split of a dataset directory."""
    dataset = dataset.lower()
    base = Path(data_dir) if data_dir else Path(os.environ.get("NNGP_DATA_DIR", "data"))
    if dataset == "mnist":
        imgs, labs = MNIST_FILES[split]
        for root in (base, base / "mnist"):
            try:
                return load_mnist_idx(_resolve(root / imgs), _resolve(root / labs), limit)
            except DatasetError as exc:
                if "not found" not in str(exc):
                    raise
        raise DatasetError(f"MNIST {split} files not found under {base}")
    if dataset == "cifar10":
        for root in (base, base / "cifar-10-batches-bin", base / "cifar10"):
            paths = [root / f for f in CIFAR_FILES[split]]
            if any(p.exists() for p in paths):
                return load_cifar10_bin([p for p in paths if p.exists()], limit)
        raise DatasetError(f"CIFAR-10 {split} batches not found under {base}")
    if dataset == "csv":
        return load_csv(base / f"{split}.csv", limit)
    raise DatasetError(f"unknown dataset {dataset!r}")


# ---------------------------------------------------------------------------
# synthesis / preprocessing
# ---------------------------------------------------------------------------


def make_sinusoid(n_train: int, x_range=(0.0, 1.0), noise_sd: float = 0.1, seed: int = 0) -> Dataset:
    """Evenly spaced inputs with targets sin(2 pi x) + N(0, noise_sd^2)."""
    if n_train < 1:
        raise DatasetError("n_train must be >= 1")
    x = np.linspace(x_range[0], x_range[1], n_train)
    rng = np.random.default_rng(seed)
    y = np.sin(2 * np.pi * x) + noise_sd * rng.standard_normal(n_train)
    return Dataset(x[:, None], y[:, None], meta={"source": Source.SYNTHETIC.value, "noise_sd": noise_sd})


def normalize_inputs(raw: RawImageSet, mode: str = "unit_norm", num_classes: Optional[int] = None) -> Dataset:
    """Normalise rows and attach 0.9/-0.1 encoded class targets.

    ``unit_norm`` scales each row to Euclidean norm 1.  ``center_scale``
    subtracts each row's mean and rescales it to mean square 1, so that
    ``<x, x> / D0 = 1``.
    """
    x = np.asarray(raw.pixels, dtype=float)
    if x.shape[0] == 0:
        raise DatasetError("cannot normalise an empty set")
    if mode == "none":
        out = x.copy()
    elif mode == "unit_norm":
        norms = np.linalg.norm(x, axis=1)
        if np.any(norms == 0):
            raise DatasetError(f"zero-norm row(s) {np.flatnonzero(norms == 0)[:5].tolist()} under unit_norm")
        out = x / norms[:, None]
    elif mode == "center_scale":
        out = x - x.mean(axis=1, keepdims=True)
        rms = np.sqrt(np.mean(out * out, axis=1))
        if np.any(rms == 0):
            raise DatasetError("constant row(s) cannot be centred and scaled")
        out = out / rms[:, None]
    else:
        raise DatasetError(f"unknown normalisation mode {mode!r}; choose from {NORMALIZE_MODES}")
    labels = np.asarray(raw.labels, dtype=np.int64)
    n_cls = num_classes if num_classes is not None else (10 if raw.source in (Source.MNIST, Source.CIFAR10)
                                                          else int(labels.max()) + 1)
    targets = encode_labels(labels, n_cls).encoded
    return Dataset(out, targets, labels=labels, meta={"source": raw.source.value, "normalize": mode})
