"""Datasets: seeded Gaussian blobs, IDX files, and private/public splits."""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass
class Dataset:
    features: np.ndarray  # (n, d) float64
    labels: np.ndarray | None  # (n,) int64, or None for unlabelled sets
    n_classes: int
    provenance: str = "synthetic"

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            raise ConfigError(f"features must be 2-D, got shape {self.features.shape}")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (len(self.features),):
                raise ConfigError("labels and features differ in length")
            if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
                raise ConfigError(f"labels must lie in [0, {self.n_classes})")

    def __len__(self) -> int:
        return len(self.features)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        labels = None if self.labels is None else self.labels[idx]
        return Dataset(self.features[idx], labels, self.n_classes, self.provenance)


def gen_blobs(n: int, n_classes: int, dim: int, spread: float = 1.0, seed=0,
              center_scale: float = 2.0) -> Dataset:
    """Balanced isotropic Gaussian clusters.

    Centers are drawn from ``N(0, center_scale^2 I)``; each point is its
    cluster center plus ``N(0, spread^2 I)`` noise.
    """
    if n_classes < 2 or n < n_classes:
        raise ConfigError(f"need n >= n_classes >= 2, got n={n}, n_classes={n_classes}")
    if dim < 2:
        raise ConfigError(f"need dim >= 2, got {dim}")
    if spread < 0 or center_scale <= 0:
        raise ConfigError("spread must be >= 0 and center_scale > 0")
    rng = np.random.default_rng(seed)
    centers = rng.normal(0.0, center_scale, size=(n_classes, dim))
    labels = rng.permutation(np.arange(n) % n_classes)
    x = centers[labels] + spread * rng.standard_normal((n, dim))
    return Dataset(x, labels, n_classes, "synthetic")


# -- IDX ---------------------------------------------------------------------

def _read_header(buf: bytes, magic: int, n_dims: int, path) -> tuple[int, ...]:
    need = 4 * (1 + n_dims)
    if len(buf) < need:
        raise FormatError(f"{path}: truncated header ({len(buf)} bytes)")
    got = struct.unpack(">I", buf[:4])[0]
    if got != magic:
        raise FormatError(f"{path}: bad magic 0x{got:08x}, expected 0x{magic:08x}")
    return struct.unpack(f">{n_dims}I", buf[4:need])


def load_idx(images_path, labels_path, n_classes: int = 10) -> Dataset:
    """Read an IDX image/label file pair; pixels are scaled to [0, 1]."""
    images_path, labels_path = Path(images_path), Path(labels_path)
    ibuf, lbuf = images_path.read_bytes(), labels_path.read_bytes()
    count, rows, cols = _read_header(ibuf, IDX_IMAGES_MAGIC, 3, images_path)
    (lcount,) = _read_header(lbuf, IDX_LABELS_MAGIC, 1, labels_path)
    if count != lcount:
        raise FormatError(f"{count} images but {lcount} labels")
    size = count * rows * cols
    if len(ibuf) - 16 < size:
        raise FormatError(f"{images_path}: truncated pixel data")
    if len(lbuf) - 8 < count:
        raise FormatError(f"{labels_path}: truncated label data")
    pixels = np.frombuffer(ibuf, dtype=np.uint8, count=size, offset=16)
    labels = np.frombuffer(lbuf, dtype=np.uint8, count=count, offset=8).astype(np.int64)
    if count and labels.max() >= n_classes:
        n_classes = int(labels.max()) + 1
    features = pixels.reshape(count, rows * cols).astype(np.float64) / 255.0
    return Dataset(features, labels, n_classes, "idx")


def write_idx(data: Dataset, images_path, labels_path, shape: tuple[int, int] | None = None,
              rescale: bool = False) -> None:
    """Write ``data`` as an IDX pair (pixels quantized to bytes).

    Features must lie in [0, 1] unless ``rescale`` min-max scales them first.
    ``shape`` is (rows, cols); it defaults to ``(1, dim)``.
    """
    if data.labels is None:
        raise ConfigError("cannot write an unlabelled dataset to IDX")
    x = data.features
    if rescale:
        lo, hi = x.min(), x.max()
        x = (x - lo) / (hi - lo) if hi > lo else np.zeros_like(x)
    elif x.size and (x.min() < 0.0 or x.max() > 1.0):
        raise ConfigError("IDX export needs features in [0, 1]; pass rescale=True")
    rows, cols = shape if shape is not None else (1, data.dim)
    if rows * cols != data.dim:
        raise ConfigError(f"shape {rows}x{cols} does not match feature width {data.dim}")
    if data.labels.size and data.labels.max() > 255:
        raise ConfigError("IDX labels are single bytes")
    pixels = np.rint(x * 255.0).astype(np.uint8)
    n = len(data)
    Path(images_path).write_bytes(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols) + pixels.tobytes())
    Path(labels_path).write_bytes(struct.pack(">II", IDX_LABELS_MAGIC, n)
                                  + data.labels.astype(np.uint8).tobytes())


# -- splitting -------------------------------------------------------------------

@dataclass(frozen=True)
class SplitSpec:
    private_fraction: float = 0.5
    n_pub: int = 1000
    strip_public_labels: bool = True
    seed: int = 0
    allow_overlap: bool = False


def split_indices(n: int, spec: SplitSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Seeded (private, public, held-out) index sets.

    Without ``allow_overlap`` the three sets partition ``range(n)``. With it,
    the public set is drawn from all ``n`` rows and may share rows with the
    private set; held-out rows are those in neither.
    """
    if not 0.0 <= spec.private_fraction <= 1.0:
        raise ConfigError("private_fraction must lie in [0, 1]", key="private_fraction")
    n_priv = int(round(spec.private_fraction * n))
    if spec.n_pub < 0:
        raise ConfigError("n_pub must be >= 0", key="n_pub")
    rng = np.random.default_rng(spec.seed)
    perm = rng.permutation(n)
    priv = np.sort(perm[:n_priv])
    if spec.allow_overlap:
        if spec.n_pub > n:
            raise ConfigError(f"n_pub={spec.n_pub} exceeds dataset size {n}", key="n_pub")
        pub = np.sort(rng.permutation(n)[:spec.n_pub])
        rest = np.setdiff1d(np.arange(n), np.union1d(priv, pub))
    else:
        if n_priv + spec.n_pub > n:
            raise ConfigError(
                f"private ({n_priv}) + public ({spec.n_pub}) rows exceed dataset size {n}",
                key="n_pub")
        pub = np.sort(perm[n_priv:n_priv + spec.n_pub])
        rest = np.sort(perm[n_priv + spec.n_pub:])
        if np.intersect1d(priv, pub).size:
            raise AssertionError("private and public splits overlap")
    return priv, pub, rest


def split(data: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset]:
    priv, pub, _ = split_indices(len(data), spec)
    public = data.subset(pub)
    if spec.strip_public_labels:
        public = replace(public, labels=None)
    return data.subset(priv), public


def split_with_holdout(data: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset, Dataset]:
    """Like :func:`split`, plus the remaining rows as a labelled test set."""
    priv, pub, rest = split_indices(len(data), spec)
    public = data.subset(pub)
    if spec.strip_public_labels:
        public = replace(public, labels=None)
    return data.subset(priv), public, data.subset(rest)


def standardize(reference: Dataset, *others: Dataset) -> list[Dataset]:
    """Zero-mean/unit-variance per feature using ``reference`` statistics."""
    mu = reference.features.mean(axis=0)
    sd = reference.features.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    return [replace(d, features=(d.features - mu) / sd) for d in (reference, *others)]
