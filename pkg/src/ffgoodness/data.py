"""Dataset ingestion: IDX binary files, standardization, subsetting, synthetic data.

The IDX container is big-endian throughout:

    [offset 0]  uint32 magic: 0x0000_0803 for image files (ubyte, 3 dims),
                              0x0000_0801 for label files (ubyte, 1 dim)
    [offset 4]  uint32 per dimension (count, then rows/cols for images)
    [payload]   unsigned bytes, row-major

Gzip-compressed files are accepted transparently (sniffed by the 1f 8b
magic, not the file name). There is deliberately no downloader: paths come
from the caller.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass

import numpy as np

IDX_IMAGES_MAGIC = 2051  # 0x00000803
IDX_LABELS_MAGIC = 2049  # 0x00000801


class DataError(Exception):
    """Dataset files missing, malformed, or mutually inconsistent."""


class IdxFormatError(DataError):
    """IDX parse failure; message names the offending field and byte offset."""


@dataclass
class Dataset:
    """A feature matrix with integer class labels.

    features are float64 (N, D); raw loads hold pixel bytes 0..255 until
    standardize() is applied.
    """

    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    split: str = "train"

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.features.shape[0] == 0:
            raise ValueError("features must be a non-empty (N, D) matrix")
        if self.labels.shape != (self.features.shape[0],):
            raise ValueError("labels length must match the number of feature rows")
        if not np.all(np.isfinite(self.features)):
            raise ValueError("features must be finite")
        if self.labels.min() < 0 or self.labels.max() >= self.num_classes:
            raise ValueError("labels must lie in [0, num_classes)")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


def _read_bytes(path) -> bytes:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:2] == b"\x1f\x8b":
        blob = gzip.decompress(blob)
    return blob


def _parse_idx(path, expected_magic: int, expected_ndim: int):
    blob = _read_bytes(path)
    if len(blob) < 4:
        raise IdxFormatError(f"{path}: truncated header, {len(blob)} bytes before the magic at offset 0")
    (magic,) = struct.unpack(">I", blob[:4])
    if magic != expected_magic:
        raise IdxFormatError(f"{path}: bad magic {magic} at offset 0, expected {expected_magic}")
    header_end = 4 + 4 * expected_ndim
    if len(blob) < header_end:
        raise IdxFormatError(f"{path}: truncated dimension header at offset 4, "
                             f"need {header_end} bytes, have {len(blob)}")
    dims = struct.unpack(f">{expected_ndim}I", blob[4:header_end])
    payload = np.frombuffer(blob, dtype=np.uint8, offset=header_end)
    expected_items = int(np.prod(dims))
    if payload.size != expected_items:
        raise IdxFormatError(f"{path}: payload holds {payload.size} bytes at offset {header_end}, "
                             f"header promises {expected_items}")
    return dims, payload


def load_idx(images_path, labels_path, split: str = "train",
             num_classes: int | None = None) -> Dataset:
    """Parse an IDX image/label file pair into a raw (unstandardized) Dataset."""
    (n_images, rows, cols), pixels = _parse_idx(images_path, IDX_IMAGES_MAGIC, 3)
    (n_labels,), labels = _parse_idx(labels_path, IDX_LABELS_MAGIC, 1)
    if n_images != n_labels:
        raise IdxFormatError(f"count mismatch: {images_path} has {n_images} images "
                             f"but {labels_path} has {n_labels} labels")
    features = pixels.astype(np.float64).reshape(n_images, rows * cols)
    labels = labels.astype(np.int64)
    if num_classes is None:
        num_classes = int(labels.max()) + 1
    return Dataset(features=features, labels=labels, num_classes=num_classes, split=split)


def write_idx_images(path, images: np.ndarray, rows: int, cols: int) -> None:
    """Write an (N, rows*cols) uint8 array as an IDX image file."""
    images = np.ascontiguousarray(images, dtype=np.uint8)
    n = images.shape[0]
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols))
        f.write(images.tobytes())


def write_idx_labels(path, labels: np.ndarray) -> None:
    """Write a label vector as an IDX label file."""
    labels = np.ascontiguousarray(labels, dtype=np.uint8)
    with open(path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABELS_MAGIC, labels.shape[0]))
        f.write(labels.tobytes())


def standardize(ds: Dataset, stats_from: Dataset | None = None,
                per_pixel: bool = False) -> Dataset:
    """Zero-mean unit-variance features using the statistics of stats_from.

    stats_from defaults to ds itself; the test split should pass the raw
    training split so both share one set of statistics. The default uses a
    single scalar mean/std over all entries; per_pixel switches to one
    mean/std per feature column.
    """
    source = (stats_from or ds).features
    if per_pixel:
        mean = source.mean(axis=0)
        std = source.std(axis=0)
        if np.any(std == 0.0):
            raise ValueError("standardize: zero standard deviation in some feature column")
    else:
        mean = source.mean()
        std = source.std()
        if std == 0.0:
            raise ValueError("standardize: zero standard deviation")
    return Dataset(features=(ds.features - mean) / std, labels=ds.labels,
                   num_classes=ds.num_classes, split=ds.split)


def stratified_subset(ds: Dataset, n: int, rng: np.random.Generator) -> Dataset:
    """Per-class proportional sample of n rows, deterministic given the rng seed.

    Class quotas follow the largest-remainder rule, so proportions are
    preserved within one sample per class.
    """
    if n > ds.n:
        raise ValueError(f"subset size {n} exceeds dataset size {ds.n}")
    if n < ds.num_classes:
        raise ValueError(f"subset size {n} is below the class count {ds.num_classes}")
    counts = np.bincount(ds.labels, minlength=ds.num_classes)
    exact = counts * (n / ds.n)
    quotas = np.floor(exact).astype(int)
    remainder = n - quotas.sum()
    if remainder > 0:
        order = np.argsort(-(exact - quotas), kind="stable")
        quotas[order[:remainder]] += 1
    picked = []
    for cls in range(ds.num_classes):
        members = np.flatnonzero(ds.labels == cls)
        if quotas[cls] > members.size:
            raise ValueError(f"class {cls} has only {members.size} samples, quota is {quotas[cls]}")
        picked.append(rng.choice(members, size=quotas[cls], replace=False))
    idx = rng.permutation(np.concatenate(picked))
    return Dataset(features=ds.features[idx], labels=ds.labels[idx],
                   num_classes=ds.num_classes, split=ds.split)


def synthetic_two_gaussians(n_per_class: int, dim: int, separation: float,
                            rng: np.random.Generator, split: str = "train") -> Dataset:
    """Two unit-variance Gaussian blobs with means +-separation/2 on the first axis."""
    if dim < 2:
        raise ValueError(f"dimension must be >= 2, got {dim}")
    offsets = np.array([-separation / 2.0, separation / 2.0])
    features = rng.standard_normal((2 * n_per_class, dim))
    labels = np.repeat(np.arange(2), n_per_class)
    features[:, 0] += offsets[labels]
    return Dataset(features=features, labels=labels, num_classes=2, split=split)
