"""Dataset loading and batching.

Supported on-disk formats:
  * IDX image/label files (the classic big-endian digit format), plain or
    gzip-compressed.
  * The binary multi-batch format used for 32x32 color images: records of
    one label byte followed by 3072 channel-planar pixel bytes.

Images come out as float64 [N, C, H, W]; grayscale pixels are scaled to
[0, 1], color images are optionally standardized per image.
"""

import gzip
import os
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .errors import DataError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CIFAR_RECORD = 3073
CIFAR_CLASSES = 10

MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}


@dataclass
class Dataset:
    images: np.ndarray  # [N, C, H, W] float64
    labels: np.ndarray  # [N] int64

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise DataError(
                f"{len(self.images)} images but {len(self.labels)} labels"
            )

    def __len__(self):
        return len(self.labels)

    def take(self, indices):
        return Dataset(self.images[indices], self.labels[indices])

    def slice(self, start, stop):
        return Dataset(self.images[start:stop], self.labels[start:stop])


def _read_bytes(path):
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if raw[:2] == b"\x1f\x8b":
        try:
            raw = gzip.decompress(raw)
        except (OSError, EOFError, zlib.error) as exc:
            raise DataError(f"{path}: corrupt gzip stream") from exc
    return raw


def read_idx_images(path):
    """Parse an IDX image file into a uint8 array [N, H, W]."""
    raw = _read_bytes(path)
    if len(raw) < 16:
        raise DataError(f"{path}: truncated idx header")
    magic, n, rows, cols = struct.unpack(">iiii", raw[:16])
    if magic != IDX_IMAGES_MAGIC:
        raise DataError(f"{path}: bad idx image magic 0x{magic & 0xffffffff:08x}")
    if len(raw) != 16 + n * rows * cols:
        raise DataError(
            f"{path}: expected {16 + n * rows * cols} bytes, found {len(raw)}"
        )
    return np.frombuffer(raw, dtype=np.uint8, offset=16).reshape(n, rows, cols)


def read_idx_labels(path):
    """Parse an IDX label file into a uint8 vector [N]."""
    raw = _read_bytes(path)
    if len(raw) < 8:
        raise DataError(f"{path}: truncated idx header")
    magic, n = struct.unpack(">ii", raw[:8])
    if magic != IDX_LABELS_MAGIC:
        raise DataError(f"{path}: bad idx label magic 0x{magic & 0xffffffff:08x}")
    if len(raw) != 8 + n:
        raise DataError(f"{path}: expected {8 + n} bytes, found {len(raw)}")
    return np.frombuffer(raw, dtype=np.uint8, offset=8)


def write_idx_images(path, images):
    images = np.ascontiguousarray(images, dtype=np.uint8)
    if images.ndim != 3:
        raise DataError(f"idx images must be [N, H, W], got {images.shape}")
    with open(path, "wb") as fh:
        fh.write(struct.pack(">iiii", IDX_IMAGES_MAGIC, *images.shape))
        fh.write(images.tobytes())


def write_idx_labels(path, labels):
    labels = np.ascontiguousarray(labels, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">ii", IDX_LABELS_MAGIC, labels.size))
        fh.write(labels.tobytes())


def load_idx_pair(images_path, labels_path):
    """Join an IDX image/label file pair into a grayscale Dataset."""
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if len(images) != len(labels):
        raise DataError(
            f"{images_path} has {len(images)} images but "
            f"{labels_path} has {len(labels)} labels"
        )
    scaled = images.astype(np.float64)[:, None, :, :] / 255.0
    return Dataset(scaled, labels.astype(np.int64))


def _find_idx_file(data_dir, stem):
    for name in (stem, stem + ".gz"):
        path = os.path.join(data_dir, name)
        if os.path.exists(path):
            return path
    raise DataError(f"missing {stem}[.gz] in {data_dir}")


def load_mnist(data_dir):
    """Standard four-file digit layout; returns (train, test) Datasets."""
    train = load_idx_pair(
        _find_idx_file(data_dir, MNIST_FILES["train_images"]),
        _find_idx_file(data_dir, MNIST_FILES["train_labels"]),
    )
    test = load_idx_pair(
        _find_idx_file(data_dir, MNIST_FILES["test_images"]),
        _find_idx_file(data_dir, MNIST_FILES["test_labels"]),
    )
    return train, test


def standardize_images(images):
    """Zero-mean unit-variance per image; blank images become all zeros."""
    flat = images.reshape(len(images), -1)
    mean = flat.mean(axis=1, keepdims=True)
    std = flat.std(axis=1, keepdims=True)
    out = np.where(std > 0.0, (flat - mean) / np.where(std > 0.0, std, 1.0), 0.0)
    return out.reshape(images.shape)


def read_cifar_batch(path):
    raw = _read_bytes(path)
    if len(raw) == 0 or len(raw) % CIFAR_RECORD != 0:
        raise DataError(
            f"{path}: size {len(raw)} is not a multiple of {CIFAR_RECORD}-byte records"
        )
    records = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    labels = records[:, 0]
    if labels.max(initial=0) >= CIFAR_CLASSES:
        raise DataError(f"{path}: label {labels.max()} out of range")
    images = records[:, 1:].reshape(-1, 3, 32, 32)
    return images, labels


def load_cifar10(data_dir, standardize=True):
    """Five training batches plus the test batch; returns (train, test)."""

    def build(paths):
        parts = [read_cifar_batch(p) for p in paths]
        images = np.concatenate([p[0] for p in parts]).astype(np.float64) / 255.0
        labels = np.concatenate([p[1] for p in parts]).astype(np.int64)
        if standardize:
            images = standardize_images(images)
        return Dataset(images, labels)

    train_paths = [
        os.path.join(data_dir, f"data_batch_{i}.bin") for i in range(1, 6)
    ]
    for p in train_paths:
        if not os.path.exists(p):
            raise DataError(f"missing {p}")
    test_path = os.path.join(data_dir, "test_batch.bin")
    if not os.path.exists(test_path):
        raise DataError(f"missing {test_path}")
    return build(train_paths), build([test_path])


def augment_color_images(images, rng):
    """Pad 4 pixels, random 32x32 crop, mirror half the images."""
    n, c, h, w = images.shape
    padded = np.pad(images, ((0, 0), (0, 0), (4, 4), (4, 4)))
    draws = rng.uniform((n, 3))
    off_y = np.minimum((draws[:, 0] * 9).astype(np.int64), 8)
    off_x = np.minimum((draws[:, 1] * 9).astype(np.int64), 8)
    flip = draws[:, 2] < 0.5
    out = np.empty_like(images)
    for i in range(n):
        crop = padded[i, :, off_y[i] : off_y[i] + h, off_x[i] : off_x[i] + w]
        out[i] = crop[:, :, ::-1] if flip[i] else crop
    return out


def batch_iterator(dataset, batch_size, rng):
    """Shuffled minibatches; the final short batch is kept.

    The permutation comes from the supplied counter-based rng, so an epoch
    is reproducible from the rng state alone.
    """
    if batch_size < 1:
        raise DataError(f"batch_size must be >= 1, got {batch_size}")
    order = rng.permutation(len(dataset))
    for start in range(0, len(dataset), batch_size):
        idx = order[start : start + batch_size]
        yield dataset.images[idx], dataset.labels[idx]


def resolve_data_dir(cfg_dir):
    """Explicit config value, else LRNET_DATA_DIR, else ./data."""
    if cfg_dir:
        return cfg_dir
    return os.environ.get("LRNET_DATA_DIR", "data")


def load_for_run(cfg):
    """Materialize (train, val, test) per a run's data section.

    The validation set is carved from the examples immediately after the
    training slice, so a 10k train limit with a 2k validation set uses
    examples [0, 10000) and [10000, 12000).
    """
    data_dir = resolve_data_dir(cfg.data.data_dir)
    if cfg.data.dataset == "mnist":
        train_full, test = load_mnist(data_dir)
    else:
        train_full, test = load_cifar10(data_dir, standardize=cfg.data.standardize)
    limit = cfg.data.train_limit or len(train_full)
    if limit > len(train_full):
        raise DataError(
            f"train_limit {limit} exceeds dataset size {len(train_full)}"
        )
    train = train_full.slice(0, limit)
    val = None
    if cfg.data.val_size:
        stop = limit + cfg.data.val_size
        if stop > len(train_full):
            raise DataError(
                f"val_size {cfg.data.val_size} does not fit after the "
                f"{limit}-example training slice"
            )
        val = train_full.slice(limit, stop)
    return train, val, test
