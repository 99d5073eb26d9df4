"""Dataset ingestion: IDX (MNIST container) parsing, a synthetic blob
generator for fast tests, and seeded minibatching."""

import struct
from dataclasses import dataclass

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "t10k": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


class IdxError(Exception):
    """An IDX file could not be parsed."""


class IdxMagicError(IdxError):
    pass


class IdxTruncatedError(IdxError):
    pass


class IdxCountMismatchError(IdxError):
    pass


@dataclass
class Dataset:
    """Images in [0,1] as float32 [N,1,H,W] plus integer class labels."""

    images: np.ndarray
    labels: np.ndarray
    split: str = ""
    num_classes: int = 0

    def __post_init__(self):
        if self.images.ndim != 4 or self.images.shape[1] != 1:
            raise ValueError(f"images must be [N,1,H,W], got {self.images.shape}")
        if len(self.labels) != len(self.images):
            raise IdxCountMismatchError(
                f"{len(self.images)} images but {len(self.labels)} labels"
            )
        if self.images.size and (self.images.min() < 0.0 or self.images.max() > 1.0):
            raise ValueError("pixel values must lie in [0,1]")
        if self.num_classes == 0:
            self.num_classes = int(self.labels.max()) + 1 if len(self.labels) else 0
        if len(self.labels) and int(self.labels.max()) >= self.num_classes:
            raise ValueError("label outside class range")

    def __len__(self):
        return len(self.labels)

    @property
    def input_shape(self):
        return tuple(self.images.shape[1:])

    @property
    def input_dim(self):
        return int(np.prod(self.input_shape))

    def subset(self, n):
        """First n examples in stored order (deterministic desk profile)."""
        return Dataset(
            self.images[:n], self.labels[:n], split=f"{self.split}[:{n}]",
            num_classes=self.num_classes,
        )

    def checksum(self):
        import hashlib

        h = hashlib.sha256()
        h.update(self.images.tobytes())
        h.update(self.labels.tobytes())
        return h.hexdigest()


def _read_be32(buf, offset, path):
    if offset + 4 > len(buf):
        raise IdxTruncatedError(f"{path}: truncated header")
    return struct.unpack_from(">i", buf, offset)[0]


def read_idx_images(path):
    """Raw uint8 image array [N,H,W] from an IDX3 file."""
    with open(path, "rb") as f:
        buf = f.read()
    magic = _read_be32(buf, 0, path)
    if magic != IDX_IMAGES_MAGIC:
        raise IdxMagicError(f"{path}: magic 0x{magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x}")
    n = _read_be32(buf, 4, path)
    h = _read_be32(buf, 8, path)
    w = _read_be32(buf, 12, path)
    payload = buf[16:]
    if len(payload) != n * h * w:
        raise IdxTruncatedError(
            f"{path}: payload holds {len(payload)} bytes, expected {n * h * w}"
        )
    return np.frombuffer(payload, dtype=np.uint8).reshape(n, h, w)


def read_idx_labels(path):
    """Raw uint8 label vector [N] from an IDX1 file."""
    with open(path, "rb") as f:
        buf = f.read()
    magic = _read_be32(buf, 0, path)
    if magic != IDX_LABELS_MAGIC:
        raise IdxMagicError(f"{path}: magic 0x{magic:08x}, expected 0x{IDX_LABELS_MAGIC:08x}")
    n = _read_be32(buf, 4, path)
    payload = buf[8:]
    if len(payload) != n:
        raise IdxTruncatedError(f"{path}: payload holds {len(payload)} bytes, expected {n}")
    return np.frombuffer(payload, dtype=np.uint8).copy()


def write_idx_images(path, images):
    """Inverse of read_idx_images, for fixtures and subset exports."""
    arr = np.ascontiguousarray(images, dtype=np.uint8)
    n, h, w = arr.shape
    with open(path, "wb") as f:
        f.write(struct.pack(">iiii", IDX_IMAGES_MAGIC, n, h, w))
        f.write(arr.tobytes())


def write_idx_labels(path, labels):
    arr = np.ascontiguousarray(labels, dtype=np.uint8)
    with open(path, "wb") as f:
        f.write(struct.pack(">ii", IDX_LABELS_MAGIC, len(arr)))
        f.write(arr.tobytes())


def load_idx(images_path, labels_path, split=""):
    """Parse an IDX image/label file pair into a Dataset (pixels / 255)."""
    raw = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if len(raw) != len(labels):
        raise IdxCountMismatchError(
            f"{images_path} holds {len(raw)} images but {labels_path} holds "
            f"{len(labels)} labels"
        )
    images = (raw.astype(np.float32) / 255.0)[:, None, :, :]
    return Dataset(images, labels.astype(np.int64), split=split, num_classes=10)


def load_mnist(data_dir, split="train"):
    """Load the canonical MNIST files from a directory."""
    from pathlib import Path

    if split not in MNIST_FILES:
        raise ValueError(f"split must be one of {sorted(MNIST_FILES)}, got {split!r}")
    images_name, labels_name = MNIST_FILES[split]
    d = Path(data_dir)
    return load_idx(d / images_name, d / labels_name, split=split)


def synth_blobs(n, dims, classes, seed, separation=4.0):
    """Gaussian class blobs, min-max scaled into [0,1].

    `separation` is the distance (in units of the blob stddev) from each
    class mean to the midpoint between means, so the default of 4 gives
    a Bayes error around Phi(-4) -- comfortably linearly separable.
    Separation 0 collapses all classes onto one blob (chance accuracy).
    """
    if n <= 0 or dims <= 0 or classes <= 0:
        raise ValueError("n, dims and classes must be positive")
    if classes > dims:
        raise ValueError(f"need dims >= classes, got dims={dims} classes={classes}")
    rng = np.random.default_rng(seed)
    labels = np.arange(n, dtype=np.int64) % classes
    means = np.zeros((classes, dims))
    for c in range(classes):
        # basis-vector means a apart pairwise, |a e_i - a e_j| = a*sqrt(2)
        means[c, c] = separation * np.sqrt(2.0)
    x = means[labels] + rng.standard_normal((n, dims))
    lo, hi = x.min(), x.max()
    if hi > lo:
        x = (x - lo) / (hi - lo)
    else:
        x = np.zeros_like(x)
    images = x.astype(np.float32).reshape(n, 1, 1, dims)
    return Dataset(images, labels, split="synth", num_classes=classes)


def batches(ds, batch_size, shuffle_rng):
    """Minibatches after a seeded Fisher-Yates shuffle of the epoch.

    `shuffle_rng` is a ``numpy.random.Generator`` or an integer seed.
    The final partial batch is kept.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if isinstance(shuffle_rng, (int, np.integer)):
        shuffle_rng = np.random.default_rng(int(shuffle_rng))
    perm = shuffle_rng.permutation(len(ds))
    for start in range(0, len(ds), batch_size):
        sel = perm[start : start + batch_size]
        yield ds.images[sel], ds.labels[sel]
