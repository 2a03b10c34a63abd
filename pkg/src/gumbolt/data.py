"""Dataset ingestion: IDX files, binarized amat text, packed-bit archives,

and a small synthetic set for desk-scale experiments.  Images are flat
binary rows; the canonical image size is 28x28 = 784 pixels for the real
datasets and 4x4 = 16 for the synthetic one.
"""

from __future__ import annotations

import hashlib
import os
import struct
from dataclasses import dataclass

import numpy as np

IDX_IMAGE_MAGIC = 0x00000803
PACKED_MAGIC = b"GBPK"

# Canonical split sizes (train, valid, test) for the fixed-binarization sets.
CANONICAL_SPLITS = {
    "mnist": (50000, 10000, 10000),
    "omniglot": (23000, 1345, 8070),
}


class DataError(RuntimeError):
    pass


@dataclass
class Dataset:
    """Binary images plus the split boundaries and provenance checksum."""

    name: str
    images: np.ndarray  # (N, pixels) uint8 in {0, 1}
    split_sizes: tuple  # (train, valid, test), summing to N
    checksum: str

    def __post_init__(self):
        if self.images.ndim != 2:
            raise DataError("images must be a 2-D matrix")
        if sum(self.split_sizes) != self.images.shape[0]:
            raise DataError(
                f"split sizes {self.split_sizes} do not sum to {self.images.shape[0]}"
            )

    @property
    def n_pixels(self):
        return self.images.shape[1]

    def _bounds(self, part):
        tr, va, te = self.split_sizes
        return {"train": (0, tr), "valid": (tr, tr + va), "test": (tr + va, tr + va + te)}[part]

    def split(self, part):
        lo, hi = self._bounds(part)
        return self.images[lo:hi]


def _checksum(arr):
    return hashlib.sha256(np.ascontiguousarray(arr).tobytes()).hexdigest()


def load_idx(path):
    """Parse a big-endian IDX image file into an (N, rows, cols) byte array."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 16:
        raise DataError(f"{path}: truncated IDX header at byte {len(raw)} (need 16)")
    magic, n, rows, cols = struct.unpack(">IIII", raw[:16])
    if magic != IDX_IMAGE_MAGIC:
        raise DataError(
            f"{path}: bad magic 0x{magic:08x} at byte 0 (expected 0x{IDX_IMAGE_MAGIC:08x})"
        )
    expected = 16 + n * rows * cols
    if len(raw) < expected:
        raise DataError(f"{path}: truncated at byte {len(raw)} (expected {expected})")
    data = np.frombuffer(raw, dtype=np.uint8, count=n * rows * cols, offset=16)
    return data.reshape(n, rows, cols).copy()


def _parse_amat(path):
    """Rows of space-separated {0,1} pixel values, as written by the

    fixed-binarization distribution of MNIST."""
    values = np.loadtxt(path, dtype=np.uint8)
    return np.atleast_2d(values)


def load_binarized(train_path, valid_path, test_path, name="mnist"):
    """Assemble a Dataset from the three canonical fixed-binarization files.

    Files may be amat text or the packed format written by ``save_packed``.
    Entries must already be binary; anything else is an error in canonical
    mode (use ``binarize_raw`` for thresholding grayscale data).
    """
    parts = []
    digest = hashlib.sha256()
    for path in (train_path, valid_path, test_path):
        if str(path).endswith(".gbp"):
            part = load_packed(path).images
        else:
            part = _parse_amat(path)
        if not np.isin(part, (0, 1)).all():
            raise DataError(f"{path}: non-binary values in canonical mode")
        parts.append(part.astype(np.uint8))
        digest.update(np.ascontiguousarray(parts[-1]).tobytes())
    images = np.concatenate(parts, axis=0)
    split = tuple(len(p) for p in parts)
    expected = CANONICAL_SPLITS.get(name)
    if expected is not None and split != expected:
        raise DataError(f"{name}: split sizes {split} differ from canonical {expected}")
    return Dataset(name, images, split, digest.hexdigest())


def binarize_raw(raw, name, split_sizes, threshold=0.5):
    """Threshold grayscale images at ``threshold`` of full intensity.

    Not the fixed binarization: results are flagged in the dataset name so
    they are never confused with canonical numbers.
    """
    flat = raw.reshape(len(raw), -1)
    images = (flat >= 255.0 * threshold).astype(np.uint8)
    return Dataset(f"{name}-thresholded", images, tuple(split_sizes), _checksum(images))


def save_packed(path, dataset, rows, cols):
    """Write the compact packed-bit archive (see README for the layout)."""
    n, pixels = dataset.images.shape
    if rows * cols != pixels:
        raise DataError(f"rows*cols = {rows * cols} does not match {pixels} pixels")
    with open(path, "wb") as fh:
        fh.write(PACKED_MAGIC)
        fh.write(struct.pack("<III", n, rows, cols))
        fh.write(struct.pack("<III", *dataset.split_sizes))
        fh.write(np.packbits(dataset.images, axis=1).tobytes())


def load_packed(path, name=None):
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != PACKED_MAGIC:
        raise DataError(f"{path}: bad magic {raw[:4]!r} at byte 0")
    n, rows, cols = struct.unpack("<III", raw[4:16])
    split_sizes = struct.unpack("<III", raw[16:28])
    packed_width = (rows * cols + 7) // 8
    expected = 28 + n * packed_width
    if len(raw) < expected:
        raise DataError(f"{path}: truncated at byte {len(raw)} (expected {expected})")
    packed = np.frombuffer(raw, dtype=np.uint8, offset=28).reshape(n, packed_width)
    images = np.unpackbits(packed, axis=1)[:, : rows * cols]
    return Dataset(name or os.path.basename(path), images, split_sizes, _checksum(images))


TOY_PIXELS = 16

# 4x4 corner blobs: each mode lights one 2x2 quadrant.
TOY_MODES = np.array(
    [
        [1, 1, 0, 0, 1, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0],
        [0, 0, 1, 1, 0, 0, 1, 1, 0, 0, 0, 0, 0, 0, 0, 0],
        [0, 0, 0, 0, 0, 0, 0, 0, 1, 1, 0, 0, 1, 1, 0, 0],
        [0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 1, 1, 0, 0, 1, 1],
    ],
    dtype=np.uint8,
)

TOY_FLIP_RATE = 0.05


def toy_dataset(seed, n=2000):
    """Synthetic 16-pixel set: corner-pattern mixture with 5% bit flips.

    Deterministic given the seed; split 70/15/15.
    """
    if n < 100:
        raise ValueError("need at least 100 examples")
    rng = np.random.default_rng(seed)
    modes = rng.integers(0, 4, size=n)
    images = TOY_MODES[modes]
    flips = rng.uniform(size=images.shape) < TOY_FLIP_RATE
    images = np.where(flips, 1 - images, images).astype(np.uint8)
    train = int(round(0.70 * n))
    valid = int(round(0.15 * n))
    return Dataset("toy", images, (train, valid, n - train - valid), _checksum(images))


def resolve_data_dir(explicit=None):
    """CLI flag wins, then the GUMBOLT_DATA_DIR environment variable."""
    path = explicit or os.environ.get("GUMBOLT_DATA_DIR")
    if not path:
        raise DataError(
            "no data directory: pass --data-dir or set GUMBOLT_DATA_DIR"
        )
    return path


def load_dataset(name, data_dir=None, seed=0, toy_n=2000):
    """Load a dataset by configured name ("toy", "mnist", "omniglot")."""
    if name == "toy":
        return toy_dataset(seed, toy_n)
    base = resolve_data_dir(data_dir)
    paths = []
    for part in ("train", "valid", "test"):
        packed = os.path.join(base, f"binarized_{name}_{part}.gbp")
        amat = os.path.join(base, f"binarized_{name}_{part}.amat")
        if os.path.exists(packed):
            paths.append(packed)
        elif os.path.exists(amat):
            paths.append(amat)
        else:
            raise DataError(f"missing {packed} (or .amat) for dataset {name!r}")
    return load_binarized(*paths, name=name)


class BatchIterator:
    """Shuffled minibatch cycling over the training images.

    Each epoch visits a fresh permutation covering every example exactly
    once; state (permutation, position, epoch) is exposed for checkpointing.
    """

    def __init__(self, images, batch_size=100, rng=None, state=None):
        if batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        self.images = images
        self.batch_size = batch_size
        self.rng = rng if rng is not None else np.random.default_rng(0)
        if state is None:
            self.epoch = 0
            self.position = 0
            self.permutation = self.rng.permutation(len(images))
        else:
            # resume: the rng state already reflects past permutation draws
            self.restore(state)

    def next_batch(self):
        n = len(self.images)
        if self.position >= n:
            self.permutation = self.rng.permutation(n)
            self.position = 0
            self.epoch += 1
        idx = self.permutation[self.position : self.position + self.batch_size]
        self.position += len(idx)
        return self.images[idx]

    def state(self):
        return {
            "epoch": self.epoch,
            "position": self.position,
            "permutation": self.permutation,
        }

    def restore(self, state):
        self.epoch = int(state["epoch"])
        self.position = int(state["position"])
        self.permutation = np.asarray(state["permutation"], dtype=np.int64)
