"""Labeled image datasets: in-memory storage, contiguous splits, directory I/O.

A dataset directory holds one binary PPM per item plus ``labels.csv`` with
header ``filename,q_rad`` and one row per image (filenames relative to the
directory). Images are stored in memory as quantized uint8 arrays so that an
in-memory dataset and its on-disk round trip are byte-identical.
"""

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .arm_sim import LABEL_MAX
from .errors import ValidationError
from .raster import read_ppm_bytes, write_ppm_bytes

LABELS_FILENAME = "labels.csv"
LABELS_HEADER = ["filename", "q_rad"]

# train : val : test
SPLIT_RATIOS = (8, 1, 1)


@dataclass
class Split:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    def validate(self, n: int):
        parts = [self.train, self.val, self.test]
        combined = np.concatenate([np.asarray(p, dtype=np.int64) for p in parts])
        if len(combined) != n or len(np.unique(combined)) != n:
            raise ValidationError("split indices must be disjoint and exhaustive")
        if combined.min() < 0 or combined.max() >= n:
            raise ValidationError("split indices out of range")


def contiguous_split(n: int, ratios=SPLIT_RATIOS) -> Split:
    """Unshuffled split into contiguous blocks with the given ratios (default 8:1:1)."""
    if n < 3:
        raise ValidationError("need at least 3 items to split")
    total = sum(ratios)
    n_train = (n * ratios[0]) // total
    n_val = (n * ratios[1]) // total
    idx = np.arange(n, dtype=np.int64)
    return Split(idx[:n_train], idx[n_train:n_train + n_val], idx[n_train + n_val:])


def item_filename(index: int) -> str:
    return f"img_{index:05d}.ppm"


@dataclass
class Dataset:
    """Ordered (uint8 image, label q in radians) pairs with split bookkeeping."""

    images: list
    labels: np.ndarray
    resolution: tuple
    split: Split

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.float64)

    def __len__(self):
        return len(self.images)

    def validate(self):
        n = len(self.images)
        if n == 0:
            raise ValidationError("dataset is empty")
        if len(self.labels) != n:
            raise ValidationError("label count does not match image count")
        if not np.isfinite(self.labels).all():
            raise ValidationError("labels must be finite")
        if np.abs(self.labels).max() > LABEL_MAX + 1e-12:
            raise ValidationError(f"labels must lie in [-{LABEL_MAX}, {LABEL_MAX}]")
        h, w = self.resolution
        for i, img in enumerate(self.images):
            if img.shape != (h, w, 3) or img.dtype != np.uint8:
                raise ValidationError(f"item {i}: expected uint8 {(h, w, 3)}, "
                                      f"got {img.dtype} {img.shape}")
        self.split.validate(n)

    def subset(self, indices, split: Split | None = None) -> "Dataset":
        """New dataset over the selected items, in the given order, re-split."""
        indices = np.asarray(indices, dtype=np.int64)
        images = [self.images[i] for i in indices]
        labels = self.labels[indices]
        if split is None:
            split = contiguous_split(len(indices))
        return Dataset(images, labels, self.resolution, split)

    def with_split(self, split: Split) -> "Dataset":
        return Dataset(self.images, self.labels, self.resolution, split)

    def save_dir(self, out_dir):
        """Write all items plus labels.csv into out_dir (must already exist)."""
        out = Path(out_dir)
        rows = []
        for i, (img, q) in enumerate(zip(self.images, self.labels)):
            name = item_filename(i)
            write_ppm_bytes(img, out / name)
            rows.append((name, repr(float(q))))
        with open(out / LABELS_FILENAME, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(LABELS_HEADER)
            writer.writerows(rows)

    @classmethod
    def load_dir(cls, in_dir) -> "Dataset":
        """Load a dataset directory written by save_dir (or any labels.csv + PPMs)."""
        root = Path(in_dir)
        labels_path = root / LABELS_FILENAME
        if not labels_path.is_file():
            raise ValidationError(f"{labels_path}: labels file not found")
        names, labels = [], []
        with open(labels_path, newline="") as f:
            reader = csv.reader(f)
            header = next(reader, None)
            if header != LABELS_HEADER:
                raise ValidationError(f"{labels_path}: expected header "
                                      f"{','.join(LABELS_HEADER)!r}")
            for row in reader:
                if len(row) != 2:
                    raise ValidationError(f"{labels_path}: malformed row {row!r}")
                name, q_text = row
                try:
                    q = float(q_text)
                except ValueError as exc:
                    raise ValidationError(f"{labels_path}: bad label {q_text!r}") from exc
                if not math.isfinite(q) or abs(q) > LABEL_MAX + 1e-12:
                    raise ValidationError(f"{labels_path}: label {q} out of range")
                names.append(name)
                labels.append(q)
        if len(set(names)) != len(names):
            raise ValidationError(f"{labels_path}: duplicate filenames")
        if not names:
            raise ValidationError(f"{labels_path}: no items")
        images = [read_ppm_bytes(root / name) for name in names]
        h, w = images[0].shape[:2]
        ds = cls(images, np.asarray(labels), (h, w), contiguous_split(len(images)))
        ds.validate()
        return ds
