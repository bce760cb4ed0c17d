"""Synthetic labeled images, a flat-tensor directory loader, and the
per-client partitioner.

Synthetic classes are seeded structured patterns: each class combines an
oriented luminance ramp (0/45/90/135 degrees) with a soft blob pinned to a
class-specific quadrant, plus gaussian pixel noise. Balanced exactly.

Flat-tensor image file (.ftns): magic "FTNS", u32 rank, u32 dims...,
little-endian float32 payload, row-major. Directory layout is one
subfolder per class: <root>/<class_name>/*.ftns.
"""

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

FTNS_MAGIC = b"FTNS"

_ORIENTATIONS = (0.0, 45.0, 90.0, 135.0)
_BLOB_CENTERS = ((0.25, 0.25), (0.25, 0.75), (0.75, 0.25), (0.75, 0.75))
_CHANNEL_GAINS = (1.0, 0.75, 0.5)


class DataError(Exception):
    pass


def synthetic_dataset(seed, n_samples, image_size):
    """Balanced 4-class images, (n, 3, S, S) float32 in [0, 1] + labels."""
    if image_size < 8:
        raise DataError(f"image_size must be >= 8, got {image_size}")
    if n_samples % 4:
        raise DataError(f"n_samples must be divisible by 4, got {n_samples}")
    rng = np.random.default_rng(seed)
    per_class = n_samples // 4
    yy, xx = np.meshgrid(np.linspace(0, 1, image_size), np.linspace(0, 1, image_size),
                         indexing="ij")
    images = np.empty((n_samples, 3, image_size, image_size), dtype=np.float32)
    labels = np.empty(n_samples, dtype=np.int64)
    i = 0
    for cls in range(4):
        angle = np.deg2rad(_ORIENTATIONS[cls])
        ramp = np.cos(angle) * xx + np.sin(angle) * yy
        ramp = (ramp - ramp.min()) / (ramp.max() - ramp.min())
        cy, cx = _BLOB_CENTERS[cls]
        sigma = image_size / 6.0
        blob = np.exp(-(((yy - cy) * image_size) ** 2 + ((xx - cx) * image_size) ** 2)
                      / (2.0 * sigma**2))
        base = 0.55 * ramp + 0.45 * blob
        for _ in range(per_class):
            noise = rng.normal(0.0, 0.05, size=(3, image_size, image_size))
            img = np.stack([g * base for g in _CHANNEL_GAINS]) + noise
            images[i] = np.clip(img, 0.0, 1.0)
            labels[i] = cls
            i += 1
    order = rng.permutation(n_samples)
    return images[order], labels[order]


def save_ftns(path, array):
    array = np.asarray(array, dtype=np.float32)
    with open(path, "wb") as fh:
        fh.write(FTNS_MAGIC)
        fh.write(struct.pack("<I", array.ndim))
        for d in array.shape:
            fh.write(struct.pack("<I", d))
        fh.write(array.astype("<f4").tobytes())


def load_ftns(path):
    data = Path(path).read_bytes()
    if len(data) < 8 or data[:4] != FTNS_MAGIC:
        raise DataError(f"{path}: not a flat-tensor image file (bad magic)")
    rank = struct.unpack_from("<I", data, 4)[0]
    if rank < 1 or rank > 4 or len(data) < 8 + 4 * rank:
        raise DataError(f"{path}: malformed header")
    dims = struct.unpack_from(f"<{rank}I", data, 8)
    count = int(np.prod(dims))
    offset = 8 + 4 * rank
    if len(data) != offset + 4 * count:
        raise DataError(f"{path}: payload size does not match dims {dims}")
    return np.frombuffer(data, dtype="<f4", offset=offset).reshape(dims).copy()


def load_image_dir(root):
    """Read <root>/<class>/*.ftns into (images, labels, class_names).

    Tensors may be (H, W) or (C, H, W); grayscale is replicated to three
    channels; every image is min-max normalized to [0, 1]."""
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"{root}: not a directory")
    class_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not class_dirs:
        raise DataError(f"{root}: no class subdirectories")
    images, labels = [], []
    for cls_idx, cls_dir in enumerate(class_dirs):
        files = sorted(cls_dir.glob("*.ftns"))
        if not files:
            raise DataError(f"{cls_dir}: class folder has no .ftns files")
        for f in files:
            arr = load_ftns(f)
            if arr.ndim == 2:
                arr = np.stack([arr] * 3)
            if arr.ndim != 3:
                raise DataError(f"{f}: expected rank 2 or 3, got rank {arr.ndim}")
            lo, hi = float(arr.min()), float(arr.max())
            arr = (arr - lo) / (hi - lo) if hi > lo else np.zeros_like(arr)
            images.append(arr.astype(np.float32))
            labels.append(cls_idx)
    shapes = {im.shape for im in images}
    if len(shapes) != 1:
        raise DataError(f"{root}: inconsistent image shapes {sorted(shapes)}")
    return np.stack(images), np.asarray(labels, dtype=np.int64), [d.name for d in class_dirs]


@dataclass(frozen=True)
class ClientSplit:
    train_images: np.ndarray
    train_labels: np.ndarray
    test_images: np.ndarray
    test_labels: np.ndarray


@dataclass(frozen=True)
class DatasetPartition:
    clients: tuple
    holdout_images: np.ndarray | None = None
    holdout_labels: np.ndarray | None = None


def partition(images, labels, n_clients, rng, train_fraction=0.9,
              holdout=None):
    """Shuffled equal-size disjoint shards, each split train/test with the
    test side floored; the central hold-out is supplied separately."""
    n = len(images)
    if n_clients < 1:
        raise DataError("need at least one client")
    if n < n_clients:
        raise DataError(f"{n} samples cannot cover {n_clients} clients")
    order = rng.permutation(n)
    clients = []
    for shard in np.array_split(order, n_clients):
        n_test = int(len(shard) * (1.0 - train_fraction))
        train_idx, test_idx = shard[: len(shard) - n_test], shard[len(shard) - n_test :]
        clients.append(ClientSplit(
            train_images=images[train_idx], train_labels=labels[train_idx],
            test_images=images[test_idx], test_labels=labels[test_idx]))
    hold_x, hold_y = holdout if holdout is not None else (None, None)
    return DatasetPartition(clients=tuple(clients), holdout_images=hold_x,
                            holdout_labels=hold_y)
