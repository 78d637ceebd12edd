"""Datasets: seeded synthetic shape images, the CIFAR-10 binary format, Cutout."""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .errors import EmptyDataset, LabelOutOfRange, TruncatedRecord, UnsupportedClassCount
from .rng import stream

CIFAR_MEAN = (0.4914, 0.4822, 0.4465)
CIFAR_STD = (0.2470, 0.2435, 0.2616)


@dataclass
class DatasetSpec:
    source: str = "synthetic_shapes"  # or "cifar10_binary"
    path: str = ""
    image_hw: Tuple[int, int] = (16, 16)
    n_classes: int = 4
    n_samples: int = 512
    seed: int = 0
    noise_std: float = 0.5


@dataclass
class Dataset:
    images: np.ndarray  # (N, C, H, W) float32
    labels: np.ndarray  # (N,) int64

    def __len__(self) -> int:
        return self.images.shape[0]

    def subset(self, idx: np.ndarray) -> "Dataset":
        return Dataset(self.images[idx], self.labels[idx])


def _blob(H: int, W: int, r0: float, c0: float, sigma: float) -> np.ndarray:
    rr, cc = np.mgrid[0:H, 0:W]
    return np.exp(-((rr - r0) ** 2 + (cc - c0) ** 2) / (2 * sigma**2))


def _pattern(cls: int, H: int, W: int, rng: np.random.Generator) -> np.ndarray:
    img = np.zeros((H, W))
    thick = max(H // 8, 1)
    if cls == 0:  # horizontal bar, full width
        r = int(rng.integers(0, H - thick + 1))
        img[r : r + thick, :] = 1.0
    elif cls == 1:  # vertical bar, full height
        c = int(rng.integers(0, W - thick + 1))
        img[:, c : c + thick] = 1.0
    elif cls == 2:  # centered blob
        img = _blob(H, W, (H - 1) / 2 + rng.uniform(-1, 1), (W - 1) / 2 + rng.uniform(-1, 1), H / 6)
    elif cls == 3:  # corner blob
        corner = int(rng.integers(0, 4))
        r0 = H / 6 if corner in (0, 1) else H - 1 - H / 6
        c0 = W / 6 if corner in (0, 2) else W - 1 - W / 6
        img = _blob(H, W, r0, c0, H / 6)
    elif cls == 4:  # diagonal band
        sign = 1 if rng.integers(0, 2) == 0 else -1
        rr, cc = np.mgrid[0:H, 0:W]
        d = rr - cc if sign == 1 else rr + cc - (W - 1)
        img = (np.abs(d) < thick).astype(float)
    elif cls == 5:  # centered cross
        img[(H - thick) // 2 : (H + thick) // 2, :] = 1.0
        img[:, (W - thick) // 2 : (W + thick) // 2] = 1.0
    elif cls == 6:  # ring
        rr, cc = np.mgrid[0:H, 0:W]
        rad = np.sqrt((rr - (H - 1) / 2) ** 2 + (cc - (W - 1) / 2) ** 2)
        img = (np.abs(rad - H / 3) < 1.2).astype(float)
    elif cls == 7:  # checkerboard, random phase
        cell = max(H // 4, 2)
        phase = int(rng.integers(0, 2))
        rr, cc = np.mgrid[0:H, 0:W]
        img = (((rr // cell + cc // cell) + phase) % 2).astype(float)
    else:
        raise UnsupportedClassCount(f"no pattern for class {cls}")
    return img


def gen_synthetic(spec: DatasetSpec) -> Dataset:
    """Deterministic class-balanced shape images with Gaussian pixel noise."""
    if not (2 <= spec.n_classes <= 8):
        raise UnsupportedClassCount(f"n_classes must be in 2..8, got {spec.n_classes}")
    H, W = spec.image_hw
    labels = np.arange(spec.n_samples, dtype=np.int64) % spec.n_classes
    order = stream(spec.seed, "synthetic", "order").permutation(spec.n_samples)
    labels = labels[order]
    images = np.empty((spec.n_samples, 1, H, W), dtype=np.float32)
    for idx in range(spec.n_samples):
        rng = stream(spec.seed, "synthetic", "image", str(idx))
        img = _pattern(int(labels[idx]), H, W, rng)
        if spec.noise_std > 0:
            img = img + rng.normal(0.0, spec.noise_std, size=(H, W))
        images[idx, 0] = img
    return Dataset(images, labels)


def load_cifar10(path: str, normalize: bool = True) -> Dataset:
    """Load CIFAR-10 binary files (3073-byte records, R/G/B planes).

    `path` may be one .bin file or a directory of them (read in sorted order).
    """
    if os.path.isdir(path):
        files = sorted(
            os.path.join(path, f) for f in os.listdir(path) if f.endswith(".bin")
        )
    else:
        files = [path]
    if not files:
        raise EmptyDataset(f"no .bin files under {path}")
    chunks = []
    label_chunks = []
    for fname in files:
        raw = np.fromfile(fname, dtype=np.uint8)
        if raw.size == 0 or raw.size % 3073 != 0:
            raise TruncatedRecord(f"{fname}: size {raw.size} is not a multiple of 3073")
        recs = raw.reshape(-1, 3073)
        labels = recs[:, 0].astype(np.int64)
        if labels.max(initial=0) > 9:
            bad = int(labels.max())
            raise LabelOutOfRange(f"{fname}: label byte {bad} out of range 0..9")
        label_chunks.append(labels)
        chunks.append(recs[:, 1:].reshape(-1, 3, 32, 32).astype(np.float32) / 255.0)
    images = np.concatenate(chunks)
    labels = np.concatenate(label_chunks)
    if normalize:
        mean = np.asarray(CIFAR_MEAN, dtype=np.float32).reshape(1, 3, 1, 1)
        std = np.asarray(CIFAR_STD, dtype=np.float32).reshape(1, 3, 1, 1)
        images = (images - mean) / std
    return Dataset(images, labels)


def load_dataset(spec: DatasetSpec) -> Dataset:
    if spec.source == "synthetic_shapes":
        return gen_synthetic(spec)
    if spec.source == "cifar10_binary":
        return load_cifar10(spec.path)
    raise EmptyDataset(f"unknown dataset source '{spec.source}'")


def cutout_augment(images: np.ndarray, length: int, rng: np.random.Generator) -> np.ndarray:
    """Zero one axis-aligned square (side `length`) per image, clipped at borders."""
    if length < 1:
        raise UnsupportedClassCount(f"cutout length must be >= 1, got {length}")
    out = images.copy()
    N, _, H, W = out.shape
    half = length // 2
    for n in range(N):
        r = int(rng.integers(0, H))
        c = int(rng.integers(0, W))
        r0, r1 = max(r - half, 0), min(r + (length - half), H)
        c0, c1 = max(c - half, 0), min(c + (length - half), W)
        out[n, :, r0:r1, c0:c1] = 0.0
    return out


def split_dataset(ds: Dataset, val_fraction: float, seed: int) -> Tuple[Dataset, Dataset]:
    """Seeded shuffle, then hold out the last `val_fraction` as validation."""
    n = len(ds)
    order = stream(seed, "split").permutation(n)
    n_val = int(round(n * val_fraction))
    n_val = min(max(n_val, 1), n - 1)
    return ds.subset(order[: n - n_val]), ds.subset(order[n - n_val :])
