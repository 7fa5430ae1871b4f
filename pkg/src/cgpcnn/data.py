"""Datasets: CIFAR-10 binary batches, scenario splits, preprocessing, augmentation, synthetic images."""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from cgpcnn.errors import CorruptRecord, MissingFile, ShapeMismatch, SpecInfeasible

CIFAR_SIDE = 32
CIFAR_RECORD = 1 + 3 * CIFAR_SIDE * CIFAR_SIDE
CIFAR_TRAIN_FILES = tuple(f"data_batch_{i}.bin" for i in range(1, 6))
CIFAR_TEST_FILE = "test_batch.bin"
SYNTH_MAGIC = b"CGPD"
SYNTH_VERSION = 1
PAD = 4


@dataclass(frozen=True)
class Dataset:
    images: np.ndarray  # (B, M, N, C) float32
    labels: np.ndarray  # (B,) int64
    class_count: int
    provenance: str = "unknown"

    def __post_init__(self):
        if self.images.ndim != 4 or len(self.images) != len(self.labels):
            raise ShapeMismatch("images must be (B, M, N, C) with one label per image")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise ValueError(f"labels must lie in [0, {self.class_count})")

    def __len__(self):
        return len(self.labels)

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return tuple(self.images.shape[1:])

    def subset(self, idx) -> "Dataset":
        return Dataset(self.images[idx], self.labels[idx], self.class_count, self.provenance)


@dataclass(frozen=True)
class SplitSpec:
    train_n: int
    val_n: int
    seed: int = 0


PRESETS = {
    "default": (45_000, 5_000),
    "small": (4_500, 500),
    "desk": (2_000, 500),
}


def preset(name: str, seed: int = 0) -> SplitSpec:
    try:
        train_n, val_n = PRESETS[name]
    except KeyError:
        raise SpecInfeasible(f"unknown scenario {name!r}; choose from {sorted(PRESETS)}") from None
    return SplitSpec(train_n, val_n, seed)


# -- CIFAR-10 -----------------------------------------------------------------

def parse_cifar_records(blob: bytes, side: int = CIFAR_SIDE, channels: int = 3):
    """Decode ``label byte + channel planes`` records into images in [0, 1]."""
    record = 1 + channels * side * side
    if len(blob) == 0 or len(blob) % record:
        raise CorruptRecord(f"{len(blob)} bytes is not a whole number of {record}-byte records")
    raw = np.frombuffer(blob, dtype=np.uint8).reshape(-1, record)
    labels = raw[:, 0].astype(np.int64)
    planes = raw[:, 1:].reshape(-1, channels, side, side)
    images = planes.transpose(0, 2, 3, 1).astype(np.float32) / 255.0
    return images, labels


def _read(path: Path):
    if not path.is_file():
        raise MissingFile(f"missing CIFAR-10 batch file {path}")
    images, labels = parse_cifar_records(path.read_bytes())
    if labels.max() >= 10:
        raise CorruptRecord(f"{path} holds a label outside [0, 10)")
    return images, labels


def load_cifar10(path) -> tuple[Dataset, Dataset]:
    """Read the binary CIFAR-10 distribution; returns ``(train, test)``."""
    root = Path(path)
    if (root / "cifar-10-batches-bin").is_dir():
        root = root / "cifar-10-batches-bin"
    parts = [_read(root / name) for name in CIFAR_TRAIN_FILES]
    train = Dataset(
        np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts]), 10, "cifar10"
    )
    test_images, test_labels = _read(root / CIFAR_TEST_FILE)
    return train, Dataset(test_images, test_labels, 10, "cifar10")


def data_dir() -> Path | None:
    value = os.environ.get("CGPNAS_DATA_DIR")
    return Path(value) if value else None


# -- splitting and preprocessing ------------------------------------------------

def split(ds: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset]:
    """Seeded sampling without replacement into disjoint train/validation subsets."""
    if spec.train_n < 0 or spec.val_n < 0 or spec.train_n + spec.val_n > len(ds):
        raise SpecInfeasible(f"cannot take {spec.train_n}+{spec.val_n} samples from {len(ds)}")
    perm = np.random.default_rng(spec.seed).permutation(len(ds))
    train_idx = np.sort(perm[: spec.train_n])
    val_idx = np.sort(perm[spec.train_n: spec.train_n + spec.val_n])
    return ds.subset(train_idx), ds.subset(val_idx)


def mean_subtract(train: Dataset, *others: Dataset):
    """Subtract the per-position training mean from every dataset.

    Returns ``(train', *others', mean_image)``.
    """
    mean = train.images.mean(axis=0, dtype=np.float64).astype(np.float32)
    out = []
    for ds in (train, *others):
        if ds.image_shape != train.image_shape:
            raise ShapeMismatch(f"image shape {ds.image_shape} differs from training {train.image_shape}")
        out.append(Dataset(ds.images - mean, ds.labels, ds.class_count, ds.provenance))
    return (*out, mean)


def augment(image, rng, offset=None, flip=None):
    """Pad 4 zeros per side, crop back to size at a random offset, flip horizontally half the time."""
    m, n, _ = image.shape
    if offset is None:
        offset = (int(rng.integers(0, 2 * PAD + 1)), int(rng.integers(0, 2 * PAD + 1)))
    if flip is None:
        flip = bool(rng.random() < 0.5)
    canvas = np.pad(image, ((PAD, PAD), (PAD, PAD), (0, 0)))
    r, c = offset
    out = canvas[r:r + m, c:c + n]
    return out[:, ::-1] if flip else out.copy()


def augment_batch(images, rng):
    """Vectorised :func:`augment` with independent draws per sample."""
    bsz, m, n, _ = images.shape
    canvas = np.pad(images, ((0, 0), (PAD, PAD), (PAD, PAD), (0, 0)))
    rows = rng.integers(0, 2 * PAD + 1, size=bsz)
    cols = rng.integers(0, 2 * PAD + 1, size=bsz)
    flips = rng.random(bsz) < 0.5
    ri = rows[:, None] + np.arange(m)[None, :]
    ci = cols[:, None] + np.arange(n)[None, :]
    ci = np.where(flips[:, None], ci[:, ::-1], ci)
    return canvas[np.arange(bsz)[:, None, None], ri[:, :, None], ci[:, None, :]]


# -- synthetic images -------------------------------------------------------------

DIFFICULTY = {
    # amplitude, noise std, random phase
    "easy": (0.045, 0.30, False),
    "medium": (0.060, 0.30, True),
    "hard": (0.040, 0.40, True),
}


@dataclass(frozen=True)
class SyntheticSpec:
    classes: int = 2
    samples: int = 2_500
    image_size: int = 16
    difficulty: str = "easy"
    channels: int = 3


def synthetic_dataset(spec: SyntheticSpec, seed: int) -> Dataset:
    """Class-conditional fine gratings plus Gaussian noise, clipped to [0, 1].

    Class ``k`` is a two-pixel-period grating at angle ``pi * k / classes``.
    With ``"easy"`` the phase is fixed, so the class means differ by a fixed
    template and the classes are linearly separable; harder levels draw a
    random phase per image and add more noise. A 2x2 pooling applied to the
    raw image averages the grating away, so architectures that downsample
    before convolving cannot separate the classes. Classes are balanced: the
    first ``samples % classes`` classes get one extra image.
    """
    if spec.difficulty not in DIFFICULTY:
        raise ValueError(f"difficulty must be one of {sorted(DIFFICULTY)}")
    if min(spec.classes, spec.samples, spec.image_size, spec.channels) < 1:
        raise ValueError("synthetic spec fields must be positive")
    amp, noise, random_phase = DIFFICULTY[spec.difficulty]
    rng = np.random.default_rng(seed)
    s = spec.image_size
    labels = np.arange(spec.samples) % spec.classes
    labels = labels[rng.permutation(spec.samples)]
    theta = np.pi * labels / spec.classes
    phase = rng.uniform(0, 2 * np.pi, spec.samples) if random_phase else np.zeros(spec.samples)
    yy, xx = np.mgrid[0:s, 0:s].astype(np.float64)
    proj = xx[None] * np.cos(theta)[:, None, None] + yy[None] * np.sin(theta)[:, None, None]
    pattern = np.cos(np.pi * proj + phase[:, None, None])
    gains = np.linspace(1.0, 0.6, spec.channels)
    images = 0.5 + amp * pattern[..., None] * gains + rng.normal(0, noise, (spec.samples, s, s, spec.channels))
    images = np.clip(images, 0.0, 1.0).astype(np.float32)
    tag = f"synthetic({spec.classes},{spec.samples},{s},{spec.difficulty},{spec.channels};seed={seed})"
    return Dataset(images, labels.astype(np.int64), spec.classes, tag)


def save_dataset(ds: Dataset, path) -> None:
    """Versioned binary: header, then CIFAR-shaped records (label byte + uint8 channel planes)."""
    b, m, n, c = ds.images.shape
    if ds.class_count > 256:
        raise ValueError("record format stores labels in one byte")
    pixels = np.clip(np.rint(ds.images * 255.0), 0, 255).astype(np.uint8)
    records = np.empty((b, 1 + m * n * c), dtype=np.uint8)
    records[:, 0] = ds.labels
    records[:, 1:] = pixels.transpose(0, 3, 1, 2).reshape(b, -1)
    with open(path, "wb") as fh:
        fh.write(SYNTH_MAGIC)
        fh.write(struct.pack("<IIIIII", SYNTH_VERSION, b, m, n, c, ds.class_count))
        fh.write(records.tobytes())


def load_dataset(path) -> Dataset:
    blob = Path(path).read_bytes()
    if blob[:4] != SYNTH_MAGIC or len(blob) < 28:
        raise CorruptRecord(f"{path} is not a dataset file")
    version, b, m, n, c, classes = struct.unpack("<IIIIII", blob[4:28])
    if version != SYNTH_VERSION:
        raise CorruptRecord(f"unsupported dataset version {version}")
    body = blob[28:]
    if len(body) != b * (1 + m * n * c):
        raise CorruptRecord(f"{path} is truncated")
    raw = np.frombuffer(body, dtype=np.uint8).reshape(b, -1)
    images = raw[:, 1:].reshape(b, c, m, n).transpose(0, 2, 3, 1).astype(np.float32) / 255.0
    return Dataset(images, raw[:, 0].astype(np.int64), classes, f"file:{Path(path).name}")
