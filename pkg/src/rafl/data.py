"""Datasets: IDX/CSV readers, a synthetic image generator, partitioning, distortions."""

from __future__ import annotations

import csv
import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass(frozen=True)
class Dataset:
    images: np.ndarray  # (n, c, h, w) float64 in [0, 1]
    labels: np.ndarray  # (n,) int64
    class_count: int

    def __post_init__(self):
        if self.images.ndim != 4:
            raise ValueError(f"images must be (n, c, h, w), got shape {self.images.shape}")
        if len(self.images) != len(self.labels):
            raise ValueError(f"{len(self.images)} images but {len(self.labels)} labels")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise ValueError("labels must lie in [0, class_count)")
        if self.images.size and not (np.isfinite(self.images).all() and self.images.min() >= 0
                                     and self.images.max() <= 1):
            raise ValueError("image values must be finite and lie in [0, 1]")

    def __len__(self):
        return len(self.labels)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.images[idx], self.labels[idx], self.class_count)

    def split(self, n_first: int) -> tuple["Dataset", "Dataset"]:
        return self.subset(np.arange(n_first)), self.subset(np.arange(n_first, len(self)))


# ---------------------------------------------------------------------------
# file formats


def _open(path):
    path = Path(path)
    return gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")


def _read_idx(path, expected_magic: int) -> np.ndarray:
    with _open(path) as f:
        raw = f.read()
    if len(raw) < 8:
        raise ValueError(f"{path}: truncated IDX header")
    magic, count = struct.unpack(">II", raw[:8])
    if magic != expected_magic:
        raise ValueError(f"{path}: bad IDX magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    n_dims = magic & 0xFF
    header = 4 + 4 * n_dims
    if len(raw) < header:
        raise ValueError(f"{path}: truncated IDX header")
    dims = struct.unpack(">" + "I" * n_dims, raw[4:header])
    size = int(np.prod(dims))
    if len(raw) - header != size:
        raise ValueError(f"{path}: expected {size} data bytes, found {len(raw) - header}")
    del count
    return np.frombuffer(raw, dtype=np.uint8, offset=header).reshape(dims)


def load_idx(images_path, labels_path, class_count: int | None = None) -> Dataset:
    """Read an MNIST-family image/label IDX pair (optionally gzipped)."""
    images = _read_idx(images_path, IDX_IMAGES_MAGIC)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC).astype(np.int64)
    if len(images) != len(labels):
        raise ValueError(f"image count {len(images)} does not match label count {len(labels)}")
    images = images.astype(np.float64)[:, None] / 255.0
    if class_count is None:
        class_count = int(labels.max()) + 1 if len(labels) else 1
    return Dataset(images, labels, class_count)


def write_idx(images_path, labels_path, images: np.ndarray, labels: np.ndarray):
    """Write uint8 images ``(n, h, w)`` and labels in IDX format."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, *images.shape))
        f.write(images.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABELS_MAGIC, len(labels)))
        f.write(labels.tobytes())


def load_csv(path, image_shape: tuple[int, int, int], class_count: int | None = None,
             scale: float = 255.0) -> Dataset:
    """Rows of ``label, pixel_0, pixel_1, ...``; a non-numeric first row is a header."""
    labels, pixels = [], []
    with open(path, newline="") as f:
        for row_no, row in enumerate(csv.reader(f)):
            if not row:
                continue
            try:
                values = [float(v) for v in row]
            except ValueError:
                if row_no == 0:
                    continue
                raise
            labels.append(int(values[0]))
            pixels.append(values[1:])
    n_pix = int(np.prod(image_shape))
    if any(len(p) != n_pix for p in pixels):
        raise ValueError(f"{path}: every row needs {n_pix} pixel values")
    images = np.asarray(pixels, dtype=np.float64).reshape((-1,) + tuple(image_shape)) / scale
    labels = np.asarray(labels, dtype=np.int64)
    if class_count is None:
        class_count = int(labels.max()) + 1 if len(labels) else 1
    return Dataset(np.clip(images, 0.0, 1.0), labels, class_count)


# ---------------------------------------------------------------------------
# synthetic data


def _stroke(size: int, rng: np.random.Generator, width: float) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    p0 = rng.uniform(2, size - 3, 2)
    p1 = rng.uniform(2, size - 3, 2)
    seg = p1 - p0
    t = ((yy - p0[0]) * seg[0] + (xx - p0[1]) * seg[1]) / max(seg @ seg, 1e-9)
    t = np.clip(t, 0.0, 1.0)
    dist2 = (yy - p0[0] - t * seg[0]) ** 2 + (xx - p0[1] - t * seg[1]) ** 2
    return np.exp(-dist2 / (2 * width ** 2))


def _shift(img: np.ndarray, dy: int, dx: int) -> np.ndarray:
    out = np.zeros_like(img)
    h, w = img.shape[-2:]
    ys, yd = (slice(0, h - dy), slice(dy, h)) if dy >= 0 else (slice(-dy, h), slice(0, h + dy))
    xs, xd = (slice(0, w - dx), slice(dx, w)) if dx >= 0 else (slice(-dx, w), slice(0, w + dx))
    out[..., yd, xd] = img[..., ys, xs]
    return out


def synthesize(classes: int = 10, samples_per_class: int = 300, image_size: int = 16,
               difficulty: float = 1.0, seed: int = 0, channels: int = 1,
               strokes: int = 3) -> Dataset:
    """Class-conditional stroke patterns with shifts, distractors and noise.

    Each class owns a prototype made of ``strokes`` line segments.  A sample is
    its prototype shifted by up to ``round(2 * difficulty)`` pixels, blended
    with a random other prototype at weight ``0.45 * difficulty`` and corrupted
    by Gaussian noise of std ``0.2 * difficulty``.  ``difficulty=0`` yields the
    bare prototypes.  Samples are ordered class by class.
    """
    if min(classes, samples_per_class, image_size, channels, strokes) < 1 or difficulty < 0:
        raise ValueError("synthesize parameters must be positive")
    rng = np.random.default_rng(seed)
    protos = np.zeros((classes, channels, image_size, image_size))
    for c in range(classes):
        for _ in range(strokes):
            tint = rng.uniform(0.4, 1.0, channels) if channels > 1 else np.ones(1)
            protos[c] += tint[:, None, None] * _stroke(image_size, rng, width=rng.uniform(0.7, 1.3))
    protos /= protos.max(axis=(1, 2, 3), keepdims=True)

    n = classes * samples_per_class
    labels = np.repeat(np.arange(classes), samples_per_class)
    max_shift = int(round(2 * difficulty))
    images = np.empty((n, channels, image_size, image_size))
    for i, y in enumerate(labels):
        img = protos[y]
        if max_shift:
            dy, dx = rng.integers(-max_shift, max_shift + 1, 2)
            img = _shift(img, int(dy), int(dx))
        if difficulty > 0:
            other = (y + rng.integers(1, classes)) % classes if classes > 1 else y
            odx, ody = rng.integers(-max_shift, max_shift + 1, 2) if max_shift else (0, 0)
            img = img + 0.45 * difficulty * rng.uniform(0.5, 1.0) * _shift(protos[other], int(ody), int(odx))
            img = img * rng.uniform(0.7, 1.0) + rng.normal(0.0, 0.2 * difficulty, img.shape)
        images[i] = img
    return Dataset(np.clip(images, 0.0, 1.0), labels.astype(np.int64), classes)


# ---------------------------------------------------------------------------
# partitioning


def partition(dataset: Dataset, devices: int, samples_per_device: int, mode: str = "iid",
              seed: int = 0) -> list[np.ndarray]:
    """Disjoint per-device index arrays.

    ``iid`` draws uniformly without replacement.  ``non_iid_shards`` sorts the
    first ``devices * samples_per_device`` shuffled samples by label, cuts them
    into ``2 * devices`` shards and deals two random shards to every device.
    """
    need = devices * samples_per_device
    if devices < 1 or samples_per_device < 1:
        raise ValueError("devices and samples_per_device must be positive")
    if need > len(dataset):
        raise ValueError(f"need {need} samples for {devices} devices, dataset has {len(dataset)}")
    rng = np.random.default_rng(seed)
    if mode == "iid":
        perm = rng.permutation(len(dataset))[:need]
        return [np.sort(perm[i * samples_per_device:(i + 1) * samples_per_device]) for i in range(devices)]
    if mode == "non_iid_shards":
        if samples_per_device % 2:
            raise ValueError("non_iid_shards needs an even samples_per_device")
        chosen = rng.permutation(len(dataset))[:need]
        chosen = chosen[np.argsort(dataset.labels[chosen], kind="stable")]
        shard = samples_per_device // 2
        shards = chosen.reshape(2 * devices, shard)
        order = rng.permutation(2 * devices)
        return [np.sort(np.concatenate([shards[order[2 * i]], shards[order[2 * i + 1]]])) for i in range(devices)]
    raise ValueError(f"unknown partition mode {mode!r}")


# ---------------------------------------------------------------------------
# distortions


def rotate90(images: np.ndarray, times: int = 1) -> np.ndarray:
    return np.rot90(images, k=times, axes=(2, 3)).copy()


def color_jitter(images: np.ndarray, brightness: float = 0.5, contrast: float = 0.5,
                 saturation: float = 0.5) -> np.ndarray:
    """Scale brightness, contrast and saturation by the given factors (1.0 = unchanged)."""
    x = np.asarray(images, dtype=np.float64)
    if x.shape[1] < 2 and saturation != 1.0:
        raise ValueError("saturation jitter needs multi-channel images")
    x = x * brightness
    if contrast != 1.0:
        mean = _gray(x).mean(axis=(1, 2, 3), keepdims=True)
        x = mean + contrast * (x - mean)
    if saturation != 1.0:
        gray = _gray(x)
        x = gray + saturation * (x - gray)
    return np.clip(x, 0.0, 1.0)


def _gray(x: np.ndarray) -> np.ndarray:
    if x.shape[1] == 3:
        w = np.array([0.299, 0.587, 0.114])[None, :, None, None]
        return (x * w).sum(axis=1, keepdims=True)
    return x.mean(axis=1, keepdims=True)


def distort(dataset: Dataset, kind: str, seed: int = 0) -> Dataset:
    """Distorted copy for snapshot pre-training.

    Both transforms are deterministic; ``seed`` is accepted for interface
    symmetry with the other data operations.
    """
    del seed
    if kind == "rotate90":
        return Dataset(rotate90(dataset.images), dataset.labels, dataset.class_count)
    if kind == "color_jitter_half":
        if dataset.images.shape[1] < 2:
            raise ValueError("color_jitter_half needs multi-channel images; use rotate90 for grayscale")
        return Dataset(color_jitter(dataset.images), dataset.labels, dataset.class_count)
    raise ValueError(f"unknown distortion {kind!r}")
