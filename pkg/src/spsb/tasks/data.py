"""Datasets: random binary memorisation data and pooled IDX images."""
from __future__ import annotations

import gzip
import math
import struct
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from ..errors import ConfigurationError, DataError
from .streams import DATA, substream

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    n_classes: int = 2
    provenance: str = "synthetic-random"

    def __post_init__(self) -> None:
        self.features = np.asarray(self.features, dtype=float)
        self.labels = np.asarray(self.labels, dtype=int)
        if self.features.ndim != 2 or self.features.shape[0] != self.labels.shape[0]:
            raise DataError(
                f"features {self.features.shape} and labels {self.labels.shape} disagree"
            )
        if not np.all(np.isfinite(self.features)):
            raise DataError("features contain missing or non-finite values")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise DataError(f"labels outside [0, {self.n_classes})")

    def __len__(self) -> int:
        return self.labels.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]


def gen_random_dataset(n_points: int = 100, n_features: int = 5, seed: int = 0) -> Dataset:
    """Uniform features on [0, pi] with Bernoulli(1/2) labels. No split: the
    task is pure memorisation."""
    if n_features < 1 or n_points < 1:
        raise ConfigurationError("n_points and n_features must be >= 1")
    rng = substream(seed, DATA)
    features = rng.uniform(0.0, math.pi, size=(n_points, n_features))
    labels = rng.integers(0, 2, size=n_points)
    return Dataset(features, labels, 2, "synthetic-random")


# --- IDX -----------------------------------------------------------------------


def _read_bytes(path: Path) -> bytes:
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise DataError(f"{path}: cannot read ({exc.strerror})") from exc
    if raw[:2] == b"\x1f\x8b":
        try:
            raw = gzip.decompress(raw)
        except OSError as exc:
            raise DataError(f"{path}: corrupt gzip stream") from exc
    return raw


def read_idx(path, expected_magic: int | None = None) -> np.ndarray:
    """Parse an IDX file (optionally gzip-compressed) of unsigned bytes."""
    path = Path(path)
    raw = _read_bytes(path)
    if len(raw) < 4:
        raise DataError(f"{path}: truncated header at offset 0")
    (magic,) = struct.unpack(">I", raw[:4])
    if expected_magic is not None and magic != expected_magic:
        raise DataError(
            f"{path}: bad magic 0x{magic:08x} at offset 0, expected 0x{expected_magic:08x}"
        )
    if magic >> 8 != 0x08:
        raise DataError(f"{path}: unsupported IDX data type in magic 0x{magic:08x} at offset 0")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if ndim < 1 or len(raw) < header:
        raise DataError(f"{path}: truncated dimension list at offset 4")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    size = int(np.prod(dims))
    if len(raw) - header < size:
        raise DataError(
            f"{path}: expected {size} data bytes at offset {header}, found {len(raw) - header}"
        )
    return np.frombuffer(raw, dtype=np.uint8, count=size, offset=header).reshape(dims)


def write_idx(path, array: np.ndarray, compress: bool | None = None) -> None:
    array = np.ascontiguousarray(array, dtype=np.uint8)
    header = struct.pack(">I", 0x0800 | array.ndim) + struct.pack(f">{array.ndim}I", *array.shape)
    payload = header + array.tobytes()
    path = Path(path)
    if compress if compress is not None else path.suffix == ".gz":
        payload = gzip.compress(payload, mtime=0)
    path.write_bytes(payload)


def pool_images(images: np.ndarray, factor: int = 7) -> np.ndarray:
    """Non-overlapping ``factor x factor`` average pooling of (N, H, W) images."""
    images = np.asarray(images, dtype=float)
    n, h, w = images.shape
    if h % factor or w % factor:
        raise DataError(f"image size {h}x{w} is not divisible by pooling factor {factor}")
    return images.reshape(n, h // factor, factor, w // factor, factor).mean(axis=(2, 4))


def load_pooled_images(
    images_path,
    labels_path,
    classes: tuple[int, int] = (3, 6),
    count: int = 1000,
    size: int = 4,
) -> Dataset:
    """Filter an IDX image/label pair to two digits, pool to ``size x size`` and
    scale pixels to [0, pi]. The first class becomes label 0."""
    images = read_idx(images_path, IDX_IMAGES_MAGIC)
    labels = read_idx(labels_path, IDX_LABELS_MAGIC)
    if images.ndim != 3:
        raise DataError(f"{images_path}: expected 3 dimensions, got {images.ndim}")
    if labels.shape[0] != images.shape[0]:
        raise DataError(
            f"{labels_path}: {labels.shape[0]} labels for {images.shape[0]} images"
        )
    if images.shape[1] % size or images.shape[2] % size or images.shape[1] != images.shape[2]:
        raise DataError(f"{images_path}: {images.shape[1]}x{images.shape[2]} cannot pool to {size}x{size}")
    idx = np.flatnonzero(np.isin(labels, classes))
    if idx.size < count:
        raise DataError(
            f"{labels_path}: only {idx.size} images with labels {classes}, need {count}"
        )
    idx = idx[:count]
    pooled = pool_images(images[idx], images.shape[1] // size)
    features = pooled.reshape(count, -1) / 255.0 * math.pi
    targets = (labels[idx] == classes[1]).astype(int)
    return Dataset(features, targets, 2, "image-pooled")


# --- bundled synthetic fixture ----------------------------------------------------

FIXTURE_IMAGES = "synthetic-images-idx3-ubyte.gz"
FIXTURE_LABELS = "synthetic-labels-idx1-ubyte.gz"


def fixture_paths() -> tuple[Path, Path]:
    base = resources.files("spsb") / "data"
    return Path(str(base / FIXTURE_IMAGES)), Path(str(base / FIXTURE_LABELS))


def _stroke(canvas: np.ndarray, ys: np.ndarray, xs: np.ndarray, width: float, level: float) -> None:
    yy, xx = np.mgrid[0 : canvas.shape[0], 0 : canvas.shape[1]]
    d2 = np.min((yy[..., None] - ys) ** 2 + (xx[..., None] - xs) ** 2, axis=-1)
    ink = level * np.clip(1.5 - np.sqrt(d2) / width, 0.0, 1.0)
    np.maximum(canvas, ink, out=canvas)


def _glyph(digit: int, rng: np.random.Generator) -> np.ndarray:
    canvas = np.zeros((28, 28))
    dy, dx = rng.uniform(-4.0, 4.0, size=2)
    sy, sx = rng.uniform(0.75, 1.25, size=2)
    slant = rng.uniform(-0.35, 0.35)
    width = rng.uniform(1.0, 2.4)
    level = rng.uniform(150, 255)
    t = np.linspace(0, 1, 40)

    def draw(ys, xs):
        ys = 14 + sy * (ys - 14)
        xs = 14 + sx * (xs - 14) + slant * (ys - 14)
        _stroke(canvas, ys + dy, xs + dx, width, level)

    if digit == 3:
        for cy in (9.0, 19.0):
            draw(cy - 4.5 * np.cos(np.pi * t), 14 + 5.0 * np.sin(np.pi * t))
        draw(14 + 0 * t, 12 + 5 * t)
    elif digit == 6:
        a = 2 * np.pi * t
        draw(18.5 + 4.5 * np.sin(a), 12.5 + 4.5 * np.cos(a))
        draw(18 - 13 * t, 8 + 7 * t**2)
    else:
        draw(4 + 20 * t, 14 + 2 * t)
    if rng.random() < 0.3:
        y0, x0 = rng.uniform(3, 25, size=2)
        ang = rng.uniform(0, np.pi)
        draw(y0 + 8 * t * np.sin(ang), x0 + 8 * t * np.cos(ang))
    canvas += rng.uniform(0, 60, size=canvas.shape) * (rng.random(canvas.shape) < 0.08)
    return np.clip(canvas, 0, 255).astype(np.uint8)


def make_synthetic_idx(
    directory,
    n_two_class: int = 1000,
    n_other: int = 100,
    seed: int = 2023,
) -> tuple[Path, Path]:
    """Write a gzip IDX pair of blob-like '3' and '6' surrogates plus a few '1's
    that the loader must filter out. Output is byte-identical for a given seed."""
    rng = np.random.default_rng(seed)
    labels = rng.choice([3, 6], size=n_two_class)
    others = np.full(n_other, 1)
    all_labels = np.concatenate([labels, others])
    order = rng.permutation(all_labels.size)
    all_labels = all_labels[order]
    images = np.stack([_glyph(int(d), rng) for d in all_labels])
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    img_path, lbl_path = directory / FIXTURE_IMAGES, directory / FIXTURE_LABELS
    write_idx(img_path, images)
    write_idx(lbl_path, all_labels.astype(np.uint8))
    return img_path, lbl_path
