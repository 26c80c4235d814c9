"""Datasets, low-data subsampling, hand-crafted augmentation and file ingestion."""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, NamedTuple, Sequence

import numpy as np

from .errors import ConfigError, FormatError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class LabeledSample(NamedTuple):
    x: np.ndarray
    y: int


@dataclass(frozen=True)
class Dataset:
    """Immutable labeled samples with values in [-1, 1] and 1-based labels.

    ``grid`` is ``(h, w, c)`` for image data (rows of ``x`` are the
    row-major flattening of each image) and ``None`` for plain vectors.
    """

    x: np.ndarray
    y: np.ndarray
    k: int
    grid: tuple[int, int, int] | None = None

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.int64).reshape(-1)
        if x.ndim != 2:
            raise ConfigError(f"samples must be a 2-D array, got shape {x.shape}")
        if x.shape[0] != y.size:
            raise ConfigError(f"{x.shape[0]} samples but {y.size} labels")
        if y.size == 0:
            raise ConfigError("empty dataset")
        if self.k < 1 or y.min() < 1 or y.max() > self.k:
            raise ConfigError(f"labels must lie in 1..{self.k}")
        if not np.all(np.isfinite(x)) or x.min() < -1.0 or x.max() > 1.0:
            raise ConfigError("sample values must lie in [-1, 1]")
        if self.grid is not None and int(np.prod(self.grid)) != x.shape[1]:
            raise ConfigError(f"grid {self.grid} does not match feature width {x.shape[1]}")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    def __len__(self) -> int:
        return self.y.size

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    @property
    def samples(self) -> Iterator[LabeledSample]:
        return (LabeledSample(xi, int(yi)) for xi, yi in zip(self.x, self.y))

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.y, minlength=self.k + 1)[1:]

    def take(self, idx) -> "Dataset":
        return Dataset(self.x[idx], self.y[idx], self.k, self.grid)

    def images(self) -> np.ndarray:
        if self.grid is None:
            raise ConfigError("dataset has vector layout, not grid")
        return self.x.reshape((-1,) + tuple(self.grid))


def concat_datasets(a: Dataset, b: Dataset) -> Dataset:
    if a.k != b.k or a.grid != b.grid or a.dim != b.dim:
        raise ConfigError("datasets differ in class count or layout")
    return Dataset(np.vstack([a.x, b.x]), np.concatenate([a.y, b.y]), a.k, a.grid)


# -- synthetic data ---------------------------------------------------------------


def circle_means(k: int, radius: float = 2.0, dim: int = 2) -> np.ndarray:
    """k means evenly spaced on a circle in the first two coordinates."""
    ang = 2.0 * np.pi * np.arange(k) / k
    means = np.zeros((k, max(dim, 2)))
    means[:, 0] = radius * np.cos(ang)
    means[:, 1] = radius * np.sin(ang)
    return means[:, :dim] if dim >= 2 else means[:, :1]


def mixture_bound(means: np.ndarray, sigma: float) -> float:
    """Half-width of the box that synthetic draws are clipped to before scaling."""
    return float(np.abs(means).max() + 4.0 * sigma)


def gen_gaussian_mixture(
    k: int,
    n_per_class: int,
    means=None,
    sigma: float = 1.0,
    seed: int = 0,
    bound: float | None = None,
) -> Dataset:
    """n_per_class draws per class from N(mean_i, sigma^2 I), clipped and scaled into [-1, 1].

    ``bound`` (default: largest |mean| + 4 sigma) fixes the clipping box so that
    training and test draws share one scale.
    """
    means = circle_means(k) if means is None else np.atleast_2d(np.asarray(means, dtype=np.float64))
    if means.shape[0] < k:
        raise ConfigError(f"{means.shape[0]} means given for k={k} classes")
    if sigma <= 0:
        raise ConfigError("sigma must be positive")
    if n_per_class < 1:
        raise ConfigError("n_per_class must be >= 1 (empty dataset)")
    means = means[:k]
    bound = mixture_bound(means, sigma) if bound is None else float(bound)
    rng = np.random.default_rng(seed)
    y = np.repeat(np.arange(1, k + 1), n_per_class)
    x = means[y - 1] + sigma * rng.standard_normal((y.size, means.shape[1]))
    x = np.clip(x, -bound, bound) / bound
    return Dataset(x, y, k)


# -- subsampling and splitting ---------------------------------------------------------


@dataclass(frozen=True)
class SubsampleSpec:
    n_per_class: int
    seed: int = 0


def subsample(d: Dataset, spec: SubsampleSpec) -> Dataset:
    """Exactly ``n_per_class`` samples of every class, drawn without replacement."""
    if spec.n_per_class < 1:
        raise ConfigError("n_per_class must be positive")
    rng = np.random.default_rng(spec.seed)
    picks = []
    for c in range(1, d.k + 1):
        idx = np.flatnonzero(d.y == c)
        if idx.size < spec.n_per_class:
            raise ConfigError(f"class {c} has {idx.size} samples, fewer than n_per_class={spec.n_per_class}")
        picks.append(rng.choice(idx, size=spec.n_per_class, replace=False))
    return d.take(np.concatenate(picks))


def split(d: Dataset, test_fraction: float, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Stratified train/test partition."""
    if not 0 < test_fraction < 1:
        raise ConfigError("test_fraction must lie strictly between 0 and 1")
    rng = np.random.default_rng(seed)
    train_idx, test_idx = [], []
    for c in range(1, d.k + 1):
        idx = np.flatnonzero(d.y == c)
        if idx.size < 2:
            raise ConfigError(f"class {c} has {idx.size} samples; stratified split needs at least 2")
        idx = rng.permutation(idx)
        n_test = min(max(1, int(round(test_fraction * idx.size))), idx.size - 1)
        test_idx.append(idx[:n_test])
        train_idx.append(idx[n_test:])
    return d.take(np.concatenate(train_idx)), d.take(np.concatenate(test_idx))


# -- traditional augmentation ------------------------------------------------------


@dataclass(frozen=True)
class AugmentOps:
    """Which label-preserving transforms to use and their maximum magnitudes.

    ``rotate`` is in degrees, ``translate`` in grid cells, ``jitter`` the
    std of additive Gaussian noise. Zero (or False) disables an op.
    """

    rotate: float = 0.0
    translate: int = 0
    flip_h: bool = False
    jitter: float = 0.0

    def enabled(self) -> list[str]:
        names = []
        if self.rotate:
            names.append("rotate")
        if self.translate:
            names.append("translate")
        if self.flip_h:
            names.append("flip_h")
        if self.jitter:
            names.append("jitter")
        return names

    @property
    def is_empty(self) -> bool:
        return not self.enabled()


def flip_h(img: np.ndarray) -> np.ndarray:
    return img[:, ::-1]


def translate(img: np.ndarray, dy: int, dx: int, fill: float = -1.0) -> np.ndarray:
    """Shift by whole cells; vacated cells take ``fill``."""
    h, w = img.shape[:2]
    out = np.full_like(img, fill)
    src_y = slice(max(0, -dy), min(h, h - dy))
    dst_y = slice(max(0, dy), min(h, h + dy))
    src_x = slice(max(0, -dx), min(w, w - dx))
    dst_x = slice(max(0, dx), min(w, w + dx))
    if src_y.start < src_y.stop and src_x.start < src_x.stop:
        out[dst_y, dst_x] = img[src_y, src_x]
    return out


def rotate(img: np.ndarray, degrees: float) -> np.ndarray:
    """Rotate counter-clockwise about the grid centre.

    Nearest-neighbour sampling; source cells outside the grid clamp to the edge.
    """
    h, w = img.shape[:2]
    th = np.deg2rad(degrees)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.mgrid[0:h, 0:w]
    # inverse map: output cell -> source cell
    sy = np.cos(th) * (yy - cy) + np.sin(th) * (xx - cx) + cy
    sx = -np.sin(th) * (yy - cy) + np.cos(th) * (xx - cx) + cx
    sy = np.clip(np.rint(sy), 0, h - 1).astype(np.int64)
    sx = np.clip(np.rint(sx), 0, w - 1).astype(np.int64)
    return img[sy, sx]


def _apply(op: str, x: np.ndarray, grid, ops: AugmentOps, rng: np.random.Generator) -> np.ndarray:
    if op == "jitter":
        return x + rng.normal(0.0, ops.jitter, size=x.shape)
    img = x.reshape(grid)
    if op == "flip_h":
        img = flip_h(img)
    elif op == "rotate":
        img = rotate(img, rng.uniform(-ops.rotate, ops.rotate))
    elif op == "translate":
        t = int(ops.translate)
        img = translate(img, int(rng.integers(-t, t + 1)), int(rng.integers(-t, t + 1)))
    return img.reshape(-1)


def traditional_augment(d: Dataset, ops: AugmentOps, multiplier: int = 10, seed: int = 0) -> Dataset:
    """Grow ``d`` to ``multiplier * len(d)`` samples.

    The originals come first; each source sample then contributes
    ``multiplier - 1`` copies, each transformed by one randomly chosen enabled op.
    """
    if multiplier < 1:
        raise ConfigError("multiplier must be >= 1")
    names = ops.enabled()
    if d.grid is None and any(n != "jitter" for n in names):
        raise ConfigError("rotate/translate/flip_h need grid data; vector data supports jitter only")
    if multiplier == 1:
        return d
    if not names:
        raise ConfigError("no augmentation ops enabled")
    rng = np.random.default_rng(seed)
    xs = [d.x]
    ys = [d.y]
    extra = np.empty(((multiplier - 1) * len(d), d.dim))
    src = np.tile(np.arange(len(d)), multiplier - 1)
    for row, i in enumerate(src):
        op = names[int(rng.integers(len(names)))]
        extra[row] = _apply(op, d.x[i], d.grid, ops, rng)
    xs.append(np.clip(extra, -1.0, 1.0))
    ys.append(d.y[src])
    return Dataset(np.vstack(xs), np.concatenate(ys), d.k, d.grid)


# -- file ingestion ------------------------------------------------------------


def write_idx(images_path, labels_path, images: np.ndarray, labels: Sequence[int]) -> None:
    """Write u8 images (n, h, w) and 0-based u8 labels in IDX format."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, *images.shape))
        fh.write(images.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS_MAGIC, labels.size))
        fh.write(labels.tobytes())


def read_idx_raw(images_path, labels_path) -> tuple[np.ndarray, np.ndarray]:
    """u8 images (n, h, w) and 0-based u8 labels, exactly as stored."""
    img = Path(images_path).read_bytes()
    lab = Path(labels_path).read_bytes()
    if len(img) < 16:
        raise FormatError(f"{images_path}: truncated IDX header")
    if len(lab) < 8:
        raise FormatError(f"{labels_path}: truncated IDX header")
    magic, n, h, w = struct.unpack(">IIII", img[:16])
    if magic != IDX_IMAGES_MAGIC:
        raise FormatError(f"{images_path}: image magic 0x{magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x}")
    lmagic, nl = struct.unpack(">II", lab[:8])
    if lmagic != IDX_LABELS_MAGIC:
        raise FormatError(f"{labels_path}: label magic 0x{lmagic:08x}, expected 0x{IDX_LABELS_MAGIC:08x}")
    if n != nl:
        raise FormatError(f"{n} images but {nl} labels")
    if len(img) != 16 + n * h * w:
        raise FormatError(f"{images_path}: expected {16 + n * h * w} bytes, found {len(img)}")
    if len(lab) != 8 + n:
        raise FormatError(f"{labels_path}: expected {8 + n} bytes, found {len(lab)}")
    pixels = np.frombuffer(img, dtype=np.uint8, offset=16).reshape(n, h, w)
    labels = np.frombuffer(lab, dtype=np.uint8, offset=8)
    return pixels, labels


def load_idx(images_path, labels_path, k: int | None = None) -> Dataset:
    """IDX images and labels as a grid Dataset; pixels map to x / 127.5 - 1."""
    pixels, labels = read_idx_raw(images_path, labels_path)
    n, h, w = pixels.shape
    if n == 0:
        raise FormatError("IDX files contain no samples")
    x = pixels.reshape(n, h * w).astype(np.float64) / 127.5 - 1.0
    y = labels.astype(np.int64) + 1
    return Dataset(x, y, int(k or y.max()), (h, w, 1))


def load_csv(path, meta_path=None) -> Dataset:
    """CSV with header ``y,x1,...,xd`` and 1-based labels.

    Each feature column is min-max scaled to [-1, 1]. The ranges live in a
    JSON sidecar (``<path>.meta.json`` by default); if the sidecar already
    exists its ranges are reused, so a test file can share the training scale.
    """
    path = Path(path)
    meta_path = Path(meta_path) if meta_path else path.with_name(path.name + ".meta.json")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty file") from None
        if not header or header[0].strip() != "y":
            raise FormatError(f"{path}: header must start with 'y'")
        rows = [r for r in reader if r]
    if not rows:
        raise FormatError(f"{path}: no data rows")
    try:
        arr = np.array([[float(v) for v in r] for r in rows])
    except ValueError as e:
        raise FormatError(f"{path}: {e}") from None
    if arr.shape[1] != len(header):
        raise FormatError(f"{path}: rows do not match header width {len(header)}")
    y = arr[:, 0]
    if not np.all(y == np.round(y)):
        raise FormatError(f"{path}: labels must be integers")
    feats = arr[:, 1:]
    if meta_path.exists():
        meta = json.loads(meta_path.read_text())
        lo, hi = np.array(meta["min"]), np.array(meta["max"])
        k = int(meta["k"])
    else:
        lo, hi = feats.min(axis=0), feats.max(axis=0)
        k = int(y.max())
        meta_path.write_text(json.dumps({"columns": header[1:], "min": lo.tolist(), "max": hi.tolist(), "k": k}, indent=2))
    span = np.where(hi > lo, hi - lo, 1.0)
    x = np.clip(2.0 * (feats - lo) / span - 1.0, -1.0, 1.0)
    return Dataset(x, y.astype(np.int64), k)
