"""Dataset ingestion and synthetic generators.

Supports the classic IDX image/label file pair, a deterministic 28x28
digit-image corpus built by upscaling and augmenting the bundled 8x8
handwritten digits (a desk-scale stand-in when the full corpus is not on
disk), and a seeded sparse-regression generator for recovery experiments.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import DataError

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


@dataclass
class Dataset:
    inputs: np.ndarray   # (N, C, H, W) or (N, F), float64 in [0, 1]
    labels: np.ndarray   # (N,) int64 class indices
    split: str
    n_classes: int = 10

    def __post_init__(self):
        if len(self.inputs) != len(self.labels):
            raise DataError("inputs and labels disagree on sample count")
        if len(self.labels) and self.labels.max() >= self.n_classes:
            raise DataError("label outside class range")

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, idx) -> "Dataset":
        return Dataset(self.inputs[idx], self.labels[idx], self.split, self.n_classes)


def stage_rng(seed: int, *stage: str | int) -> np.random.Generator:
    """Independent deterministic stream for one pipeline stage."""
    key = tuple(
        zlib.crc32(s.encode()) if isinstance(s, str) else int(s) for s in stage
    )
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=key))


# ---------------------------------------------------------------------------
# IDX files
# ---------------------------------------------------------------------------


def _read_exact(f, count: int, path) -> bytes:
    data = f.read(count)
    if len(data) != count:
        raise DataError(
            f"{path}: truncated at byte offset {f.tell()} (wanted {count} bytes, got {len(data)})"
        )
    return data


def load_idx_images(path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such file")
    with open(path, "rb") as f:
        magic, n, rows, cols = struct.unpack(">IIII", _read_exact(f, 16, path))
        if magic != IDX_IMAGE_MAGIC:
            raise DataError(
                f"{path}: expected image magic 0x{IDX_IMAGE_MAGIC:08x}, got 0x{magic:08x}"
            )
        payload = _read_exact(f, n * rows * cols, path)
    return np.frombuffer(payload, dtype=np.uint8).reshape(n, rows, cols)


def load_idx_labels(path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such file")
    with open(path, "rb") as f:
        magic, n = struct.unpack(">II", _read_exact(f, 8, path))
        if magic != IDX_LABEL_MAGIC:
            raise DataError(
                f"{path}: expected label magic 0x{IDX_LABEL_MAGIC:08x}, got 0x{magic:08x}"
            )
        payload = _read_exact(f, n, path)
    return np.frombuffer(payload, dtype=np.uint8).astype(np.int64)


def load_mnist(directory) -> tuple[Dataset, Dataset]:
    """Both splits from the standard IDX file names, pixels scaled by 1/255."""
    directory = Path(directory)
    out = []
    for split, (img_name, lbl_name) in MNIST_FILES.items():
        images = load_idx_images(directory / img_name)
        labels = load_idx_labels(directory / lbl_name)
        if len(images) != len(labels):
            raise DataError(f"{directory}: image/label counts differ for split '{split}'")
        inputs = images.astype(np.float64)[:, None, :, :] / 255.0
        out.append(Dataset(inputs, labels, split))
    return out[0], out[1]


# ---------------------------------------------------------------------------
# synthetic 28x28 digit corpus
# ---------------------------------------------------------------------------

_DIGITS_CACHE: dict[str, np.ndarray] = {}


def _base_digits() -> tuple[np.ndarray, np.ndarray]:
    if "images" not in _DIGITS_CACHE:
        from sklearn.datasets import load_digits

        raw = load_digits()
        _DIGITS_CACHE["images"] = raw.images / 16.0  # (1797, 8, 8) in [0, 1]
        _DIGITS_CACHE["labels"] = raw.target.astype(np.int64)
    return _DIGITS_CACHE["images"], _DIGITS_CACHE["labels"]


_GRID = np.stack(np.meshgrid(np.arange(28.0), np.arange(28.0), indexing="ij"), axis=-1)


def _add_clutter_strokes(out: np.ndarray, rng: np.random.Generator, level: float) -> None:
    """Random distractor line segments the model has to learn to ignore."""
    for _ in range(rng.integers(1, 4)):
        a = rng.uniform(2.0, 26.0, size=2)
        b = a + rng.uniform(-9.0, 9.0, size=2)
        seg = b - a
        seg_len_sq = max(float(seg @ seg), 1e-6)
        t = np.clip(((_GRID - a) @ seg) / seg_len_sq, 0.0, 1.0)
        dist = np.linalg.norm(_GRID - (a + t[..., None] * seg), axis=-1)
        width = rng.uniform(0.45, 0.8)
        intensity = rng.uniform(0.35, 0.75) * level
        out += intensity * np.maximum(1.0 - (dist / width) ** 2, 0.0)


def _render(
    img8: np.ndarray, rng: np.random.Generator, strength: float, clutter: float
) -> np.ndarray:
    """One 28x28 sample: randomized affine placement of an 8x8 glyph plus
    clutter strokes and pixel noise."""
    angle = np.deg2rad(rng.uniform(-14.0, 14.0) * strength)
    scale = 1.0 + rng.uniform(-0.14, 0.14) * strength
    shear = rng.uniform(-0.18, 0.18) * strength
    shift = rng.uniform(-2.2, 2.2, size=2) * strength
    zoom = (28.0 / 8.0) * 0.78 * scale

    cos, sin = np.cos(angle), np.sin(angle)
    fwd = zoom * np.array([[cos, -sin], [sin, cos]]) @ np.array([[1.0, shear], [0.0, 1.0]])
    inv = np.linalg.inv(fwd)
    center_out = np.array([13.5, 13.5]) + shift
    center_in = np.array([3.5, 3.5])
    offset = center_in - inv @ center_out

    out = ndimage.affine_transform(
        img8, inv, offset=offset, output_shape=(28, 28), order=1, mode="constant", cval=0.0
    )
    out *= rng.uniform(0.75, 1.0)
    if clutter > 0.0:
        _add_clutter_strokes(out, rng, clutter)
    out += rng.normal(0.0, 0.02 + 0.04 * strength, size=out.shape)
    return np.clip(out, 0.0, 1.0)


def generate_digits(
    n_train: int = 8000,
    n_test: int = 2000,
    seed: int = 0,
    *,
    train_strength: float = 1.0,
    test_strength: float = 0.35,
    clutter: float = 1.0,
) -> tuple[Dataset, Dataset]:
    """Deterministic 28x28 digit corpus with disjoint base images per split.

    Affine jitter is split-scaled (heavy train, light test); clutter strokes
    apply at full level to both splits so test difficulty is real.
    """
    images, labels = _base_digits()
    rng = stage_rng(seed, "digits28")
    perm = rng.permutation(len(images))
    n_test_bases = max(len(images) // 5, 1)
    splits = {
        "test": (perm[:n_test_bases], n_test, test_strength),
        "train": (perm[n_test_bases:], n_train, train_strength),
    }
    out = {}
    for split, (bases, count, strength) in splits.items():
        split_rng = stage_rng(seed, "digits28", split)
        xs = np.empty((count, 1, 28, 28))
        ys = np.empty(count, dtype=np.int64)
        for i in range(count):
            base = bases[i % len(bases)]
            xs[i, 0] = _render(images[base], split_rng, strength, clutter)
            ys[i] = labels[base]
        out[split] = Dataset(xs, ys, split)
    return out["train"], out["test"]


# ---------------------------------------------------------------------------
# sparse regression instances
# ---------------------------------------------------------------------------


@dataclass
class SparseRegression:
    design: np.ndarray        # (m, n) standard-normal design
    targets: np.ndarray       # (m,)
    true_weights: np.ndarray  # (n,) exactly k nonzeros
    support: np.ndarray       # sorted indices of the nonzeros


def gen_sparse_regression(
    n_features: int, k_nonzero: int, n_samples: int, noise_sigma: float, seed: int
) -> SparseRegression:
    if n_features < 1 or n_samples < 1:
        raise DataError("dimensions must be positive")
    if k_nonzero > n_features:
        raise DataError(f"sparsity {k_nonzero} exceeds dimension {n_features}")
    rng = stage_rng(seed, "sparse-regression")
    design = rng.standard_normal((n_samples, n_features))
    support = np.sort(rng.choice(n_features, size=k_nonzero, replace=False))
    weights = np.zeros(n_features)
    weights[support] = rng.uniform(0.5, 1.5, size=k_nonzero) * rng.choice([-1.0, 1.0], size=k_nonzero)
    targets = design @ weights + noise_sigma * rng.standard_normal(n_samples)
    return SparseRegression(design, targets, weights, support)
