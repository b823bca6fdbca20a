"""Datasets, spike encoding, and the IDX binary container.

The toolkit trains on small image sets: either IDX files (the classic
MNIST container: big-endian magic + dims, unsigned-byte pixels scaled by
1/255) or a built-in synthetic digit generator.

Synthetic digits: each class is a fixed template bitmap built from two
thick strokes (bars and diagonals) chosen so every pair of class templates
differs in at least 25% of pixels; images are the template plus seeded
uniform noise, clamped to [0, 1]. The pairwise-distance audit runs at
generation time, so a dataset that violates separation cannot be produced
silently.

Encoders turn [0,1] images into a (T, B, C, H, W) input train:

* ``direct_current``: the pixel value is injected as an identical analog
  current at every timestep (default; zero input variance).
* ``rate_bernoulli``: every slot is an independent Bernoulli(pixel) draw,
  giving a binary spike train whose rate encodes intensity.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .numerics import as_tensor, make_rng

DIRECT_CURRENT = "direct_current"
RATE_BERNOULLI = "rate_bernoulli"
ENCODER_KINDS = (RATE_BERNOULLI, DIRECT_CURRENT)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    """IDX file is malformed (bad magic, truncation, or count mismatch)."""


@dataclass(frozen=True)
class LabeledDataset:
    images: np.ndarray  # (N, C, H, W) float64 in [0, 1]
    labels: np.ndarray  # (N,) int64 class indices
    num_classes: int

    def __post_init__(self):
        imgs = as_tensor(self.images)
        labels = np.asarray(self.labels, dtype=np.int64)
        if imgs.ndim != 4:
            raise ValueError(f"images must be (N, C, H, W), got {imgs.shape}")
        if labels.shape != (imgs.shape[0],):
            raise ValueError(f"labels shape {labels.shape} != ({imgs.shape[0]},)")
        if imgs.shape[0] < 1:
            raise ValueError("dataset must contain at least one image")
        if imgs.min() < 0.0 or imgs.max() > 1.0:
            raise ValueError("image values must lie in [0, 1]")
        if labels.min() < 0 or labels.max() >= self.num_classes:
            raise ValueError(f"labels must lie in [0, {self.num_classes})")
        object.__setattr__(self, "images", imgs)
        object.__setattr__(self, "labels", labels)

    @property
    def input_shape(self) -> tuple[int, int, int]:
        return tuple(self.images.shape[1:])


@dataclass(frozen=True)
class Encoder:
    kind: str
    timesteps: int

    def __post_init__(self):
        if self.kind not in ENCODER_KINDS:
            raise ValueError(f"unknown encoder {self.kind!r}, expected one of {ENCODER_KINDS}")
        if self.timesteps < 1:
            raise ValueError(f"timesteps must be >= 1, got {self.timesteps}")


def load_idx(images_path, labels_path) -> LabeledDataset:
    """Load an MNIST-style IDX image/label file pair."""
    with open(images_path, "rb") as f:
        header = f.read(16)
        if len(header) < 16:
            raise IdxFormatError(f"{images_path}: truncated IDX image header")
        magic, n, rows, cols = struct.unpack(">IIII", header)
        if magic != IDX_IMAGES_MAGIC:
            raise IdxFormatError(
                f"{images_path}: bad image magic 0x{magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x}"
            )
        pixels = f.read(n * rows * cols)
    if len(pixels) < n * rows * cols:
        raise IdxFormatError(f"{images_path}: truncated pixel data ({len(pixels)} bytes)")
    with open(labels_path, "rb") as f:
        header = f.read(8)
        if len(header) < 8:
            raise IdxFormatError(f"{labels_path}: truncated IDX label header")
        magic, n_labels = struct.unpack(">II", header)
        if magic != IDX_LABELS_MAGIC:
            raise IdxFormatError(
                f"{labels_path}: bad label magic 0x{magic:08x}, expected 0x{IDX_LABELS_MAGIC:08x}"
            )
        raw_labels = f.read(n_labels)
    if len(raw_labels) < n_labels:
        raise IdxFormatError(f"{labels_path}: truncated label data")
    if n != n_labels:
        raise IdxFormatError(f"image count {n} != label count {n_labels}")
    images = np.frombuffer(pixels, dtype=np.uint8).reshape(n, 1, rows, cols) / 255.0
    labels = np.frombuffer(raw_labels, dtype=np.uint8).astype(np.int64)
    return LabeledDataset(images, labels, num_classes=int(labels.max()) + 1)


def save_idx(dataset: LabeledDataset, images_path, labels_path) -> None:
    """Write a dataset as an IDX pair (pixels quantized to bytes)."""
    n, c, h, w = dataset.images.shape
    if c != 1:
        raise ValueError("IDX container stores single-channel images only")
    pixels = np.round(dataset.images * 255.0).astype(np.uint8)
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, h, w))
        f.write(pixels.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABELS_MAGIC, n))
        f.write(dataset.labels.astype(np.uint8).tobytes())


def _stroke_masks(side: int) -> dict[str, np.ndarray]:
    """Thick bar/diagonal strokes on a side x side grid."""
    t = max(1, round(side / 4))
    mid = (side - t) // 2
    ii, jj = np.meshgrid(np.arange(side), np.arange(side), indexing="ij")
    masks = {
        "h_top": ii < t,
        "h_mid": (ii >= mid) & (ii < mid + t),
        "h_bot": ii >= side - t,
        "v_left": jj < t,
        "v_mid": (jj >= mid) & (jj < mid + t),
        "v_right": jj >= side - t,
        "diag_dn": np.abs(ii - jj) < t,
        "diag_up": np.abs(ii + jj - (side - 1)) < t,
    }
    return masks


# Two strokes per class. Any two classes share at most one stroke, and
# classes sharing a stroke have parallel unique strokes, so the pairwise
# template distance stays above the 25%-of-pixels floor the audit enforces.
_CLASS_STROKES = [
    ("v_left", "v_right"),  # 0
    ("v_left", "v_mid"),  # 1
    ("v_mid", "v_right"),  # 2
    ("h_top", "h_mid"),  # 3
    ("h_top", "h_bot"),  # 4
    ("h_mid", "h_bot"),  # 5
    ("diag_dn", "diag_up"),  # 6
    ("h_top", "v_right"),  # 7
    ("h_bot", "v_mid"),  # 8
    ("v_left", "h_mid"),  # 9
]


def class_templates(classes: int, side: int) -> np.ndarray:
    """(classes, side, side) binary templates, audited for separation."""
    if classes > len(_CLASS_STROKES):
        raise ValueError(f"at most {len(_CLASS_STROKES)} distinct class templates, got {classes}")
    if classes < 1:
        raise ValueError("need at least one class")
    if side < 5:
        raise ValueError(f"side must be >= 5, got {side}")
    masks = _stroke_masks(side)
    templates = np.zeros((classes, side, side))
    for c in range(classes):
        for stroke in _CLASS_STROKES[c]:
            templates[c][masks[stroke]] = 1.0
    min_dist = int(np.ceil(0.25 * side * side))
    for a in range(classes):
        for b in range(a + 1, classes):
            dist = int(np.sum(templates[a] != templates[b]))
            if dist < min_dist:
                raise ValueError(
                    f"template audit failed: classes {a} and {b} differ in {dist} "
                    f"pixels, need >= {min_dist}"
                )
    return templates


def synth_digits(n_per_class: int, classes: int, side: int, noise: float, seed: int) -> LabeledDataset:
    """Deterministic synthetic digit dataset: templates + uniform noise.

    Every image is its class template perturbed by noise * U(-1, 1) per
    pixel and clamped to [0, 1]. noise=0 makes same-class images identical.
    """
    if n_per_class < 1:
        raise ValueError("n_per_class must be >= 1")
    if noise < 0:
        raise ValueError("noise must be >= 0")
    templates = class_templates(classes, side)
    rng = make_rng(seed)
    n = n_per_class * classes
    images = np.zeros((n, 1, side, side))
    labels = np.zeros(n, dtype=np.int64)
    for c in range(classes):
        block = slice(c * n_per_class, (c + 1) * n_per_class)
        jitter = noise * rng.uniform(-1.0, 1.0, size=(n_per_class, 1, side, side))
        images[block] = np.clip(templates[c][None, None] + jitter, 0.0, 1.0)
        labels[block] = c
    return LabeledDataset(images, labels, num_classes=classes)


def split_train_test(dataset: LabeledDataset, train_frac: float, seed: int):
    """Seeded shuffle split into (train, test); test gets the remainder."""
    if not 0.0 < train_frac < 1.0:
        raise ValueError(f"train_frac must be in (0, 1), got {train_frac}")
    n = dataset.images.shape[0]
    order = make_rng(seed).permutation(n)
    n_train = int(round(n * train_frac))
    if n_train == 0 or n_train == n:
        raise ValueError(f"split leaves an empty side (n={n}, train_frac={train_frac})")
    tr, te = order[:n_train], order[n_train:]
    return (
        LabeledDataset(dataset.images[tr], dataset.labels[tr], dataset.num_classes),
        LabeledDataset(dataset.images[te], dataset.labels[te], dataset.num_classes),
    )


def encode(images: np.ndarray, enc: Encoder, rng: np.random.Generator) -> np.ndarray:
    """Encode (B, C, H, W) images into a (T, B, C, H, W) input train."""
    images = as_tensor(images)
    if images.min() < 0.0 or images.max() > 1.0:
        raise ValueError("encoder input values must lie in [0, 1]")
    shape = (enc.timesteps,) + images.shape
    if enc.kind == DIRECT_CURRENT:
        return np.broadcast_to(images, shape).copy()
    return (rng.random(shape) < images).astype(np.float64)
