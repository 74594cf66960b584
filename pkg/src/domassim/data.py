"""Image loading, preprocessing, class grouping/balancing, synthetic textures and splits."""
from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy.ndimage import gaussian_filter

from .texture import LUMA

log = logging.getLogger(__name__)

IMAGE_EXTENSIONS = (".png", ".pgm")


@dataclass
class Dataset:
    """Labelled single-channel images with values in [0, 1]."""

    images: List[np.ndarray]
    labels: np.ndarray
    class_names: List[str]
    paths: Optional[List[Optional[str]]] = None
    seed: int = 0
    n_skipped: int = 0

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.images) != len(self.labels):
            raise ValueError("images and labels differ in length")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= len(self.class_names)):
            raise ValueError("label outside the class list")
        if self.paths is None:
            self.paths = [None] * len(self.images)

    def __len__(self):
        return len(self.images)

    @property
    def items(self):
        return list(zip(self.images, self.labels.tolist(), self.paths))

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=len(self.class_names))

    def batch(self) -> np.ndarray:
        """Images stacked as a float32 (N, 1, H, W) array."""
        shapes = {im.shape for im in self.images}
        if len(shapes) > 1:
            raise ValueError(f"images have differing shapes {sorted(shapes)}; preprocess first")
        return np.stack(self.images).astype(np.float32)[:, None]

    def subset(self, idx) -> "Dataset":
        idx = [int(i) for i in idx]
        return Dataset([self.images[i] for i in idx], self.labels[idx], list(self.class_names),
                       [self.paths[i] for i in idx], self.seed)


# --------------------------------------------------------------------------
# loading
# --------------------------------------------------------------------------

def _read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError(f"{path}: truncated PGM header")
        tokens.append(data[start:pos])
    magic, w, h, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    if not 0 < maxval < 65536:
        raise ValueError(f"{path}: bad PGM maxval {maxval}")
    if magic == b"P5":
        dtype = ">u1" if maxval < 256 else ">u2"
        arr = np.frombuffer(data, dtype=dtype, count=w * h, offset=pos + 1)
    elif magic == b"P2":
        arr = np.array(data[pos:].split()[:w * h], dtype=np.int64)
        if arr.size != w * h:
            raise ValueError(f"{path}: truncated PGM data")
    else:
        raise ValueError(f"{path}: not a PGM file")
    return arr.reshape(h, w).astype(np.float64) / maxval


def _read_png(path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        im.load()
        mode = im.mode
        if mode in ("I;16", "I;16B", "I;16L", "I"):
            arr = np.asarray(im, dtype=np.float64)
            return np.clip(arr / 65535.0, 0.0, 1.0)
        if mode in ("L", "P", "1", "LA"):
            return np.asarray(im.convert("L"), dtype=np.float64) / 255.0
        rgb = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return np.clip(rgb @ np.asarray(LUMA), 0.0, 1.0)


def read_image(path) -> np.ndarray:
    """Grayscale image scaled to [0, 1] by its format's maximum value."""
    ext = os.path.splitext(path)[1].lower()
    if ext == ".pgm":
        return _read_pgm(path).astype(np.float32)
    return _read_png(path).astype(np.float32)


def load_image_dir(root) -> Dataset:
    """Load ``root/<class_name>/*.{png,pgm}``; classes in lexicographic order."""
    classes = sorted(d for d in os.listdir(root) if os.path.isdir(os.path.join(root, d)))
    if not classes:
        raise ValueError(f"{root}: no class directories")
    images, labels, paths, skipped = [], [], [], 0
    for ci, name in enumerate(classes):
        cdir = os.path.join(root, name)
        n_before = len(images)
        for fname in sorted(os.listdir(cdir)):
            if os.path.splitext(fname)[1].lower() not in IMAGE_EXTENSIONS:
                continue
            path = os.path.join(cdir, fname)
            try:
                img = read_image(path)
            except Exception as exc:  # unreadable files are skipped, not fatal
                log.warning("skipping unreadable image %s: %s", path, exc)
                skipped += 1
                continue
            images.append(img)
            labels.append(ci)
            paths.append(path)
        if len(images) == n_before:
            raise ValueError(f"class directory {cdir} contains no readable images")
    if skipped:
        log.warning("%d unreadable file(s) skipped under %s", skipped, root)
    return Dataset(images, np.array(labels), classes, paths, n_skipped=skipped)


# --------------------------------------------------------------------------
# preprocessing
# --------------------------------------------------------------------------

@dataclass
class PreprocessSpec:
    resize_short_side: int = 32
    crop: int = 32

    def __post_init__(self):
        if self.crop > self.resize_short_side:
            raise ValueError("crop must not exceed resize_short_side")


def resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resampling with half-pixel centres and edge clamping."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape

    def axis(n_in, n_out):
        src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0.0, n_in - 1)
        i0 = np.floor(src).astype(np.int64)
        i1 = np.minimum(i0 + 1, n_in - 1)
        return i0, i1, src - i0

    r0, r1, fr = axis(h, out_h)
    c0, c1, fc = axis(w, out_w)
    top = img[r0][:, c0] * (1 - fc) + img[r0][:, c1] * fc
    bot = img[r1][:, c0] * (1 - fc) + img[r1][:, c1] * fc
    return top * (1 - fr)[:, None] + bot * fr[:, None]


def preprocess(image, spec: PreprocessSpec) -> np.ndarray:
    """Resize so the short side equals ``spec.resize_short_side``, then centre-crop."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2 or min(img.shape) < 2:
        raise ValueError(f"expected a 2-D image of at least 2x2, got shape {img.shape}")
    h, w = img.shape
    s = spec.resize_short_side
    if h <= w:
        nh, nw = s, max(s, int(round(w * s / h)))
    else:
        nh, nw = max(s, int(round(h * s / w))), s
    if (nh, nw) != (h, w):
        img = resize_bilinear(img, nh, nw)
    top, left = (nh - spec.crop) // 2, (nw - spec.crop) // 2
    out = img[top:top + spec.crop, left:left + spec.crop]
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def preprocess_dataset(ds: Dataset, spec: PreprocessSpec) -> Dataset:
    return Dataset([preprocess(im, spec) for im in ds.images], ds.labels.copy(), list(ds.class_names),
                   list(ds.paths), ds.seed, ds.n_skipped)


# --------------------------------------------------------------------------
# grouping, balancing, splitting
# --------------------------------------------------------------------------

def group_and_balance(ds: Dataset, grouping: Optional[Dict[str, str]] = None, seed: int = 0) -> Dataset:
    """Relabel classes through ``grouping`` and downsample every class to the smallest one."""
    grouping = grouping or {c: c for c in ds.class_names}
    missing = [c for c in ds.class_names if c not in grouping]
    if missing:
        raise ValueError(f"grouping does not cover classes {missing}")
    new_names = sorted(set(grouping[c] for c in ds.class_names))
    remap = np.array([new_names.index(grouping[c]) for c in ds.class_names], dtype=np.int64)
    labels = remap[ds.labels]
    sizes = np.bincount(labels, minlength=len(new_names))
    n_min = int(sizes.min())
    rng = np.random.default_rng(seed)
    keep = []
    for c in range(len(new_names)):
        idx = np.flatnonzero(labels == c)
        if len(idx) > n_min:
            idx = np.sort(rng.choice(idx, size=n_min, replace=False))
        keep.extend(idx.tolist())
    keep.sort()
    return Dataset([ds.images[i] for i in keep], labels[keep], new_names, [ds.paths[i] for i in keep], seed)


def split(ds: Dataset, train_fraction: float = 0.8, seed: int = 0):
    """Stratified, seeded train/test split."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must lie strictly between 0 and 1")
    rng = np.random.default_rng(seed)
    train_idx, test_idx = [], []
    for c in range(len(ds.class_names)):
        idx = np.flatnonzero(ds.labels == c)
        if len(idx) == 0:
            continue
        if len(idx) < 2:
            raise ValueError(f"class {ds.class_names[c]!r} has fewer than 2 items")
        idx = rng.permutation(idx)
        n_train = min(max(int(round(train_fraction * len(idx))), 1), len(idx) - 1)
        train_idx.extend(idx[:n_train].tolist())
        test_idx.extend(idx[n_train:].tolist())
    return ds.subset(sorted(train_idx)), ds.subset(sorted(test_idx))


# --------------------------------------------------------------------------
# synthetic textures
# --------------------------------------------------------------------------

SYNTH_CLASSES = ["smooth", "striped"]


def _recentre(img, mean=0.5):
    return np.clip(img - img.mean() + mean, 0.0, 1.0)


def _smooth_noise(rng, size):
    z = gaussian_filter(rng.standard_normal((size, size)), sigma=size / 10.0, mode="wrap")
    z = (z - z.mean()) / (z.std() + 1e-12)
    return _recentre(0.5 + 0.15 * z)


def _stripes(rng, size):
    theta = rng.uniform(0.0, np.pi)
    period = rng.uniform(3.0, 6.0)
    phase = rng.uniform(0.0, 2 * np.pi)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    wave = np.sin(2 * np.pi * (xx * np.cos(theta) + yy * np.sin(theta)) / period + phase)
    return _recentre(0.5 + 0.2 * wave + 0.05 * rng.standard_normal((size, size)))


def synth_textures(n_per_class: int, size: int = 32, seed: int = 0) -> Dataset:
    """Two texture classes with matched mean brightness.

    Class 0 is smoothed low-frequency noise, class 1 oriented high-frequency
    stripes plus noise; orientation, period and phase are drawn per image.
    """
    if size < 16:
        raise ValueError("synthetic images must be at least 16x16")
    rng = np.random.default_rng(seed)
    images, labels = [], []
    for label, gen in enumerate((_smooth_noise, _stripes)):
        for _ in range(n_per_class):
            images.append(gen(rng, size).astype(np.float32))
            labels.append(label)
    return Dataset(images, np.array(labels), list(SYNTH_CLASSES), seed=seed)


def write_dataset(ds: Dataset, out_dir) -> List[str]:
    """Write a dataset as 8-bit PNGs under ``out_dir/<class_name>/``."""
    from PIL import Image

    paths = []
    counters = [0] * len(ds.class_names)
    for img, label in zip(ds.images, ds.labels.tolist()):
        cdir = os.path.join(out_dir, ds.class_names[label])
        os.makedirs(cdir, exist_ok=True)
        path = os.path.join(cdir, f"{counters[label]:05d}.png")
        counters[label] += 1
        arr = np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
        Image.fromarray(arr).save(path, optimize=False)
        paths.append(path)
    return paths
