"""Gray-level co-occurrence matrices and texture statistics.

Conventions used throughout:

* level maps are indexed ``[row, col]``; an offset (dx, dy) pairs pixel
  ``(r, c)`` with ``(r + dy, c + dx)``, pairs leaving the image are skipped;
* matrices are asymmetric (no transpose accumulation);
* the 40-column feature matrix is feature-major: column ``f * 8 + o`` holds
  feature ``f`` of ``FEATURES`` at orientation ``o`` of ``ORIENTATIONS``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import kernels
from .tensor import DTYPE, ShapeError, Tensor, as_tensor, stack, where

ORIENTATIONS = (0, 45, 90, 135, 180, 225, 270, 315)
FEATURES = ("asm", "contrast", "homogeneity", "correlation", "dissimilarity")
LUMA = (0.299, 0.587, 0.114)
DEFAULT_LEVELS = 16
DEFAULT_DISTANCE = 3
# marginal variance products at or below this count as zero
_VAR_EPS = 1e-12


class DegenerateGLCMError(ValueError):
    """No valid pixel pairs for an offset, or an empty matrix."""


@dataclass(frozen=True)
class GlcmOffset:
    dx: int
    dy: int

    def __post_init__(self):
        if self.dx == 0 and self.dy == 0:
            raise ValueError("GLCM offset must be non-zero")

    @classmethod
    def from_angle(cls, distance: int, angle: float) -> "GlcmOffset":
        rad = math.radians(angle)
        return cls(int(distance * round(math.cos(rad))), int(distance * round(math.sin(rad))))


def orientation_offsets(distance: int = DEFAULT_DISTANCE) -> list:
    return [GlcmOffset.from_angle(distance, a) for a in ORIENTATIONS]


@dataclass
class GlcmMatrix:
    counts: np.ndarray
    levels: int
    offset: GlcmOffset
    P: Optional[np.ndarray] = None

    @property
    def n_pairs(self) -> int:
        return int(self.counts.sum())


@dataclass
class HistogramStats:
    histogram: np.ndarray
    mean: float
    variance: float
    skewness: float
    kurtosis: float
    degenerate: bool = False


def _as_images(batch) -> np.ndarray:
    """(m, H, W) float view of a single-channel batch given as (m,1,H,W) or (m,H,W)."""
    arr = batch.data if isinstance(batch, Tensor) else np.asarray(batch)
    if arr.ndim == 4:
        if arr.shape[1] != 1:
            raise ShapeError(f"expected a single-channel batch, got {arr.shape[1]} channels")
        arr = arr[:, 0]
    if arr.ndim != 3:
        raise ShapeError(f"expected (m,H,W) or (m,1,H,W), got shape {arr.shape}")
    return arr


def _check_unit_range(values):
    if values.size and (np.isnan(values).any() or values.min() < 0.0 or values.max() > 1.0):
        raise ValueError("pixel values must lie in [0, 1]")


def quantize(image, levels: int = DEFAULT_LEVELS) -> np.ndarray:
    """Uniform binning of [0,1] into ``levels`` integer levels (1.0 maps to the top level)."""
    if levels < 2:
        raise ValueError("need at least 2 gray levels")
    img = np.asarray(image, dtype=np.float64)
    _check_unit_range(img)
    return np.minimum(np.floor(img * levels), levels - 1).astype(np.int64)


def _check_offset(shape, offset: GlcmOffset):
    h, w = shape[-2:]
    if abs(offset.dx) >= w or abs(offset.dy) >= h:
        raise DegenerateGLCMError(f"offset ({offset.dx},{offset.dy}) leaves no pixel pairs in a {h}x{w} image")


def glcm(level_map, offset: GlcmOffset, levels: int = DEFAULT_LEVELS) -> GlcmMatrix:
    """Co-occurrence counts of ``level_map`` for one offset."""
    lv = np.asarray(level_map)
    if lv.ndim != 2:
        raise ShapeError(f"level map must be 2-D, got shape {lv.shape}")
    _check_offset(lv.shape, offset)
    if lv.size and (lv.min() < 0 or lv.max() >= levels):
        raise ValueError(f"level map values must lie in [0, {levels})")
    counts = kernels.glcm_counts(lv[None], np.array([[offset.dx, offset.dy]]), levels)[0, 0]
    return GlcmMatrix(counts=counts, levels=levels, offset=offset)


def glcm_normalize(m: GlcmMatrix) -> GlcmMatrix:
    total = m.counts.sum()
    if total <= 0:
        raise DegenerateGLCMError("cannot normalise a GLCM with zero pairs")
    return GlcmMatrix(counts=m.counts, levels=m.levels, offset=m.offset, P=m.counts / float(total))


def _features(P: np.ndarray) -> np.ndarray:
    """Raw features for P of shape (..., G, G); returns (..., 5)."""
    G = P.shape[-1]
    i = np.arange(G, dtype=np.float64)[:, None]
    j = np.arange(G, dtype=np.float64)[None, :]
    d = i - j
    asm = (P * P).sum(axis=(-2, -1))
    contrast = (P * d * d).sum(axis=(-2, -1))
    homogeneity = (P / (1.0 + np.abs(d)) ** 2).sum(axis=(-2, -1))
    dissimilarity = (P * np.abs(d)).sum(axis=(-2, -1))
    pi = P.sum(axis=-1)
    pj = P.sum(axis=-2)
    lv = np.arange(G, dtype=np.float64)
    mu_i = (pi * lv).sum(axis=-1)
    mu_j = (pj * lv).sum(axis=-1)
    var_i = (pi * (lv - mu_i[..., None]) ** 2).sum(axis=-1)
    var_j = (pj * (lv - mu_j[..., None]) ** 2).sum(axis=-1)
    cov = (P * (i - mu_i[..., None, None]) * (j - mu_j[..., None, None])).sum(axis=(-2, -1))
    prod = var_i * var_j
    degenerate = prod <= _VAR_EPS
    corr = np.where(degenerate, 1.0, cov / np.sqrt(np.where(degenerate, 1.0, prod)))
    return np.stack([asm, contrast, homogeneity, corr, dissimilarity], axis=-1)


def sot_features(P) -> np.ndarray:
    """(ASM, Contrast, Homogeneity, Correlation, Dissimilarity) of a normalised GLCM.

    Homogeneity weights each cell by ``1 / (1 + |i - j|)**2``. Correlation is
    defined as 1 when a marginal has zero variance.
    """
    if isinstance(P, GlcmMatrix):
        if P.P is None:
            raise ValueError("GLCM is not normalised; call glcm_normalize first")
        P = P.P
    return _features(np.asarray(P, dtype=np.float64))


def normalize_features(raw, levels: int):
    """Rescale raw features (..., 5) to [0, 1] using their analytic ranges."""
    scale = np.array([1.0, 1.0 / (levels - 1) ** 2, 1.0, 0.5, 1.0 / (levels - 1)])
    shift = np.array([0.0, 0.0, 0.0, 0.5, 0.0])
    out = np.asarray(raw) * scale + shift
    return np.clip(out, 0.0, 1.0)


def glcm_batch(batch, distance: int = DEFAULT_DISTANCE, levels: int = DEFAULT_LEVELS) -> np.ndarray:
    """Normalised GLCMs for every image and orientation, shape (m, 8, G, G)."""
    imgs = _as_images(batch)
    offsets = orientation_offsets(distance)
    for off in offsets:
        _check_offset(imgs.shape, off)
    lv = quantize(imgs, levels)
    counts = kernels.glcm_counts(lv, np.array([[o.dx, o.dy] for o in offsets]), levels)
    totals = counts.sum(axis=(-2, -1), keepdims=True)
    return counts / totals.astype(np.float64)


def sot_matrix(batch, distance: int = DEFAULT_DISTANCE, levels: int = DEFAULT_LEVELS) -> np.ndarray:
    """Normalised (m, 40) texture-feature matrix of a single-channel batch."""
    P = glcm_batch(batch, distance, levels)
    feats = normalize_features(_features(P), levels)  # (m, 8, 5)
    return feats.transpose(0, 2, 1).reshape(feats.shape[0], -1)


def grayscale(batch) -> np.ndarray:
    """Luma conversion of an (m,3,H,W) batch to (m,1,H,W), clipped to [0,1]."""
    arr = batch.data if isinstance(batch, Tensor) else np.asarray(batch, dtype=DTYPE)
    if arr.ndim != 4 or arr.shape[1] != 3:
        raise ShapeError(f"expected an (m,3,H,W) batch, got shape {arr.shape}")
    w = np.asarray(LUMA, dtype=DTYPE).reshape(1, 3, 1, 1)
    return np.clip((arr * w).sum(axis=1, keepdims=True), 0.0, 1.0)


def _check_pair(colorized, original):
    mc, mo = colorized.shape[0], original.shape[0]
    if mc != mo:
        raise ShapeError(f"batch size mismatch: colorized has {mc} images, original has {mo}")


def glcm_loss(colorized, original, distance: int = DEFAULT_DISTANCE, levels: int = DEFAULT_LEVELS) -> float:
    """Max over the batch of the L1 distance between texture-feature rows (hard binning)."""
    c = colorized.data if isinstance(colorized, Tensor) else np.asarray(colorized)
    o = original.data if isinstance(original, Tensor) else np.asarray(original)
    _check_pair(c, o)
    a = sot_matrix(grayscale(c), distance, levels)
    b = sot_matrix(o, distance, levels)
    return float(np.abs(a - b).sum(axis=1).max())


# --------------------------------------------------------------------------
# differentiable variant
# --------------------------------------------------------------------------

def _soft_sot(gray: Tensor, distance: int, levels: int, tau: float) -> Tensor:
    """Soft-binned (m, 40) feature matrix for gray Tensor (m, H, W)."""
    m, h, w = gray.shape
    G = levels
    centers = np.arange(G, dtype=DTYPE)
    diff = gray.reshape(m, h, w, 1) * float(G - 1) - centers
    logits = diff * diff * (-1.0 / tau)
    logits = logits - logits.data.max(axis=-1, keepdims=True)
    e = logits.exp()
    weights = e / e.sum(axis=-1, keepdims=True)

    mats = []
    for off in orientation_offsets(distance):
        dx, dy = off.dx, off.dy
        r0, r1 = max(0, -dy), min(h, h - dy)
        c0, c1 = max(0, -dx), min(w, w - dx)
        if r1 <= r0 or c1 <= c0:
            raise DegenerateGLCMError(f"offset ({dx},{dy}) leaves no pixel pairs in a {h}x{w} image")
        base = weights[:, r0:r1, c0:c1, :].reshape(m, -1, G)
        nb = weights[:, r0 + dy:r1 + dy, c0 + dx:c1 + dx, :].reshape(m, -1, G)
        counts = base.transpose(0, 2, 1) @ nb
        mats.append(counts / counts.sum(axis=(1, 2), keepdims=True))
    P = stack(mats, axis=1)  # (m, 8, G, G)

    lv = np.arange(G, dtype=DTYPE)
    d = lv[:, None] - lv[None, :]
    asm = (P * P).sum(axis=(2, 3))
    contrast = (P * (d * d)).sum(axis=(2, 3))
    homogeneity = (P * (1.0 / (1.0 + np.abs(d)) ** 2)).sum(axis=(2, 3))
    dissimilarity = (P * np.abs(d)).sum(axis=(2, 3))
    pi = P.sum(axis=3)
    pj = P.sum(axis=2)
    mu_i = (pi * lv).sum(axis=2)
    mu_j = (pj * lv).sum(axis=2)
    ci = lv - mu_i.reshape(m, 8, 1)
    cj = lv - mu_j.reshape(m, 8, 1)
    var_i = (pi * ci * ci).sum(axis=2)
    var_j = (pj * cj * cj).sum(axis=2)
    cov = (P * ci.reshape(m, 8, G, 1) * cj.reshape(m, 8, 1, G)).sum(axis=(2, 3))
    prod = var_i * var_j
    degenerate = prod.data <= _VAR_EPS
    corr = where(degenerate, np.ones_like(prod.data), cov / where(degenerate, np.ones_like(prod.data), prod).sqrt())

    feats = stack([
        asm,
        contrast * (1.0 / (G - 1) ** 2),
        homogeneity,
        (corr + 1.0) * 0.5,
        dissimilarity * (1.0 / (G - 1)),
    ], axis=1)  # (m, 5, 8)
    return feats.clip(0.0, 1.0).reshape(m, 5 * len(ORIENTATIONS))


def soft_grayscale(colorized: Tensor) -> Tensor:
    w = np.asarray(LUMA, dtype=DTYPE).reshape(1, 3, 1, 1)
    return (colorized * w).sum(axis=1).clip(0.0, 1.0)


def soft_glcm_loss(colorized, original, distance: int = DEFAULT_DISTANCE, levels: int = DEFAULT_LEVELS,
                   tau: float = 0.5) -> Tensor:
    """Differentiable GLCM loss using Gaussian soft level assignment.

    Each pixel value ``v`` is spread over levels ``k`` with weights
    proportional to ``exp(-((v*(G-1)) - k)**2 / tau)``; soft counts for a
    pixel pair are products of the two weight vectors. Gradients flow into
    ``colorized`` only.
    """
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    colorized = as_tensor(colorized)
    orig = Tensor(_as_images(original))
    if colorized.ndim != 4 or colorized.shape[1] != 3:
        raise ShapeError(f"expected an (m,3,H,W) colorized batch, got shape {colorized.shape}")
    _check_pair(colorized, orig)
    _check_unit_range(orig.data)
    a = _soft_sot(soft_grayscale(colorized), distance, levels, tau)
    b = _soft_sot(orig, distance, levels, tau).detach()
    return (a - b).abs().sum(axis=1).max()


# --------------------------------------------------------------------------
# first-order statistics
# --------------------------------------------------------------------------

def histogram_stats(image) -> HistogramStats:
    """256-bin histogram plus population mean, variance, skewness and (non-excess) kurtosis."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 3 and img.shape[0] == 1:
        img = img[0]
    _check_unit_range(img)
    hist = np.bincount(np.minimum((img * 256).astype(np.int64), 255).ravel(), minlength=256)
    mean = float(img.mean())
    c = img - mean
    var = float((c * c).mean())
    if var <= 0.0:
        return HistogramStats(hist, mean, 0.0, 0.0, 0.0, degenerate=True)
    sd = math.sqrt(var)
    skew = float((c ** 3).mean() / sd ** 3)
    kurt = float((c ** 4).mean() / var ** 2)
    return HistogramStats(hist, mean, var, skew, kurt)
