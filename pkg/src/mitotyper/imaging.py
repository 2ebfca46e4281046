"""Stain-agnostic raster transforms.

Conventions used throughout the toolkit:

* an RGB image is a ``(H, W, 3)`` uint8 array, row-major;
* a gray image is a ``(H, W)`` uint8 array;
* a bit mask is a ``(H, W)`` bool array aligned with the image it masks.

All functions are pure; none mutates its input.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.ndimage import convolve1d

from .errors import (
    BlackBackgroundError,
    DegenerateBasisError,
    EmptyHistogramError,
    NonSquareImageError,
)

__all__ = [
    "NormalizedHistogram",
    "StainBasis",
    "Variant",
    "as_rgb",
    "as_gray",
    "to_grayscale",
    "histogram_256",
    "shannon_entropy",
    "white_balance",
    "default_stain_basis",
    "stain_amounts",
    "synthesize_from_amounts",
    "color_deconvolve",
    "gaussian_blur",
    "threshold_mask",
    "augment_variants",
    "VARIANT_NAMES",
]

MAX_HISTOGRAM_BINS = 256


def as_rgb(img: np.ndarray) -> np.ndarray:
    """Validate an RGB image array (uint8, HxWx3, nonempty)."""
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) RGB array, got shape {img.shape}")
    if img.dtype != np.uint8:
        raise ValueError(f"expected uint8 samples, got {img.dtype}")
    if img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError("image dimensions must be >= 1")
    return img


def as_gray(img: np.ndarray) -> np.ndarray:
    """Validate a gray image array (uint8, HxW, nonempty)."""
    img = np.asarray(img)
    if img.ndim != 2:
        raise ValueError(f"expected (H, W) gray array, got shape {img.shape}")
    if img.dtype != np.uint8:
        raise ValueError(f"expected uint8 samples, got {img.dtype}")
    if img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError("image dimensions must be >= 1")
    return img


@dataclass(frozen=True)
class NormalizedHistogram:
    """Intensity histogram normalized to unit mass.

    ``mass`` holds nonnegative fractions per bin summing to 1 within 1e-9,
    except for the empty histogram (zero observations), which is flagged via
    ``empty`` and carries all-zero mass.  Bin counts from 1 to 256 are
    accepted; the pipeline itself only produces the power-of-two ladder
    256..4.
    """

    mass: np.ndarray
    empty: bool = False

    def __post_init__(self):
        mass = np.asarray(self.mass, dtype=np.float64)
        object.__setattr__(self, "mass", mass)
        if mass.ndim != 1 or not 1 <= mass.size <= MAX_HISTOGRAM_BINS:
            raise ValueError(f"bin count must be in 1..{MAX_HISTOGRAM_BINS}, got shape {mass.shape}")
        if np.any(mass < 0):
            raise ValueError("histogram mass must be nonnegative")
        total = float(mass.sum())
        if self.empty:
            if total != 0.0:
                raise ValueError("empty histogram must carry zero mass")
        elif abs(total - 1.0) > 1e-9:
            raise ValueError(f"histogram mass sums to {total!r}, expected 1 +- 1e-9")

    @property
    def bins(self) -> int:
        return int(self.mass.size)

    @classmethod
    def from_counts(cls, counts: np.ndarray) -> "NormalizedHistogram":
        counts = np.asarray(counts, dtype=np.float64)
        total = counts.sum()
        if total == 0:
            return cls(np.zeros(counts.size), empty=True)
        return cls(counts / total)

    @classmethod
    def from_values(cls, values: np.ndarray, bins: int = 256) -> "NormalizedHistogram":
        """Histogram of 8-bit intensity values with ``bins`` equal-width bins."""
        idx = np.asarray(values).ravel().astype(np.int64)
        if bins != 256:
            idx = idx * bins // 256
        return cls.from_counts(np.bincount(idx, minlength=bins))


def to_grayscale(img: np.ndarray) -> np.ndarray:
    """Luminance grayscale: round(0.299 R + 0.587 G + 0.114 B), half-up.

    Integer arithmetic keeps the result exact and platform independent.
    """
    img = as_rgb(img)
    r = img[:, :, 0].astype(np.int64)
    g = img[:, :, 1].astype(np.int64)
    b = img[:, :, 2].astype(np.int64)
    lum = (299 * r + 587 * g + 114 * b + 500) // 1000
    return np.clip(lum, 0, 255).astype(np.uint8)


def histogram_256(gray: np.ndarray) -> NormalizedHistogram:
    """256-bin normalized histogram of a gray image or value array."""
    values = np.asarray(gray)
    counts = np.bincount(values.ravel().astype(np.int64), minlength=256)
    return NormalizedHistogram.from_counts(counts)


def shannon_entropy(h: NormalizedHistogram, base: float = math.e) -> float:
    """Entropy -sum(m_i log m_i) of a normalized histogram, 0 log 0 := 0.

    Natural log by default; ``base`` rescales (base 2 yields bits).  The
    result lies in [0, log(bins)].
    """
    if h.empty:
        raise EmptyHistogramError("empty histogram")
    m = h.mass[h.mass > 0]
    ent = float(-np.sum(m * np.log(m)))
    if base != math.e:
        ent /= math.log(base)
    # guard tiny negative round-off on delta histograms
    return max(ent, 0.0)


def _window_origins(extent: int, window: int, stride: int) -> list[int]:
    """Origins covering [0, extent - window], final origin always included."""
    last = extent - window
    origins = list(range(0, last + 1, stride))
    if origins[-1] != last:
        origins.append(last)
    return origins


def white_balance(
    img: np.ndarray,
    window: int = 100,
    stride: int | None = None,
    bins: int = 256,
) -> np.ndarray:
    """Divide out the scanner background color found by a shifting window.

    The window with the lowest gray-histogram entropy is taken to show pure
    background; its per-channel mean is the background color and every pixel
    channel is rescaled by 255/background.  Entropy ties resolve to the first
    window in row-major scan order.
    """
    img = as_rgb(img)
    h, w = img.shape[:2]
    if window > min(h, w):
        raise ValueError(f"window {window} exceeds image extent {min(h, w)}")
    if window < 1:
        raise ValueError("window must be >= 1")
    if stride is None:
        stride = max(window // 2, 1)
    if stride < 1:
        raise ValueError("stride must be >= 1")

    gray = to_grayscale(img)
    best_entropy = math.inf
    best_origin = (0, 0)
    for y in _window_origins(h, window, stride):
        for x in _window_origins(w, window, stride):
            tile = gray[y : y + window, x : x + window]
            idx = tile.ravel().astype(np.int64)
            if bins != 256:
                idx = idx * bins // 256
            counts = np.bincount(idx, minlength=bins)
            m = counts[counts > 0] / tile.size
            ent = float(-np.sum(m * np.log(m)))
            if ent < best_entropy:
                best_entropy = ent
                best_origin = (y, x)

    y, x = best_origin
    bg = img[y : y + window, x : x + window].reshape(-1, 3).mean(axis=0)
    if np.any(bg == 0):
        raise BlackBackgroundError(f"black background: window mean {tuple(bg)} has a zero channel")
    out = np.rint(img.astype(np.float64) / bg * 255.0)
    return np.clip(out, 0, 255).astype(np.uint8)


@dataclass(frozen=True)
class StainBasis:
    """Three unit optical-density vectors, one row per stain channel.

    The 3x3 row matrix must be invertible; ``inverse`` is cached for the
    per-pixel unmixing step.
    """

    vectors: np.ndarray
    inverse: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        vectors = np.asarray(self.vectors, dtype=np.float64)
        if vectors.shape != (3, 3):
            raise ValueError(f"stain basis must be 3x3, got {vectors.shape}")
        norms = np.linalg.norm(vectors, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-9):
            raise ValueError(f"stain vectors must have unit norm, got norms {norms}")
        object.__setattr__(self, "vectors", vectors)
        det = np.linalg.det(vectors)
        if not np.isfinite(det) or abs(det) < 1e-9:
            raise DegenerateBasisError(f"degenerate stain basis (det={det!r})")
        object.__setattr__(self, "inverse", np.linalg.inv(vectors))


def default_stain_basis() -> StainBasis:
    """Nucleus-stain-like, DAB-like, and residual (cross product) OD vectors.

    The literature values for a blue nuclear counter-stain and the brown DAB
    chromogen; downstream code never depends on the exact numbers, only on
    the unit-norm/invertibility contract.
    """
    nucleus = np.array([0.65, 0.70, 0.29])
    dab = np.array([0.27, 0.57, 0.78])
    nucleus = nucleus / np.linalg.norm(nucleus)
    dab = dab / np.linalg.norm(dab)
    residual = np.cross(nucleus, dab)
    residual = residual / np.linalg.norm(residual)
    return StainBasis(np.stack([nucleus, dab, residual]))


def stain_amounts(img: np.ndarray, basis: StainBasis) -> np.ndarray:
    """Per-pixel stain amounts (H, W, 3 float), negatives clamped to 0.

    Optical density OD_c = -log10(max(I_c, 1)/255); amounts solve
    OD = a @ basis.vectors.
    """
    img = as_rgb(img)
    od = -np.log10(np.maximum(img.astype(np.float64), 1.0) / 255.0)
    amounts = od @ basis.inverse
    return np.maximum(amounts, 0.0)


def synthesize_from_amounts(amounts: np.ndarray, basis: StainBasis) -> np.ndarray:
    """Forward model: render stain amounts to an 8-bit RGB image.

    Inverse of :func:`stain_amounts` up to 8-bit quantization; used by the
    synthetic generator and as the round-trip oracle.
    """
    amounts = np.asarray(amounts, dtype=np.float64)
    od = amounts @ basis.vectors
    rgb = 255.0 * np.power(10.0, -od)
    return np.clip(np.rint(rgb), 0, 255).astype(np.uint8)


def color_deconvolve(img: np.ndarray, basis: StainBasis) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Split an RGB image into three 8-bit per-stain intensity channels.

    Each channel is rendered back to intensity I' = round(255 * 10^-a), so a
    stronger stain gives a darker pixel and downstream histograms live on
    [0, 255].
    """
    amounts = stain_amounts(img, basis)
    rendered = 255.0 * np.power(10.0, -amounts)
    rendered = np.clip(np.rint(rendered), 0, 255).astype(np.uint8)
    return rendered[:, :, 0], rendered[:, :, 1], rendered[:, :, 2]


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Normalized 1-D Gaussian kernel with radius ceil(3 sigma)."""
    if sigma <= 0:
        raise ValueError("sigma must be > 0")
    radius = math.ceil(3.0 * sigma)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return k / k.sum()


def gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur with replicate-border handling, 8-bit output."""
    img = as_gray(img)
    k = gaussian_kernel(sigma)
    buf = img.astype(np.float64)
    buf = convolve1d(buf, k, axis=0, mode="nearest")
    buf = convolve1d(buf, k, axis=1, mode="nearest")
    return np.clip(np.rint(buf), 0, 255).astype(np.uint8)


def threshold_mask(img: np.ndarray, t: int, keep: str) -> np.ndarray:
    """Bit mask of pixels <= t (keep='below') or > t (keep='above').

    The two masks partition every image exactly.
    """
    img = as_gray(img)
    if not 0 <= t <= 255:
        raise ValueError(f"threshold must be in [0, 255], got {t}")
    if keep == "below":
        return img <= t
    if keep == "above":
        return img > t
    raise ValueError(f"keep must be 'below' or 'above', got {keep!r}")


class Variant(NamedTuple):
    name: str
    image: np.ndarray


VARIANT_NAMES = (
    "orig",
    "rot90",
    "rot180",
    "rot270",
    "flip",
    "flip_rot90",
    "flip_rot180",
    "flip_rot270",
)


def augment_variants(img: np.ndarray) -> list[Variant]:
    """The 8 dihedral variants of a square image, identity first.

    Order: counterclockwise rotations 0/90/180/270 of the original, then the
    same rotations of the horizontally flipped image.  Arrays are contiguous
    copies.
    """
    img = as_rgb(img)
    if img.shape[0] != img.shape[1]:
        raise NonSquareImageError(f"non-square image {img.shape[0]}x{img.shape[1]}")
    out: list[Variant] = []
    for base, prefix in ((img, ""), (img[:, ::-1], "flip")):
        for quarter_turns in range(4):
            if quarter_turns == 0:
                name = prefix or "orig"
            else:
                name = f"{prefix}_rot{90 * quarter_turns}" if prefix else f"rot{90 * quarter_turns}"
            out.append(Variant(name, np.ascontiguousarray(np.rot90(base, quarter_turns))))
    return out
