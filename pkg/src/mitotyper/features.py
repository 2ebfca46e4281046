"""Flat intensity features over the mitochondria channel within an ROI.

The main product is a 517-value vector: a pyramid of normalized ROI
histograms at 256, 128, 64, 32, 16, 8 and 4 bins (508 values), followed by
the four quartile intensities, mean, median, skewness, kurtosis and an
H-score.  A one-value mean-intensity baseline feature is kept alongside for
reference experiments.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import EmptyRoiError
from .imaging import NormalizedHistogram, as_gray

__all__ = [
    "PYRAMID_BINS",
    "FEATURE_LENGTH",
    "RoiIntensitySample",
    "QuartileStats",
    "FlatFeatureVector",
    "sample_from_roi",
    "histogram_pyramid",
    "quartile_stats",
    "h_score",
    "assemble_hist_features",
    "mean_intensity_baseline",
]

PYRAMID_BINS = (256, 128, 64, 32, 16, 8, 4)
PYRAMID_LENGTH = sum(PYRAMID_BINS)  # 508
FEATURE_LENGTH = PYRAMID_LENGTH + 9  # 517

# index of the first scalar after the pyramid, for readers of the flat layout
Q1, Q2, Q3, Q4, MEAN, MEDIAN, SKEWNESS, KURTOSIS, HSCORE = range(
    PYRAMID_LENGTH, FEATURE_LENGTH
)


@dataclass(frozen=True)
class RoiIntensitySample:
    """8-bit intensities collected at ROI pixels of one spot."""

    values: np.ndarray
    spot_id: str = ""

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.size == 0:
            raise EmptyRoiError("empty ROI: no intensity samples")
        values = values.ravel()
        if values.dtype != np.uint8:
            arr = np.asarray(values, dtype=np.int64)
            if np.any(arr < 0) or np.any(arr > 255):
                raise ValueError("intensities must lie in [0, 255]")
            values = arr.astype(np.uint8)
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return int(self.values.size)


class QuartileStats(NamedTuple):
    q1: float
    q2: float
    q3: float
    q4: float
    mean: float
    median: float
    skewness: float
    kurtosis: float


@dataclass(frozen=True)
class FlatFeatureVector:
    """Fixed 517-value layout; see module docstring for the order."""

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.shape != (FEATURE_LENGTH,):
            raise ValueError(f"expected {FEATURE_LENGTH} features, got shape {values.shape}")
        offset = 0
        for bins in PYRAMID_BINS:
            level_sum = float(values[offset : offset + bins].sum())
            if abs(level_sum - 1.0) > 1e-9:
                raise ValueError(f"{bins}-bin level sums to {level_sum!r}, expected 1")
            offset += bins
        hscore = values[HSCORE]
        if not 100.0 <= hscore <= 400.0:
            raise ValueError(f"H-score {hscore!r} outside [100, 400]")
        object.__setattr__(self, "values", values)


def sample_from_roi(gray: np.ndarray, roi_mask: np.ndarray, spot_id: str = "") -> RoiIntensitySample:
    """Collect channel intensities at ROI pixels."""
    gray = as_gray(gray)
    mask = np.asarray(roi_mask, dtype=bool)
    if mask.shape != gray.shape:
        raise ValueError("ROI mask shape does not match image")
    if not mask.any():
        raise EmptyRoiError("empty ROI: mask selects no pixels")
    return RoiIntensitySample(gray[mask], spot_id=spot_id)


def histogram_pyramid(sample: RoiIntensitySample) -> tuple[NormalizedHistogram, ...]:
    """Normalized histograms at 256, 128, 64, 32, 16, 8 and 4 bins.

    Each coarser level merges adjacent bin pairs of the previous one, so the
    levels stay mutually consistent.
    """
    levels = [NormalizedHistogram.from_values(sample.values, 256)]
    for _ in PYRAMID_BINS[1:]:
        merged = levels[-1].mass.reshape(-1, 2).sum(axis=1)
        levels.append(NormalizedHistogram(merged))
    return tuple(levels)


def quartile_stats(sample: RoiIntensitySample) -> QuartileStats:
    """Quartile intensities plus moment statistics of the ROI sample.

    q_k is the smallest intensity whose cumulative histogram mass reaches
    k/4 (hence q4 is the maximum observed value).  Skewness is m3/m2^1.5 and
    kurtosis m4/m2^2 with population central moments; both are 0 for a
    constant sample.
    """
    n = sample.values.size
    counts = np.bincount(sample.values.astype(np.int64), minlength=256)
    cum = np.cumsum(counts)
    quartiles = [float(np.searchsorted(cum * 4, k * n)) for k in (1, 2, 3, 4)]

    # all statistics run off the counts so results do not depend on sample
    # order (and stay byte-identical across thread counts)
    levels = np.arange(256, dtype=np.int64)
    mean = float((counts * levels).sum() / n)
    if n % 2:
        median = float(np.searchsorted(cum, n // 2 + 1))
    else:
        lo = np.searchsorted(cum, n // 2)
        hi = np.searchsorted(cum, n // 2 + 1)
        median = (float(lo) + float(hi)) / 2.0

    centered = levels.astype(np.float64) - mean
    weights = counts.astype(np.float64)
    m2 = float(weights @ centered**2) / n
    if m2 == 0.0:
        skewness = kurtosis = 0.0
    else:
        skewness = float(weights @ centered**3) / n / m2**1.5
        kurtosis = float(weights @ centered**4) / n / (m2 * m2)
    return QuartileStats(*quartiles, mean, median, skewness, kurtosis)


def h_score(sample: RoiIntensitySample) -> float:
    """100 * sum(i * band_mass_i) over four intensity bands.

    Band 4 is the darkest quarter [0, 63] and band 1 the brightest
    [192, 255], so heavier staining scores higher; the range is [100, 400].
    """
    band = 4 - sample.values.astype(np.int64) // 64  # 4 -> darkest
    masses = np.bincount(band, minlength=5)[1:5] / sample.values.size
    return float(100.0 * np.dot(np.arange(1, 5), masses))


def assemble_hist_features(sample: RoiIntensitySample) -> FlatFeatureVector:
    """Concatenate histogram pyramid, quartile stats and H-score (517 values)."""
    parts = [level.mass for level in histogram_pyramid(sample)]
    parts.append(np.asarray(quartile_stats(sample), dtype=np.float64))
    parts.append(np.array([h_score(sample)]))
    return FlatFeatureVector(np.concatenate(parts))


def mean_intensity_baseline(spot_gray: np.ndarray, fg: np.ndarray) -> float:
    """Mean gray intensity over foreground pixels (the 1-dim baseline)."""
    gray = as_gray(spot_gray)
    mask = np.asarray(fg, dtype=bool)
    if mask.shape != gray.shape:
        raise ValueError("foreground mask shape does not match image")
    if not mask.any():
        raise EmptyRoiError("empty ROI: no foreground pixels")
    return float(gray[mask].astype(np.float64).mean())


def smoothed_local_maxima(mass: np.ndarray, window: int = 5) -> int:
    """Count strict interior local maxima after moving-average smoothing.

    The standard way to read modality off a 256-bin class-mean histogram:
    a bimodal intensity profile counts 2, a unimodal one counts 1.
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    m = np.convolve(np.asarray(mass, dtype=np.float64), np.ones(window) / window, mode="same")
    inner = (m[1:-1] > m[:-2]) & (m[1:-1] > m[2:])
    return int(np.count_nonzero(inner))
