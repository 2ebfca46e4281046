"""Nucleus detection and ring-shaped cytoplasm ROI construction.

The detector is a deterministic stand-in for watershed-style nucleus
finders: smooth, binarize dark regions with Otsu, prune small components,
then pick distance-transform maxima in row-major order with a minimum
separation.  The cytoplasm proxy is the union of annuli around detected
nuclei, with nucleus interiors and bright background pixels removed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import EmptyRoiError
from .imaging import as_gray, gaussian_blur

__all__ = [
    "DetectionConfig",
    "NucleusSet",
    "RoiMask",
    "otsu_threshold",
    "detect_nuclei",
    "build_cytoplasm_rings",
]


@dataclass(frozen=True)
class DetectionConfig:
    blur_sigma: float = 2.0
    min_area: int = 20
    min_separation: float = 8.0


@dataclass(frozen=True)
class NucleusSet:
    """Detected nucleus centers (row, col) with per-nucleus radius estimates."""

    centers: np.ndarray  # (N, 2) int, row-major order of acceptance
    radii: np.ndarray  # (N,) float, > 0

    def __post_init__(self):
        centers = np.asarray(self.centers, dtype=np.int64).reshape(-1, 2)
        radii = np.asarray(self.radii, dtype=np.float64).reshape(-1)
        if centers.shape[0] != radii.shape[0]:
            raise ValueError("centers and radii length mismatch")
        if centers.shape[0] and np.any(radii <= 0):
            raise ValueError("radius estimates must be > 0")
        object.__setattr__(self, "centers", centers)
        object.__setattr__(self, "radii", radii)

    def __len__(self) -> int:
        return int(self.centers.shape[0])


@dataclass(frozen=True)
class RoiMask:
    mask: np.ndarray  # (H, W) bool

    @property
    def pixel_count(self) -> int:
        return int(self.mask.sum())


def otsu_threshold(gray: np.ndarray) -> int:
    """Otsu's threshold t maximizing between-class variance of (<=t, >t).

    Ties resolve to the lowest t; a constant image yields t = 0.
    """
    counts = np.bincount(as_gray(gray).ravel().astype(np.int64), minlength=256).astype(np.float64)
    total = counts.sum()
    cum = np.cumsum(counts)
    cum_mean = np.cumsum(counts * np.arange(256))
    w0 = cum[:-1]
    w1 = total - w0
    valid = (w0 > 0) & (w1 > 0)
    if not np.any(valid):
        return 0
    mu0 = np.where(valid, cum_mean[:-1] / np.where(w0 > 0, w0, 1), 0.0)
    mu1 = np.where(valid, (cum_mean[-1] - cum_mean[:-1]) / np.where(w1 > 0, w1, 1), 0.0)
    sigma_b = np.where(valid, w0 * w1 * (mu0 - mu1) ** 2, -1.0)
    return int(np.argmax(sigma_b))


def detect_nuclei(nucleus_channel: np.ndarray, cfg: DetectionConfig = DetectionConfig()) -> NucleusSet:
    """Detect dark nuclei on a stain channel (dark = strong stain).

    Pipeline: Gaussian smooth -> Otsu binarization of dark pixels ->
    drop components below ``min_area`` -> Euclidean distance transform ->
    local maxima accepted in row-major scan order, dropping any candidate
    closer than ``min_separation`` to an already accepted center.
    """
    channel = as_gray(nucleus_channel)
    smoothed = gaussian_blur(channel, cfg.blur_sigma)
    t = otsu_threshold(smoothed)
    mask = smoothed <= t
    if not mask.any():
        return NucleusSet(np.empty((0, 2), dtype=np.int64), np.empty(0))

    labels, n_comp = ndimage.label(mask, structure=np.ones((3, 3), dtype=bool))
    if cfg.min_area > 1 and n_comp:
        areas = np.bincount(labels.ravel())
        small = np.flatnonzero(areas < cfg.min_area)
        mask &= ~np.isin(labels, small[small > 0])
    if not mask.any():
        return NucleusSet(np.empty((0, 2), dtype=np.int64), np.empty(0))

    edt = ndimage.distance_transform_edt(mask)
    is_max = mask & (edt >= ndimage.maximum_filter(edt, size=3, mode="constant", cval=0.0))
    candidates = np.argwhere(is_max)  # row-major

    accepted: list[np.ndarray] = []
    min_sep_sq = cfg.min_separation * cfg.min_separation
    for cand in candidates:
        if accepted:
            d2 = np.sum((np.asarray(accepted) - cand) ** 2, axis=1)
            if np.any(d2 < min_sep_sq):
                continue
        accepted.append(cand)

    if not accepted:
        return NucleusSet(np.empty((0, 2), dtype=np.int64), np.empty(0))
    centers = np.asarray(accepted, dtype=np.int64)
    radii = edt[centers[:, 0], centers[:, 1]]
    return NucleusSet(centers, radii)


def build_cytoplasm_rings(
    nuclei: NucleusSet,
    spot_gray: np.ndarray,
    thickness: float = 10.0,
    bg_threshold: int = 220,
) -> RoiMask:
    """Cytoplasm ROI: annuli of the given thickness around each nucleus.

    A nucleus with inner radius r contributes pixels at r < d <= r +
    thickness from its center.  The union of rings is reduced by every
    nucleus's inner disk and by pixels brighter than ``bg_threshold`` on the
    (white-balanced) gray image, so rings stay open at tissue borders.
    """
    gray = as_gray(spot_gray)
    if len(nuclei) == 0:
        raise EmptyRoiError("empty ROI: no nuclei to build rings around")
    h, w = gray.shape
    if np.any(nuclei.centers[:, 0] >= h) or np.any(nuclei.centers[:, 1] >= w) or np.any(nuclei.centers < 0):
        raise ValueError("nucleus centers outside image bounds")

    ring = np.zeros((h, w), dtype=bool)
    inner = np.zeros((h, w), dtype=bool)
    for (cy, cx), r_in in zip(nuclei.centers, nuclei.radii):
        r_out = r_in + thickness
        reach = math.ceil(r_out)
        y0, y1 = max(cy - reach, 0), min(cy + reach + 1, h)
        x0, x1 = max(cx - reach, 0), min(cx + reach + 1, w)
        yy, xx = np.ogrid[y0:y1, x0:x1]
        d2 = (yy - cy) ** 2 + (xx - cx) ** 2
        ring[y0:y1, x0:x1] |= (d2 > r_in * r_in) & (d2 <= r_out * r_out)
        inner[y0:y1, x0:x1] |= d2 <= r_in * r_in

    roi = ring & ~inner & (gray <= bg_threshold)
    return RoiMask(roi)
