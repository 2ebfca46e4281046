"""Spot-level orchestration: raw image in, flat feature row out.

One function owns the canonical processing order (white balance, stain
separation, nucleus detection, ring construction, histogram features) so
the command line, the cohort helpers, and the tests all run exactly the
same path.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import PipelineError
from .features import assemble_hist_features, sample_from_roi
from .imaging import (
    StainBasis,
    color_deconvolve,
    default_stain_basis,
    to_grayscale,
    white_balance,
)
from .segmentation import DetectionConfig, build_cytoplasm_rings, detect_nuclei
from .synth import SynthCohort
from .table import FeatureRow, FeatureTable


@dataclass(frozen=True)
class PipelineOptions:
    """Knobs of the spot pipeline that are not per-module configs."""

    balance_window: int = 100
    balance_stride: Optional[int] = None
    ring_thickness: float = 10.0
    ring_bg_threshold: int = 220
    detection: DetectionConfig = DetectionConfig()


@dataclass(frozen=True)
class SpotResult:
    row: FeatureRow
    nucleus_count: int
    roi_pixels: int


def read_image(path: Union[str, Path]) -> np.ndarray:
    """Load an image file as an RGB uint8 array."""
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert("RGB"))
    except (OSError, UnidentifiedImageError) as exc:
        raise PipelineError(f"unreadable image {path}: {exc}") from exc


def process_spot(
    image: np.ndarray,
    patient_id: str,
    spot_id: str,
    label: str,
    opts: PipelineOptions = PipelineOptions(),
    basis: Optional[StainBasis] = None,
) -> SpotResult:
    """Run the full single-spot pipeline and build its HIST feature row."""
    basis = basis if basis is not None else default_stain_basis()
    balanced = white_balance(image, window=opts.balance_window, stride=opts.balance_stride)
    nucleus_ch, mito_ch, _ = color_deconvolve(balanced, basis)
    nuclei = detect_nuclei(nucleus_ch, opts.detection)
    roi = build_cytoplasm_rings(
        nuclei,
        to_grayscale(balanced),
        thickness=opts.ring_thickness,
        bg_threshold=opts.ring_bg_threshold,
    )
    sample = sample_from_roi(mito_ch, roi.mask, spot_id)
    features = assemble_hist_features(sample)
    # a whole-spot row is the spot's "orig" variant unit, so deep rows
    # for the same spot can join it by unit key or by the orig fallback
    row = FeatureRow(
        patient_id=patient_id,
        spot_id=spot_id,
        unit_id="orig",
        variant="orig",
        label=label,
        source="HIST",
        values=features.values,
    )
    return SpotResult(row=row, nucleus_count=len(nuclei.centers), roi_pixels=roi.pixel_count)


@dataclass(frozen=True)
class SpotJob:
    """One unit of pipeline work: where the image lives and its identity."""

    patient_id: str
    spot_id: str
    label: str
    image: Optional[np.ndarray] = None
    path: Optional[Path] = None

    def load(self) -> np.ndarray:
        if self.image is not None:
            return self.image
        if self.path is None:
            raise PipelineError(f"{self.patient_id}/{self.spot_id}: no image or path")
        return read_image(self.path)


def run_jobs(
    jobs: Sequence[SpotJob],
    opts: PipelineOptions = PipelineOptions(),
    n_jobs: int = 1,
) -> list[SpotResult]:
    """Process spots, optionally in parallel; output order follows input."""

    def work(job: SpotJob) -> SpotResult:
        return process_spot(job.load(), job.patient_id, job.spot_id, job.label, opts)

    if n_jobs <= 1:
        return [work(job) for job in jobs]
    with ThreadPoolExecutor(max_workers=n_jobs) as pool:
        return list(pool.map(work, jobs))


def manifest_jobs(entries: Sequence[dict], root: Union[str, Path]) -> list[SpotJob]:
    """Turn manifest rows into pipeline jobs with paths resolved from root."""
    root = Path(root)
    jobs = []
    for entry in entries:
        jobs.append(
            SpotJob(
                patient_id=entry["patient_id"],
                spot_id=entry["spot_id"],
                label=entry["label"],
                path=root / entry["path"],
            )
        )
    return jobs


def cohort_jobs(cohort: SynthCohort) -> list[SpotJob]:
    return [
        SpotJob(patient_id=rec.patient_id, spot_id=rec.spot_id, label=rec.label, image=rec.image)
        for rec in cohort.records
    ]


def results_table(results: Sequence[SpotResult]) -> FeatureTable:
    return FeatureTable(tuple(res.row for res in results))


def cohort_feature_table(
    cohort: SynthCohort,
    opts: PipelineOptions = PipelineOptions(),
    n_jobs: int = 1,
) -> FeatureTable:
    """HIST feature table of a whole in-memory cohort."""
    return results_table(run_jobs(cohort_jobs(cohort), opts, n_jobs))
