"""Synthetic stained-tissue cohorts with known ground truth.

Renders tissue-microarray-style spots: a textured tissue disk on a
near-white background, populated with dark bluish nucleus disks whose
surrounding cytoplasm carries a brown stain whose post-balance channel
value follows a per-class truncated-normal mixture.  Every pixel goes
through the same optical forward model the analysis pipeline inverts
(target channel value -> OD amount -> RGB -> background tint), so
running white balance plus deconvolution on a generated spot recovers
the designed intensities up to 8-bit quantization.

The default class models use pairwise-disjoint supports.  That makes
the per-pixel Bayes accuracy of the generative model exactly one
(see :func:`bayes_pixel_accuracy`) while keeping the documented shape
signatures: CC is bimodal, CCP unimodal, ONC carries most of its mass
in the darkest quarter of the intensity scale.  The parameters are
chosen for separability and code-path coverage, not histological
realism.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, NamedTuple, Sequence, Union

import numpy as np
from PIL import Image
from scipy.special import ndtr, ndtri

from .errors import SynthSpecError
from .evaluation import CohortIndex
from .imaging import StainBasis, default_stain_basis, synthesize_from_amounts
from .table import LABELS

SeedLike = Union[int, np.random.SeedSequence]

# Ring reach past the nucleus radius that placement must keep inside the
# tissue disk: ring thickness 10 used downstream plus a safety margin.
_RING_REACH = 16

# Nucleus counter-stain OD amount range.  The wide per-pixel spread
# (gray levels ~28..93, all far below the Otsu split of the nucleus
# channel) keeps patch histograms information-rich without touching the
# ring statistics, which exclude nucleus interiors.
_NUCLEUS_AMOUNT = (0.7, 1.6)

# Per-spot texture jitter so spots of one patient are not statistical
# clones: component weights wobble by +-5%, means shift by up to +-2
# levels inside fixed truncation windows.
_WEIGHT_JITTER = 0.05
_MEAN_JITTER = 2.0

# Rendering noise.  Trace off-stain OD amounts (uniform on [0, x]) and a
# small jitter on the stain OD itself keep the 8-bit forward model from
# aliasing the recovered channel values into a comb-shaped histogram.
_DITHER_NUCLEUS = 0.08
_DITHER_RESIDUAL = 0.06
_STAIN_OD_JITTER = 0.004


class TruncatedNormal(NamedTuple):
    """One mixture component: N(mean, sigma) restricted to [lo, hi]."""

    weight: float
    mean: float
    sigma: float
    lo: int
    hi: int


ClassModel = tuple[TruncatedNormal, ...]


def default_class_models() -> dict[str, ClassModel]:
    """Documented default intensity models on the post-balance 0..255 scale.

    Supports are pairwise disjoint across classes (gaps of at least three
    levels), so a Bayes-optimal pixel classifier is exact by construction:

    - CC:  two equal peaks near 80 and 159 (bimodal signature),
    - CCP: a single peak near 120 (unimodal signature),
    - ONC: 62% of mass in a broad dark component below level 59 plus a
      small bright shoulder, keeping >50% of pixels in the darkest
      quartile of the scale.
    """
    return {
        "CC": (
            TruncatedNormal(0.5, 80.0, 8.0, 62, 98),
            TruncatedNormal(0.5, 159.0, 8.0, 142, 176),
        ),
        "CCP": (TruncatedNormal(1.0, 121.0, 11.0, 102, 140),),
        "ONC": (
            TruncatedNormal(0.62, 30.0, 12.0, 4, 58),
            TruncatedNormal(0.38, 186.0, 4.0, 180, 192),
        ),
    }


@dataclass(frozen=True)
class SynthSpec:
    """Parameters of a synthetic cohort.

    `nuclei_range` endpoints are inclusive; `background` is the physical
    per-channel illumination level the white-balance step must undo.
    """

    patients_per_class: int = 8
    spots_per_patient: int = 3
    spot_size: int = 750
    nuclei_range: tuple[int, int] = (70, 100)
    nucleus_radius: int = 8
    background: tuple[int, int, int] = (247, 245, 243)
    seed: int = 0
    class_models: Mapping[str, ClassModel] = field(default_factory=default_class_models)

    def __post_init__(self) -> None:
        if self.patients_per_class < 1:
            raise SynthSpecError("patients_per_class must be >= 1")
        if self.spots_per_patient < 1:
            raise SynthSpecError("spots_per_patient must be >= 1")
        if not 600 <= self.spot_size <= 3000:
            raise SynthSpecError("spot_size must be in [600, 3000]")
        lo, hi = self.nuclei_range
        if not 1 <= lo <= hi:
            raise SynthSpecError("nuclei_range must satisfy 1 <= lo <= hi")
        if not 3 <= self.nucleus_radius <= 20:
            raise SynthSpecError("nucleus_radius must be in [3, 20]")
        if len(self.background) != 3 or not all(
            200 <= int(b) <= 254 for b in self.background
        ):
            raise SynthSpecError("background channels must be integers in [200, 254]")
        if self.seed < 0:
            raise SynthSpecError("seed must be nonnegative")
        missing = [label for label in LABELS if label not in self.class_models]
        if missing:
            raise SynthSpecError("class_models missing labels: " + ", ".join(missing))
        for label in LABELS:
            _validate_model(label, self.class_models[label])

    @property
    def disk_radius(self) -> int:
        return int(round(0.44 * self.spot_size))


def _validate_model(label: str, model: ClassModel) -> None:
    if len(model) == 0:
        raise SynthSpecError(f"{label}: class model needs at least one component")
    total = 0.0
    for comp in model:
        if comp.weight <= 0.0:
            raise SynthSpecError(f"{label}: component weights must be positive")
        if comp.sigma <= 0.0:
            raise SynthSpecError(f"{label}: component sigma must be positive")
        if not 0 <= comp.lo < comp.hi <= 255:
            raise SynthSpecError(f"{label}: component window must satisfy 0 <= lo < hi <= 255")
        total += comp.weight
    if abs(total - 1.0) > 1e-9:
        raise SynthSpecError(f"{label}: component weights must sum to 1")


@dataclass(frozen=True)
class SpotTruth:
    """Ground truth for one generated spot."""

    label: str
    centers: np.ndarray
    nucleus_radius: int
    cytoplasm_mask: np.ndarray
    stain_targets: np.ndarray

    @property
    def nucleus_count(self) -> int:
        return int(self.centers.shape[0])

    def cytoplasm_values(self) -> np.ndarray:
        """Designed stain-channel values of all cytoplasm pixels."""
        return self.stain_targets[self.cytoplasm_mask]


@dataclass(frozen=True)
class SpotRecord:
    patient_id: str
    spot_id: str
    label: str
    image: np.ndarray
    truth: SpotTruth


@dataclass(frozen=True)
class SynthCohort:
    spec: SynthSpec
    records: tuple[SpotRecord, ...]

    def index(self) -> CohortIndex:
        patients: list[str] = []
        labels: dict[str, str] = {}
        spots: dict[str, list[str]] = {}
        for rec in self.records:
            if rec.patient_id not in labels:
                patients.append(rec.patient_id)
                labels[rec.patient_id] = rec.label
                spots[rec.patient_id] = []
            spots[rec.patient_id].append(rec.spot_id)
        return CohortIndex(
            patients=tuple(patients),
            labels=labels,
            spots={p: tuple(s) for p, s in spots.items()},
        )


def model_pmf(model: ClassModel) -> np.ndarray:
    """Exact pmf of the discretized mixture on the integers 0..255.

    Matches the sampler: a component draws a continuous truncated normal
    on [lo, hi] and rounds to the nearest integer, so level k receives
    the window mass between k - 0.5 and k + 0.5 clipped to the window.
    """
    grid = np.arange(256, dtype=np.float64)
    pmf = np.zeros(256, dtype=np.float64)
    for comp in model:
        z_hi = (np.minimum(grid + 0.5, comp.hi) - comp.mean) / comp.sigma
        z_lo = (np.maximum(grid - 0.5, comp.lo) - comp.mean) / comp.sigma
        mass = ndtr(z_hi) - ndtr(z_lo)
        mass[(grid < comp.lo) | (grid > comp.hi)] = 0.0
        window = ndtr((comp.hi - comp.mean) / comp.sigma) - ndtr(
            (comp.lo - comp.mean) / comp.sigma
        )
        pmf += comp.weight * mass / window
    return pmf / pmf.sum()


def bayes_pixel_accuracy(models: Mapping[str, ClassModel]) -> float:
    """Accuracy of the Bayes-optimal single-pixel classifier, in closed form.

    Equal class priors; each pixel is classified to the class with the
    highest pmf at its level.  With disjoint supports this is exactly 1.
    """
    pmfs = np.stack([model_pmf(models[label]) for label in LABELS])
    winners = np.argmax(pmfs, axis=0)
    per_class = [float(pmfs[k, winners == k].sum()) for k in range(len(LABELS))]
    return float(np.mean(per_class))


def _sample_mixture_continuous(
    rng: np.random.Generator, model: ClassModel, n: int
) -> np.ndarray:
    """Draw n values from the mixture via inverse-CDF sampling (float64).

    Rendering uses the continuous draws directly; rounding the target
    first and re-rounding in the forward model would alias the recovered
    channel values into a comb-shaped histogram.
    """
    weights = np.array([comp.weight for comp in model], dtype=np.float64)
    cum = np.cumsum(weights)
    cum /= cum[-1]
    comp_idx = np.searchsorted(cum, rng.random(n), side="right")
    out = np.empty(n, dtype=np.float64)
    for i, comp in enumerate(model):
        chosen = comp_idx == i
        k = int(chosen.sum())
        if k == 0:
            continue
        a = ndtr((comp.lo - comp.mean) / comp.sigma)
        b = ndtr((comp.hi - comp.mean) / comp.sigma)
        u = a + rng.random(k) * (b - a)
        vals = comp.mean + comp.sigma * ndtri(u)
        out[chosen] = np.clip(vals, comp.lo, comp.hi)
    return out


def sample_mixture(
    rng: np.random.Generator, model: ClassModel, n: int
) -> np.ndarray:
    """Draw n quantized pixel values from the mixture (uint8)."""
    return np.rint(_sample_mixture_continuous(rng, model, n)).astype(np.uint8)


def _render_stain(
    rng: np.random.Generator, values: np.ndarray, basis: StainBasis
) -> np.ndarray:
    """RGB forward rendering of mitochondria-stain channel targets.

    A target value v becomes the OD amount -log10(v / 255), so the
    analysis-side deconvolution recovers ~v.  Trace amounts of the other
    two stains push pixels off the pure one-stain RGB curve; without
    them 8-bit quantization collapses the recovered values onto a
    comb-shaped staircase instead of a smooth histogram.
    """
    amounts = np.zeros((values.size, 3))
    amounts[:, 0] = _DITHER_NUCLEUS * rng.random(values.size)
    amounts[:, 1] = -np.log10(np.maximum(values, 0.5) / 255.0)
    amounts[:, 1] += _STAIN_OD_JITTER * rng.standard_normal(values.size)
    amounts[:, 1] = np.maximum(amounts[:, 1], 0.0)
    amounts[:, 2] = _DITHER_RESIDUAL * rng.random(values.size)
    return synthesize_from_amounts(amounts, basis)


def _place_centers(
    rng: np.random.Generator,
    count: int,
    center: int,
    max_radius: int,
    min_separation: float,
) -> np.ndarray:
    """Sequential random placement inside a disk with a separation floor."""
    placed = np.zeros((count, 2), dtype=np.int64)
    n = 0
    min_sep2 = float(min_separation) ** 2
    attempts_left = 400 * count + 400
    while n < count:
        if attempts_left == 0:
            raise SynthSpecError(
                f"overcrowded spec: placed {n} of {count} nuclei "
                f"(radius {max_radius} disk, separation {min_separation})"
            )
        attempts_left -= 1
        dy, dx = rng.random(2) * 2.0 - 1.0
        if dy * dy + dx * dx > 1.0:
            continue
        y = int(np.rint(center + dy * max_radius))
        x = int(np.rint(center + dx * max_radius))
        d2 = (placed[:n, 0] - y) ** 2 + (placed[:n, 1] - x) ** 2
        if n and d2.min() < min_sep2:
            continue
        placed[n] = (y, x)
        n += 1
    return placed


def _jittered(rng: np.random.Generator, model: ClassModel) -> ClassModel:
    factors = 1.0 + _WEIGHT_JITTER * (rng.random(len(model)) * 2.0 - 1.0)
    shifts = _MEAN_JITTER * (rng.random(len(model)) * 2.0 - 1.0)
    weights = np.array([comp.weight for comp in model]) * factors
    weights /= weights.sum()
    return tuple(
        TruncatedNormal(float(w), comp.mean + float(s), comp.sigma, comp.lo, comp.hi)
        for comp, w, s in zip(model, weights, shifts)
    )


def generate_spot(
    label: str, spec: SynthSpec, seed: SeedLike
) -> tuple[np.ndarray, SpotTruth]:
    """Render one spot image plus its ground truth.

    Deterministic in (label, spec, seed); the random stream is consumed
    in a fixed order (nucleus count, centers, texture jitter, cytoplasm
    values, nucleus stain amounts).
    """
    if label not in spec.class_models:
        raise SynthSpecError(f"unknown class label: {label!r}")
    rng = np.random.default_rng(seed)
    size = spec.spot_size
    center = size // 2
    radius = spec.nucleus_radius

    lo, hi = spec.nuclei_range
    count = int(rng.integers(lo, hi + 1))
    place_radius = spec.disk_radius - (radius + _RING_REACH)
    centers = _place_centers(rng, count, center, place_radius, 2 * radius + 6)

    yy, xx = np.ogrid[:size, :size]
    disk = (yy - center) ** 2 + (xx - center) ** 2 <= spec.disk_radius**2

    model = _jittered(rng, spec.class_models[label])
    values = _sample_mixture_continuous(rng, model, int(disk.sum()))
    basis = default_stain_basis()
    ideal = np.full((size, size, 3), 255, dtype=np.uint8)
    ideal[disk] = _render_stain(rng, values, basis)
    stain_targets = np.zeros((size, size), dtype=np.uint8)
    stain_targets[disk] = np.rint(values).astype(np.uint8)

    nuclei = np.zeros((size, size), dtype=bool)
    for cy, cx in centers:
        y0, y1 = cy - radius, cy + radius + 1
        x0, x1 = cx - radius, cx + radius + 1
        py, px = np.ogrid[y0:y1, x0:x1]
        nuclei[y0:y1, x0:x1] |= (py - cy) ** 2 + (px - cx) ** 2 <= radius**2
    ny, nx = np.nonzero(nuclei)
    amounts = np.zeros((ny.size, 3))
    a_lo, a_hi = _NUCLEUS_AMOUNT
    amounts[:, 0] = a_lo + rng.random(ny.size) * (a_hi - a_lo)
    ideal[ny, nx] = synthesize_from_amounts(amounts, basis)

    tint = np.asarray(spec.background, dtype=np.float64) / 255.0
    physical = np.clip(np.rint(ideal.astype(np.float64) * tint), 0, 255).astype(np.uint8)

    truth = SpotTruth(
        label=label,
        centers=centers,
        nucleus_radius=radius,
        cytoplasm_mask=disk & ~nuclei,
        stain_targets=stain_targets,
    )
    return physical, truth


def generate_cohort(spec: SynthSpec, n_jobs: int = 1) -> SynthCohort:
    """Generate the full cohort, one record per (patient, spot).

    Patients are named <label><nn> and spots s1..sK.  Each spot gets its
    own seed derived from (spec.seed, class, patient, spot), so results
    are independent of n_jobs and cohorts with equal specs are identical.
    """
    if n_jobs < 1:
        raise SynthSpecError("n_jobs must be >= 1")
    plan: list[tuple[str, str, str, np.random.SeedSequence]] = []
    for ci, label in enumerate(LABELS):
        for pi in range(spec.patients_per_class):
            patient_id = f"{label}{pi + 1:02d}"
            for si in range(spec.spots_per_patient):
                seed = np.random.SeedSequence((spec.seed, ci, pi, si))
                plan.append((patient_id, f"s{si + 1}", label, seed))

    def build(job: tuple[str, str, str, np.random.SeedSequence]) -> SpotRecord:
        patient_id, spot_id, label, seed = job
        image, truth = generate_spot(label, spec, seed)
        return SpotRecord(patient_id, spot_id, label, image, truth)

    if n_jobs == 1:
        records = tuple(build(job) for job in plan)
    else:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            records = tuple(pool.map(build, plan))
    return SynthCohort(spec=spec, records=records)


MANIFEST_FIELDS = ("patient_id", "spot_id", "unit_id", "variant", "label", "path")


def write_cohort(cohort: SynthCohort, out_dir: Union[str, Path]) -> Path:
    """Write spot PNGs plus a manifest CSV; returns the manifest path.

    Manifest paths are relative to the manifest's own directory.  Whole
    spots are manifest units with unit_id and variant both "orig",
    matching the feature-table convention that a unit id names the spot
    variant (or a patch id) rather than repeating the spot id.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = out / "manifest.csv"
    with open(manifest, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_FIELDS)
        for rec in cohort.records:
            name = f"{rec.patient_id}_{rec.spot_id}.png"
            Image.fromarray(rec.image, "RGB").save(out / name)
            writer.writerow(
                (rec.patient_id, rec.spot_id, "orig", "orig", rec.label, name)
            )
    return manifest


def load_manifest(path: Union[str, Path]) -> list[dict[str, str]]:
    """Read a manifest CSV back as a list of field dicts."""
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames) != MANIFEST_FIELDS:
            raise SynthSpecError(f"bad manifest header in {path}")
        return [dict(row) for row in reader]
