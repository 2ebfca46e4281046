"""Histogram dissimilarity (symmetrized KL) and classical MDS embedding.

ROI histograms routinely contain empty bins, so both directed divergences
are computed after adding a small epsilon to every bin and renormalizing.
The embedding uses the Torgerson construction: double-center the squared
dissimilarities, eigendecompose, and keep the top axes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DissimilarityError, EmptyHistogramError
from .imaging import NormalizedHistogram

__all__ = [
    "DissimilarityMatrix",
    "Embedding2D",
    "kl_divergence",
    "kl_sym",
    "class_mean_histogram",
    "pairwise_kl_matrix",
    "classical_mds",
]


@dataclass(frozen=True)
class DissimilarityMatrix:
    ids: tuple[str, ...]
    values: np.ndarray  # (n, n) nonnegative, symmetric, zero diagonal

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        n = len(self.ids)
        if values.shape != (n, n):
            raise DissimilarityError(f"matrix shape {values.shape} does not match {n} ids")
        if np.any(values < 0):
            raise DissimilarityError("dissimilarities must be nonnegative")
        if np.any(np.diag(values) != 0):
            raise DissimilarityError("diagonal must be zero")
        if not np.array_equal(values, values.T):
            raise DissimilarityError("matrix must be symmetric")
        object.__setattr__(self, "values", values)


@dataclass(frozen=True)
class Embedding2D:
    ids: tuple[str, ...]
    points: np.ndarray  # (n, dims)
    eigenvalues: np.ndarray  # (dims,) descending, clamped >= 0


def _smooth(h: NormalizedHistogram, epsilon: float) -> np.ndarray:
    if h.empty:
        raise EmptyHistogramError("empty histogram")
    m = h.mass + epsilon
    return m / m.sum()


def kl_divergence(
    p: NormalizedHistogram, q: NormalizedHistogram, epsilon: float = 1e-10
) -> float:
    """Directed KL divergence sum(p ln(p/q)) after epsilon smoothing."""
    if p.bins != q.bins:
        raise ValueError(f"bin counts differ: {p.bins} != {q.bins}")
    if epsilon <= 0:
        raise ValueError("epsilon must be > 0")
    pm = _smooth(p, epsilon)
    qm = _smooth(q, epsilon)
    return float(np.sum(pm * np.log(pm / qm)))


def kl_sym(p: NormalizedHistogram, q: NormalizedHistogram, epsilon: float = 1e-10) -> float:
    """Mean of the two directed divergences; symmetric by construction."""
    return (kl_divergence(p, q, epsilon) + kl_divergence(q, p, epsilon)) / 2.0


def class_mean_histogram(
    groups: dict[str, list[NormalizedHistogram]]
) -> dict[str, NormalizedHistogram]:
    """Bin-wise arithmetic mean of each class's normalized histograms."""
    out: dict[str, NormalizedHistogram] = {}
    for label, hists in groups.items():
        if not hists:
            raise ValueError(f"empty class {label!r}")
        bins = hists[0].bins
        if any(h.bins != bins for h in hists):
            raise ValueError(f"class {label!r} mixes bin counts")
        mean = np.mean(np.stack([h.mass for h in hists]), axis=0)
        out[label] = NormalizedHistogram(mean / mean.sum())
    return out


def pairwise_kl_matrix(
    items: list[tuple[str, NormalizedHistogram]], epsilon: float = 1e-10
) -> DissimilarityMatrix:
    n = len(items)
    values = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            values[i, j] = values[j, i] = kl_sym(items[i][1], items[j][1], epsilon)
    return DissimilarityMatrix(tuple(name for name, _ in items), values)


def classical_mds(d: DissimilarityMatrix, dims: int = 2) -> Embedding2D:
    """Torgerson embedding of a dissimilarity matrix.

    B = -1/2 J D^2 J is eigendecomposed; the top ``dims`` eigenvalues
    (clamped at zero) scale their eigenvectors into coordinates.  Each axis
    is sign-fixed so its largest-magnitude coordinate is positive, making
    the output deterministic.
    """
    n = len(d.ids)
    if n < 3:
        raise DissimilarityError(f"too few items for embedding: {n}")
    j = np.eye(n) - np.ones((n, n)) / n
    b = -0.5 * j @ (d.values**2) @ j
    b = (b + b.T) / 2.0  # symmetrize round-off
    eigvals, eigvecs = np.linalg.eigh(b)
    order = np.argsort(eigvals)[::-1][:dims]
    top = np.clip(eigvals[order], 0.0, None)
    axes = eigvecs[:, order]
    for a in range(axes.shape[1]):
        pivot = int(np.argmax(np.abs(axes[:, a])))
        if axes[pivot, a] < 0:
            axes[:, a] = -axes[:, a]
    points = axes * np.sqrt(top)
    return Embedding2D(d.ids, points, top)
