"""Leave-one-patient-out cross-validation and the reported metrics.

Folds hold out all rows of one patient.  Unit-level forest predictions are
aggregated hierarchically: in "patch" mode each spot takes the majority of
its patches and the patient takes the majority of spots; in "whole" mode
every unit (augmentation variant) votes directly.  Patient confidence is
1 - H(image-label distribution)/ln 3.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.stats import rankdata

from .errors import CohortError, DegenerateClassError
from .forest import RandomForestModel, TrainConfig, predict_proba, train_forest
from .table import LABELS, FeatureTable, format_value

__all__ = [
    "CohortIndex",
    "UnitPrediction",
    "FoldResult",
    "ConfusionMatrix",
    "CvReport",
    "SweepRow",
    "lopo_split",
    "aggregate_patient",
    "balanced_error",
    "roc_curve_auc",
    "run_lopo",
    "tree_count_sweep",
    "write_cv_report",
    "write_sweep_table",
]

LN3 = math.log(3.0)


@dataclass(frozen=True)
class CohortIndex:
    patients: tuple[str, ...]
    labels: dict[str, str]
    spots: dict[str, tuple[str, ...]]

    @classmethod
    def from_table(cls, table: FeatureTable, source: str) -> "CohortIndex":
        patients = table.patients()
        labels: dict[str, str] = {}
        spots: dict[str, list[str]] = {p: [] for p in patients}
        counted: dict[str, int] = {p: 0 for p in patients}
        for row in table.rows:
            prev = labels.setdefault(row.patient_id, row.label)
            if prev != row.label:
                raise CohortError(
                    f"patient {row.patient_id!r} carries labels {prev!r} and {row.label!r}"
                )
            if row.source != source:
                continue
            counted[row.patient_id] += 1
            if row.spot_id not in spots[row.patient_id]:
                spots[row.patient_id].append(row.spot_id)
        empty = [p for p in patients if counted[p] == 0]
        if empty:
            raise CohortError(f"empty patient: {empty[0]!r} has no {source!r} rows")
        return cls(patients, labels, {p: tuple(s) for p, s in spots.items()})

    def class_counts(self) -> dict[str, int]:
        out = {c: 0 for c in LABELS}
        for p in self.patients:
            out[self.labels[p]] += 1
        return {c: n for c, n in out.items() if n}


class UnitPrediction(NamedTuple):
    spot_id: str
    unit_id: str
    label: str
    proba: np.ndarray  # (3,) in LABELS order


@dataclass(frozen=True)
class FoldResult:
    patient_id: str
    true_label: str
    predicted: str
    confidence: float
    train_patients: tuple[str, ...]
    n_train_rows: int
    units: tuple[UnitPrediction, ...]
    image_labels: tuple[str, ...]  # spot-level (patch mode) or unit-level


@dataclass(frozen=True)
class ConfusionMatrix:
    classes: tuple[str, ...]
    counts: np.ndarray  # (k, k) true x predicted

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.shape != (len(self.classes), len(self.classes)):
            raise ValueError("confusion matrix shape mismatch")
        object.__setattr__(self, "counts", counts)


@dataclass(frozen=True)
class CvReport:
    source: str
    mode: str
    seed: int
    n_trees: int
    classes: tuple[str, ...]
    folds: tuple[FoldResult, ...]
    confusion: ConfusionMatrix
    balanced_error: float
    image_error: float
    n_images: int
    auc: dict[str, float] | None
    roc_points: dict[str, np.ndarray] | None
    warnings: tuple[str, ...]


class SweepRow(NamedTuple):
    n_trees: int
    per_class_accuracy: dict[str, float]
    accuracy: float
    balanced_error: float


def lopo_split(idx: CohortIndex) -> list[tuple[tuple[str, ...], str]]:
    """One fold per patient: (train patients, held-out patient)."""
    if len(idx.patients) < 3:
        raise CohortError(f"need >= 3 patients, have {len(idx.patients)}")
    if len(set(idx.labels.values())) < 2:
        raise CohortError("cohort carries a single class")
    return [
        (tuple(p for p in idx.patients if p != held), held)
        for held in idx.patients
    ]


def _majority(labels: list[str], probas: list[np.ndarray]) -> str:
    """Majority label; ties go to the highest mean vote fraction, then class order."""
    counts = np.zeros(len(LABELS), dtype=np.int64)
    for l in labels:
        counts[LABELS.index(l)] += 1
    top = counts.max()
    tied = np.flatnonzero(counts == top)
    if tied.size == 1:
        return LABELS[tied[0]]
    mean_fraction = np.mean(np.stack(probas), axis=0)
    best = tied[int(np.argmax(mean_fraction[tied]))]  # argmax keeps class order on ties
    return LABELS[best]


def aggregate_patient(units: list[UnitPrediction], mode: str = "patch") -> tuple[str, float, list[str]]:
    """Patient label, confidence, and the image-level labels behind them."""
    if not units:
        raise ValueError("no unit predictions to aggregate")
    if mode == "patch":
        by_spot: dict[str, list[UnitPrediction]] = {}
        for u in units:
            by_spot.setdefault(u.spot_id, []).append(u)
        image_labels: list[str] = []
        image_probas: list[np.ndarray] = []
        for spot_units in by_spot.values():
            image_labels.append(
                _majority([u.label for u in spot_units], [u.proba for u in spot_units])
            )
            image_probas.append(np.mean(np.stack([u.proba for u in spot_units]), axis=0))
    elif mode == "whole":
        image_labels = [u.label for u in units]
        image_probas = [u.proba for u in units]
    else:
        raise ValueError(f"unknown aggregation mode {mode!r}")

    label = _majority(image_labels, image_probas)
    hist = np.bincount([LABELS.index(l) for l in image_labels], minlength=3) / len(image_labels)
    nonzero = hist[hist > 0]
    entropy = float(-np.sum(nonzero * np.log(nonzero)))
    confidence = max(0.0, 1.0 - entropy / LN3)
    return label, confidence, image_labels


def balanced_error(cm: ConfusionMatrix) -> float:
    """Mean of per-class error rates (misclassified / class count)."""
    counts = cm.counts
    row_sums = counts.sum(axis=1)
    if np.any(row_sums == 0):
        missing = cm.classes[int(np.argmin(row_sums))]
        raise CohortError(f"class {missing!r} has no patients")
    per_class = (row_sums - np.diag(counts)) / row_sums
    return float(per_class.mean())


def roc_curve_auc(is_positive: np.ndarray, scores: np.ndarray) -> tuple[np.ndarray, float]:
    """One-vs-rest ROC points and AUC by the mid-rank statistic.

    Returns (points, auc) where points rows are (threshold, fpr, tpr) for
    thresholds descending over the distinct scores, bracketed by the (0,0)
    and (1,1) corners.  Tied scores contribute half, matching trapezoidal
    integration over the tie plateau.
    """
    is_positive = np.asarray(is_positive, dtype=bool)
    scores = np.asarray(scores, dtype=np.float64)
    n_pos = int(is_positive.sum())
    n_neg = int((~is_positive).sum())
    if n_pos == 0 or n_neg == 0:
        raise DegenerateClassError(f"need positives and negatives, have {n_pos}/{n_neg}")

    ranks = rankdata(scores, method="average")
    auc = (float(ranks[is_positive].sum()) - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)

    points = [(math.inf, 0.0, 0.0)]
    for thr in sorted(set(scores.tolist()), reverse=True):
        hit = scores >= thr
        points.append(
            (
                thr,
                float((hit & ~is_positive).sum()) / n_neg,
                float((hit & is_positive).sum()) / n_pos,
            )
        )
    return np.asarray(points, dtype=np.float64), float(auc)


def _global_proba(model: RandomForestModel, x: np.ndarray) -> np.ndarray:
    """Vote fractions expanded into fixed (CC, CCP, ONC) order."""
    local = predict_proba(model, x)
    out = np.zeros((local.shape[0], len(LABELS)))
    for j, c in enumerate(model.classes):
        out[:, LABELS.index(c)] = local[:, j]
    return out


def _fold_seed(master: int, fold_index: int) -> int:
    return int(np.random.SeedSequence((master, fold_index)).generate_state(1)[0])


def run_lopo(
    table: FeatureTable,
    source: str = "HIST",
    mode: str = "patch",
    cfg: TrainConfig = TrainConfig(),
    n_jobs: int = 1,
) -> CvReport:
    """Full leave-one-patient-out evaluation of one feature source."""
    idx = CohortIndex.from_table(table, source)
    folds = lopo_split(idx)
    rows = table.rows_for(source)

    def run_fold(args: tuple[int, tuple[tuple[str, ...], str]]) -> FoldResult:
        fold_i, (train_patients, held) = args
        train_set = set(train_patients)
        train_rows = [r for r in rows if r.patient_id in train_set]
        test_rows = [r for r in rows if r.patient_id == held]
        x_train = np.stack([r.values for r in train_rows])
        y_train = [r.label for r in train_rows]
        fold_cfg = TrainConfig(
            n_trees=cfg.n_trees,
            mtry=cfg.mtry,
            min_node_size=cfg.min_node_size,
            seed=_fold_seed(cfg.seed, fold_i),
            n_jobs=cfg.n_jobs,
        )
        model = train_forest(x_train, y_train, fold_cfg)
        x_test = np.stack([r.values for r in test_rows])
        proba = _global_proba(model, x_test)
        units = tuple(
            UnitPrediction(r.spot_id, r.unit_id, LABELS[int(np.argmax(p))], p)
            for r, p in zip(test_rows, proba)
        )
        label, confidence, image_labels = aggregate_patient(list(units), mode)
        return FoldResult(
            patient_id=held,
            true_label=idx.labels[held],
            predicted=label,
            confidence=confidence,
            train_patients=train_patients,
            n_train_rows=len(train_rows),
            units=units,
            image_labels=tuple(image_labels),
        )

    jobs = list(enumerate(folds))
    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            results = tuple(pool.map(run_fold, jobs))
    else:
        results = tuple(run_fold(j) for j in jobs)

    classes = tuple(c for c in LABELS if c in idx.class_counts())
    k = len(classes)
    counts = np.zeros((k, k), dtype=np.int64)
    for fr in results:
        counts[classes.index(fr.true_label), classes.index(fr.predicted)] += 1
    confusion = ConfusionMatrix(classes, counts)
    be = balanced_error(confusion)

    image_total = sum(len(fr.image_labels) for fr in results)
    image_wrong = sum(
        sum(1 for l in fr.image_labels if l != fr.true_label) for fr in results
    )
    image_error = image_wrong / image_total

    warnings: list[str] = []
    auc: dict[str, float] | None = None
    roc_points: dict[str, np.ndarray] | None = None
    counts_by_class = idx.class_counts()
    n_patients = len(idx.patients)
    degenerate = [
        c
        for c in classes
        if counts_by_class[c] < 2 or n_patients - counts_by_class[c] < 2
    ]
    if degenerate:
        warnings.append(
            f"ROC skipped: class(es) {', '.join(degenerate)} lack 2 positives or 2 negatives"
        )
    else:
        auc = {}
        roc_points = {}
        for c in classes:
            ci = LABELS.index(c)
            scores = np.array(
                [float(np.mean([u.proba[ci] for u in fr.units])) for fr in results]
            )
            is_pos = np.array([fr.true_label == c for fr in results])
            pts, a = roc_curve_auc(is_pos, scores)
            auc[c] = a
            roc_points[c] = pts

    return CvReport(
        source=source,
        mode=mode,
        seed=cfg.seed,
        n_trees=cfg.n_trees,
        classes=classes,
        folds=results,
        confusion=confusion,
        balanced_error=be,
        image_error=image_error,
        n_images=image_total,
        auc=auc,
        roc_points=roc_points,
        warnings=tuple(warnings),
    )


def tree_count_sweep(
    table: FeatureTable,
    grid: list[int],
    source: str = "HIST",
    mode: str = "patch",
    cfg: TrainConfig = TrainConfig(),
    n_jobs: int = 1,
) -> list[SweepRow]:
    """Patient-level accuracy per class for each forest size in the grid."""
    out: list[SweepRow] = []
    for n_trees in grid:
        step_cfg = TrainConfig(
            n_trees=n_trees, mtry=cfg.mtry, min_node_size=cfg.min_node_size, seed=cfg.seed
        )
        report = run_lopo(table, source=source, mode=mode, cfg=step_cfg, n_jobs=n_jobs)
        counts = report.confusion.counts
        per_class = {
            c: float(counts[i, i] / counts[i].sum()) for i, c in enumerate(report.classes)
        }
        accuracy = float(np.trace(counts) / counts.sum())
        out.append(SweepRow(n_trees, per_class, accuracy, report.balanced_error))
    return out


def _write_lines(path: str, lines: list[str]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def write_cv_report(report: CvReport, out_dir: str | os.PathLike) -> dict[str, str]:
    """Emit the report files; returns {name: path}."""
    out_dir = os.fspath(out_dir)
    os.makedirs(out_dir, exist_ok=True)
    paths: dict[str, str] = {}

    def target(name: str) -> str:
        paths[name] = os.path.join(out_dir, name)
        return paths[name]

    lines = ["patient_id,true_label,predicted_label,confidence,n_images"]
    for fr in report.folds:
        lines.append(
            f"{fr.patient_id},{fr.true_label},{fr.predicted},"
            f"{format_value(fr.confidence)},{len(fr.image_labels)}"
        )
    _write_lines(target("patient_predictions.csv"), lines)

    lines = ["patient_id,spot_id,unit_id,true_label,predicted_label,p_CC,p_CCP,p_ONC"]
    for fr in report.folds:
        for u in fr.units:
            proba = ",".join(format_value(v) for v in u.proba)
            lines.append(
                f"{fr.patient_id},{u.spot_id},{u.unit_id},{fr.true_label},{u.label},{proba}"
            )
    _write_lines(target("unit_predictions.csv"), lines)

    lines = ["true_label," + ",".join(f"pred_{c}" for c in report.classes)]
    for i, c in enumerate(report.classes):
        lines.append(c + "," + ",".join(str(v) for v in report.confusion.counts[i]))
    _write_lines(target("confusion_matrix.csv"), lines)

    lines = ["metric,value"]
    lines.append(f"balanced_error,{format_value(report.balanced_error)}")
    lines.append(f"image_error,{format_value(report.image_error)}")
    lines.append(f"n_patients,{len(report.folds)}")
    lines.append(f"n_images,{report.n_images}")
    if report.auc is not None:
        for c in report.classes:
            lines.append(f"auc_{c},{format_value(report.auc[c])}")
    _write_lines(target("metrics.csv"), lines)

    if report.roc_points is not None:
        lines = ["label,threshold,fpr,tpr"]
        for c in report.classes:
            for thr, fpr, tpr in report.roc_points[c]:
                thr_text = "inf" if math.isinf(thr) else format_value(thr)
                lines.append(f"{c},{thr_text},{format_value(fpr)},{format_value(tpr)}")
        _write_lines(target("roc_points.csv"), lines)

    text = [
        f"cross-validation report (source={report.source}, mode={report.mode}, "
        f"trees={report.n_trees}, seed={report.seed})",
        f"patients: {len(report.folds)}   images: {report.n_images}",
        f"balanced error: {100 * report.balanced_error:.2f}%",
        f"image error:    {100 * report.image_error:.2f}%",
        "confusion matrix (rows true, columns predicted "
        + "/".join(report.classes)
        + "):",
    ]
    for i, c in enumerate(report.classes):
        text.append(f"  {c:>4s}: " + " ".join(f"{v:4d}" for v in report.confusion.counts[i]))
    if report.auc is not None:
        text.append(
            "AUC: " + "  ".join(f"{c}={report.auc[c]:.3f}" for c in report.classes)
        )
    for w in report.warnings:
        text.append(f"warning: {w}")
    _write_lines(target("report.txt"), text)
    return paths


def write_sweep_table(rows: list[SweepRow], out_dir: str | os.PathLike) -> str:
    out_dir = os.fspath(out_dir)
    os.makedirs(out_dir, exist_ok=True)
    classes = sorted({c for r in rows for c in r.per_class_accuracy})
    path = os.path.join(out_dir, "tree_sweep.csv")
    lines = ["n_trees," + ",".join(f"acc_{c}" for c in classes) + ",accuracy,balanced_error"]
    for r in rows:
        cells = [str(r.n_trees)]
        cells.extend(format_value(r.per_class_accuracy[c]) for c in classes)
        cells.append(format_value(r.accuracy))
        cells.append(format_value(r.balanced_error))
        lines.append(",".join(cells))
    _write_lines(path, lines)
    return path
