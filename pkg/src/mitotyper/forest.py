"""Random forest trained from scratch with Gini splits and OOB estimates.

The behavior mirrors the classical R defaults: 50 trees, mtry =
floor(sqrt(p)), bootstrap of size n with replacement, nodes grown to purity
with no pruning.  Everything is deterministic: tree t draws its generator
from SeedSequence((master_seed, t)), so training is reproducible no matter
how many worker threads build trees.

Split selection maximizes the Gini impurity decrease, which for a fixed node
is equivalent to maximizing Q = S_L/n_L + S_R/n_R with S = sum of squared
class counts.  Both counts are exact integers represented in float64, so
equal splits produce bitwise-equal scores and the documented tie-break
(lowest feature index, then lowest threshold) is exact.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateTrainingError, InsufficientTreesError
from .table import LABELS

__all__ = [
    "TrainConfig",
    "Tree",
    "RandomForestModel",
    "best_split",
    "train_forest",
    "predict_class",
    "predict_proba",
    "oob_error",
    "oob_details",
    "save_model",
    "load_model",
]

MODEL_FORMAT = "mitotyper-forest/1"


@dataclass(frozen=True)
class TrainConfig:
    n_trees: int = 50
    mtry: int | None = None  # None = floor(sqrt(dimension))
    min_node_size: int = 1
    seed: int = 0
    n_jobs: int = 1  # worker threads; has no effect on the result

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.min_node_size < 1:
            raise ValueError("min_node_size must be >= 1")
        if self.mtry is not None and self.mtry < 1:
            raise ValueError("mtry must be >= 1")


@dataclass
class Tree:
    """Flat array representation; feature -1 marks a leaf."""

    feature: np.ndarray  # (nodes,) int32
    threshold: np.ndarray  # (nodes,) float64
    left: np.ndarray  # (nodes,) int32
    right: np.ndarray  # (nodes,) int32
    counts: np.ndarray  # (nodes, k) int64 class counts of the node's samples
    in_bag: np.ndarray  # (n_rows,) bool bootstrap membership


@dataclass(frozen=True)
class RandomForestModel:
    trees: tuple[Tree, ...]
    classes: tuple[str, ...]
    dimension: int
    n_rows: int
    config: TrainConfig


def best_split(
    x: np.ndarray, y: np.ndarray, n_classes: int, features: np.ndarray | None = None
) -> tuple[int, float] | None:
    """Best (feature, midpoint threshold) by Gini decrease, or None.

    Candidates are midpoints between consecutive distinct sorted values of
    each feature.  Only splits with strictly positive impurity decrease
    qualify.  Ties resolve to the lowest feature index, then the lowest
    threshold; scanning features ascending and thresholds ascending with a
    strict improvement test realizes exactly that.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    n = y.size
    if features is None:
        features = np.arange(x.shape[1])
    else:
        features = np.sort(np.asarray(features))

    parent = np.bincount(y, minlength=n_classes).astype(np.float64)
    best_q = float((parent**2).sum()) / n  # Q of the unsplit node
    best: tuple[int, float] | None = None

    one_hot = np.zeros((n, n_classes), dtype=np.float64)
    one_hot[np.arange(n), y] = 1.0
    for f in features.tolist():
        vals = x[:, f]
        order = np.argsort(vals, kind="stable")
        vs = vals[order]
        cuts = np.flatnonzero(vs[:-1] < vs[1:])
        if cuts.size == 0:
            continue
        cum = np.cumsum(one_hot[order], axis=0)
        n_left = (cuts + 1).astype(np.float64)
        c_left = cum[cuts]
        s_left = (c_left**2).sum(axis=1)
        c_right = parent - c_left
        s_right = (c_right**2).sum(axis=1)
        q = s_left / n_left + s_right / (n - n_left)
        j = int(np.argmax(q))  # first max = lowest threshold
        if q[j] > best_q:
            best_q = float(q[j])
            best = (int(f), float((vs[cuts[j]] + vs[cuts[j] + 1]) / 2.0))
    return best


def _grow_tree(
    x: np.ndarray, y: np.ndarray, n_classes: int, mtry: int, min_node_size: int, rng
) -> Tree:
    n, p = x.shape
    boot = rng.integers(0, n, size=n)
    in_bag = np.zeros(n, dtype=bool)
    in_bag[boot] = True

    feature: list[int] = []
    threshold: list[float] = []
    left: list[int] = []
    right: list[int] = []
    counts: list[np.ndarray] = []

    def new_node() -> int:
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        counts.append(np.zeros(n_classes, dtype=np.int64))
        return len(feature) - 1

    root = new_node()
    stack: list[tuple[int, np.ndarray]] = [(root, boot)]
    while stack:
        node, idx = stack.pop()
        node_counts = np.bincount(y[idx], minlength=n_classes).astype(np.int64)
        counts[node] = node_counts
        n_node = idx.size
        if n_node < 2 * min_node_size or node_counts.max() == n_node:
            continue
        feats = rng.choice(p, size=mtry, replace=False)
        split = best_split(x[idx], y[idx], n_classes, feats)
        if split is None:
            continue
        f, thr = split
        go_left = x[idx, f] <= thr
        feature[node] = f
        threshold[node] = thr
        left[node] = new_node()
        right[node] = new_node()
        # push right first so the left child is grown next (preorder)
        stack.append((right[node], idx[~go_left]))
        stack.append((left[node], idx[go_left]))

    return Tree(
        feature=np.asarray(feature, dtype=np.int32),
        threshold=np.asarray(threshold, dtype=np.float64),
        left=np.asarray(left, dtype=np.int32),
        right=np.asarray(right, dtype=np.int32),
        counts=np.stack(counts),
        in_bag=in_bag,
    )


def train_forest(x: np.ndarray, labels: list[str], cfg: TrainConfig = TrainConfig()) -> RandomForestModel:
    """Fit the forest on rows x with string labels (order-sensitive, seeded)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != len(labels):
        raise ValueError("x must be (n, p) with one label per row")
    present = set(labels)
    unknown = present - set(LABELS)
    if unknown:
        raise ValueError(f"unknown labels {sorted(unknown)}")
    classes = tuple(c for c in LABELS if c in present)
    if len(classes) < 2:
        raise DegenerateTrainingError(f"degenerate training set: single class {classes}")

    n, p = x.shape
    code = {c: i for i, c in enumerate(classes)}
    y = np.asarray([code[l] for l in labels], dtype=np.int64)
    mtry = cfg.mtry if cfg.mtry is not None else max(1, int(math.floor(math.sqrt(p))))
    if mtry > p:
        raise ValueError(f"mtry {mtry} exceeds dimension {p}")

    def build(t: int) -> Tree:
        rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, t)))
        return _grow_tree(x, y, len(classes), mtry, cfg.min_node_size, rng)

    if cfg.n_jobs > 1:
        with ThreadPoolExecutor(max_workers=cfg.n_jobs) as pool:
            trees = tuple(pool.map(build, range(cfg.n_trees)))
    else:
        trees = tuple(build(t) for t in range(cfg.n_trees))
    return RandomForestModel(trees, classes, p, n, cfg)


def _leaf_of(tree: Tree, x: np.ndarray) -> np.ndarray:
    node = np.zeros(x.shape[0], dtype=np.int64)
    while True:
        live = np.flatnonzero(tree.feature[node] >= 0)
        if live.size == 0:
            return node
        f = tree.feature[node[live]]
        thr = tree.threshold[node[live]]
        go_left = x[live, f] <= thr
        node[live[go_left]] = tree.left[node[live[go_left]]]
        node[live[~go_left]] = tree.right[node[live[~go_left]]]


def _tree_votes(tree: Tree, x: np.ndarray) -> np.ndarray:
    """Per-sample class index voted by one tree (leaf majority)."""
    leaves = _leaf_of(tree, x)
    return np.argmax(tree.counts[leaves], axis=1)


def _as_matrix(model: RandomForestModel, x: np.ndarray) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != model.dimension:
        raise ValueError(f"expected dimension {model.dimension}, got shape {x.shape}")
    return x, single


def predict_proba(model: RandomForestModel, x: np.ndarray) -> np.ndarray:
    """Fraction of trees voting each class; rows sum to 1."""
    x, single = _as_matrix(model, x)
    k = len(model.classes)
    votes = np.zeros((x.shape[0], k), dtype=np.int64)
    for tree in model.trees:
        v = _tree_votes(tree, x)
        votes[np.arange(x.shape[0]), v] += 1
    proba = votes / len(model.trees)
    return proba[0] if single else proba


def predict_class(model: RandomForestModel, x: np.ndarray):
    """Majority vote; ties resolve to the earliest class in (CC, CCP, ONC)."""
    proba = predict_proba(model, x)
    if proba.ndim == 1:
        return model.classes[int(np.argmax(proba))]
    return [model.classes[i] for i in np.argmax(proba, axis=1)]


def oob_details(model: RandomForestModel, x: np.ndarray, labels: list[str]) -> tuple[float, int]:
    """(error rate, counted rows) over out-of-bag votes.

    Rows inside every tree's bootstrap get no vote and leave the denominator.
    """
    x, _ = _as_matrix(model, x)
    if x.shape[0] != model.n_rows or len(labels) != model.n_rows:
        raise ValueError("OOB evaluation requires the original training rows")
    k = len(model.classes)
    votes = np.zeros((model.n_rows, k), dtype=np.int64)
    for tree in model.trees:
        oob = ~tree.in_bag
        if not oob.any():
            continue
        v = _tree_votes(tree, x[oob])
        votes[np.flatnonzero(oob), v] += 1
    counted = votes.sum(axis=1) > 0
    n_counted = int(counted.sum())
    if n_counted == 0:
        raise InsufficientTreesError("no out-of-bag rows: every row is in every bootstrap")
    code = {c: i for i, c in enumerate(model.classes)}
    y = np.asarray([code[l] for l in labels], dtype=np.int64)
    pred = np.argmax(votes[counted], axis=1)
    return float(np.mean(pred != y[counted])), n_counted


def oob_error(model: RandomForestModel, x: np.ndarray, labels: list[str]) -> float:
    return oob_details(model, x, labels)[0]


def save_model(model: RandomForestModel, path) -> None:
    payload = {
        "format": MODEL_FORMAT,
        "classes": list(model.classes),
        "dimension": model.dimension,
        "n_rows": model.n_rows,
        "config": {
            "n_trees": model.config.n_trees,
            "mtry": model.config.mtry,
            "min_node_size": model.config.min_node_size,
            "seed": model.config.seed,
        },
        "trees": [
            {
                "feature": t.feature.tolist(),
                "threshold": t.threshold.tolist(),
                "left": t.left.tolist(),
                "right": t.right.tolist(),
                "counts": t.counts.tolist(),
                "in_bag": np.flatnonzero(t.in_bag).tolist(),
            }
            for t in model.trees
        ],
    }
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def load_model(path) -> RandomForestModel:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format") != MODEL_FORMAT:
        raise ValueError(f"unsupported model format {payload.get('format')!r}")
    cfgd = payload["config"]
    cfg = TrainConfig(
        n_trees=cfgd["n_trees"],
        mtry=cfgd["mtry"],
        min_node_size=cfgd["min_node_size"],
        seed=cfgd["seed"],
    )
    n_rows = payload["n_rows"]
    trees = []
    for td in payload["trees"]:
        in_bag = np.zeros(n_rows, dtype=bool)
        in_bag[np.asarray(td["in_bag"], dtype=np.int64)] = True
        trees.append(
            Tree(
                feature=np.asarray(td["feature"], dtype=np.int32),
                threshold=np.asarray(td["threshold"], dtype=np.float64),
                left=np.asarray(td["left"], dtype=np.int32),
                right=np.asarray(td["right"], dtype=np.int32),
                counts=np.asarray(td["counts"], dtype=np.int64),
                in_bag=in_bag,
            )
        )
    return RandomForestModel(
        tuple(trees), tuple(payload["classes"]), payload["dimension"], n_rows, cfg
    )
