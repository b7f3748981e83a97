"""Classifier bank for trace vectors: KNN, LDA, linear SVM, random forest.

Everything here is deliberately self-contained and deterministic: given
the same records and seed, training and prediction are bit-reproducible.
Tie rules are explicit (nearest-neighbor distance ties break toward the
lower record index, vote ties toward the smaller class id), and records
are put into a canonical order before any order-sensitive step, so a
permutation of the training list cannot change the model.

Features are z-scored per dimension with statistics computed on the
training split only; the scaler is stored with the model.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ParseError, ValidationError

__all__ = [
    "FeatureRecord",
    "TrainedModel",
    "EvalReport",
    "KINDS",
    "stratified_split",
    "train",
    "predict",
    "predict_batch",
    "evaluate",
    "kfold_cv",
    "save_model",
    "load_model",
]

KINDS = ("knn", "lda", "svm_linear", "random_forest")

MODEL_FORMAT = "convtrace-model-v1"

_DEFAULT_HYPER = {
    "knn": {"k": 5},
    "lda": {"ridge": 1e-6},
    "svm_linear": {"epochs": 200, "lam": 1e-4},
    "random_forest": {"n_trees": 100, "max_depth": 16},
}


@dataclass(frozen=True, eq=False)
class FeatureRecord:
    """One labeled feature vector; index is the manifest row when known."""

    features: np.ndarray
    label: int
    source: str = ""
    index: int | None = None


@dataclass(frozen=True, eq=False)
class TrainedModel:
    kind: str
    hyper: dict
    seed: int
    classes: tuple[int, ...]
    n_features: int
    scaler_mean: np.ndarray
    scaler_std: np.ndarray
    params: dict = field(default_factory=dict)


@dataclass(frozen=True, eq=False)
class EvalReport:
    """Accuracy summary; confusion rows are true classes in sorted order."""

    classes: tuple[int, ...]
    confusion: np.ndarray
    fold_accuracies: tuple[float, ...]

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.confusion) / self.confusion.sum())

    @property
    def mean_accuracy(self) -> float:
        return float(np.mean(self.fold_accuracies))

    @property
    def per_class_accuracy(self) -> dict[int, float]:
        rows = self.confusion.sum(axis=1)
        return {
            c: float(self.confusion[i, i] / rows[i]) if rows[i] else 0.0
            for i, c in enumerate(self.classes)
        }


def _canonical_order(records) -> list[FeatureRecord]:
    """Sort records so training never depends on list order.

    Manifest indices are the canonical key when every record carries a
    distinct one; otherwise falls back to record content.
    """
    records = list(records)
    indices = [r.index for r in records]
    if all(i is not None for i in indices) and len(set(indices)) == len(indices):
        return sorted(records, key=lambda r: r.index)
    return sorted(records, key=lambda r: (tuple(r.features), r.label, r.source))


def _check_dims(records) -> int:
    dims = {len(r.features) for r in records}
    if len(dims) != 1:
        raise ValidationError(f"records disagree in feature dimension: {sorted(dims)}")
    return dims.pop()


def stratified_split(records, train_fraction: float = 0.7, seed: int = 0):
    """Split preserving per-class proportions to within one record.

    Deterministic under seed.  A class with a single record stays in the
    training side so every class remains trainable.
    """
    records = list(records)
    if not records:
        raise ValidationError("cannot split an empty record list")
    records = _canonical_order(records)
    by_class: dict[int, list[FeatureRecord]] = {}
    for r in records:
        by_class.setdefault(r.label, []).append(r)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    train_part: list[FeatureRecord] = []
    test_part: list[FeatureRecord] = []
    for label in sorted(by_class):
        group = by_class[label]
        perm = rng.permutation(len(group))
        n_train = int(math.floor(train_fraction * len(group) + 0.5))  # half-up
        n_train = min(max(n_train, 1), len(group))
        chosen = set(perm[:n_train].tolist())
        for i, rec in enumerate(group):
            (train_part if i in chosen else test_part).append(rec)
    return train_part, test_part


def _fit_scaler(x: np.ndarray):
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    std = np.where(std < 1e-12, 1.0, std)  # constant feature: leave unscaled
    return mean, std


def train(kind: str, records, hyper: dict | None = None, seed: int = 0) -> TrainedModel:
    """Fit one classifier of the requested kind.

    knn            stores the (standardized) training set verbatim
    lda            two-class Fisher discriminant, pooled covariance with a
                   1e-6 diagonal ridge, threshold at the projected midpoint
    svm_linear     hinge loss by deterministic full-batch subgradient
                   descent, step 1/(lam*t), 200 epochs, lam = 1e-4
    random_forest  100 trees, bootstrap per tree, sqrt(D) features per
                   split, Gini impurity, grown to purity or depth 16; all
                   randomness derived from the seed
    """
    if kind not in KINDS:
        raise ValidationError(f"unknown classifier kind {kind!r}")
    records = _canonical_order(records)
    if not records:
        raise ValidationError("cannot train on an empty record list")
    d = _check_dims(records)
    hp = dict(_DEFAULT_HYPER[kind])
    hp.update(hyper or {})
    x_raw = np.array([r.features for r in records], dtype=np.float64)
    y = np.array([r.label for r in records], dtype=np.int64)
    classes = tuple(sorted(set(y.tolist())))
    mean, std = _fit_scaler(x_raw)
    x = (x_raw - mean) / std
    if kind == "knn":
        params = {"x": x, "y": y}
    elif kind == "lda":
        params = _train_lda(x, y, classes, hp)
    elif kind == "svm_linear":
        params = _train_svm(x, y, classes, hp)
    else:
        params = _train_forest(x, y, classes, hp, seed)
    return TrainedModel(
        kind=kind, hyper=hp, seed=seed, classes=classes, n_features=d,
        scaler_mean=mean, scaler_std=std, params=params,
    )


def _train_lda(x, y, classes, hp):
    if len(classes) != 2:
        raise ValidationError("lda is two-class; got classes " + repr(classes))
    c0, c1 = classes
    x0, x1 = x[y == c0], x[y == c1]
    mu0, mu1 = x0.mean(axis=0), x1.mean(axis=0)
    n = len(x)
    scatter = (x0 - mu0).T @ (x0 - mu0) + (x1 - mu1).T @ (x1 - mu1)
    pooled = scatter / max(n - 2, 1) + hp["ridge"] * np.eye(x.shape[1])
    w = np.linalg.solve(pooled, mu1 - mu0)
    threshold = float(w @ (mu0 + mu1) / 2.0)
    return {"w": w, "threshold": threshold, "mu0": mu0, "mu1": mu1}


def _train_svm(x, y, classes, hp):
    if len(classes) != 2:
        raise ValidationError("svm_linear is two-class; got classes " + repr(classes))
    c0, c1 = classes
    sign = np.where(y == c1, 1.0, -1.0)
    n, d = x.shape
    lam = hp["lam"]
    w = np.zeros(d)
    b = 0.0
    radius = 1.0 / math.sqrt(lam)
    for t in range(1, hp["epochs"] + 1):
        eta = 1.0 / (lam * t)
        margins = sign * (x @ w + b)
        viol = margins < 1.0
        grad_w = lam * w - (sign[viol, None] * x[viol]).sum(axis=0) / n
        grad_b = -sign[viol].sum() / n
        w = w - eta * grad_w
        b = b - eta * grad_b
        norm = np.linalg.norm(w)
        if norm > radius:  # keep iterates inside the feasible ball
            w *= radius / norm
    return {"w": w, "b": b}


def _gini_best_split(xs, ys, n_classes):
    """Best (threshold, impurity) for one feature, or None if unsplittable.

    xs must be sorted ascending; candidate thresholds are midpoints of
    consecutive distinct values.
    """
    n = len(ys)
    onehot = np.zeros((n, n_classes))
    onehot[np.arange(n), ys] = 1.0
    left = np.cumsum(onehot, axis=0)[:-1]  # class counts left of each boundary
    total = left[-1] + onehot[-1]
    right = total - left
    nl = np.arange(1, n)
    nr = n - nl
    gini_l = 1.0 - ((left / nl[:, None]) ** 2).sum(axis=1)
    gini_r = 1.0 - ((right / nr[:, None]) ** 2).sum(axis=1)
    weighted = (nl * gini_l + nr * gini_r) / n
    valid = xs[1:] > xs[:-1]  # only boundaries between distinct values
    if not valid.any():
        return None
    weighted = np.where(valid, weighted, np.inf)
    best = int(np.argmin(weighted))  # argmin takes the first: smaller threshold on ties
    return (0.5 * (xs[best] + xs[best + 1]), float(weighted[best]))


def _grow_tree(x, y_idx, n_classes, rng, max_depth, n_feat_split):
    """Grow one CART tree; returns flat node arrays.

    feature[i] == -1 marks a leaf; counts[i] holds the class histogram of
    the training samples that reached node i.
    """
    feature, threshold, left, right, counts = [], [], [], [], []

    def node_counts(idx):
        return np.bincount(y_idx[idx], minlength=n_classes)

    def build(idx, depth):
        me = len(feature)
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        counts.append(node_counts(idx))
        hist = counts[me]
        if depth >= max_depth or len(idx) < 2 or np.count_nonzero(hist) == 1:
            return me
        feats = rng.choice(x.shape[1], size=n_feat_split, replace=False)
        parent_gini = 1.0 - ((hist / len(idx)) ** 2).sum()
        best = None  # (impurity, order, feature, threshold)
        for order, f in enumerate(feats):
            vals = x[idx, f]
            srt = np.argsort(vals, kind="stable")
            res = _gini_best_split(vals[srt], y_idx[idx][srt], n_classes)
            if res is None:
                continue
            thr, imp = res
            if best is None or imp < best[0] - 1e-15:
                best = (imp, order, int(f), thr)
        if best is None or best[0] >= parent_gini - 1e-15:
            return me
        _, _, f, thr = best
        go_left = x[idx, f] <= thr
        feature[me] = f
        threshold[me] = thr
        left[me] = build(idx[go_left], depth + 1)
        right[me] = build(idx[~go_left], depth + 1)
        return me

    build(np.arange(len(y_idx)), 0)
    return {
        "feature": np.array(feature, dtype=np.int64),
        "threshold": np.array(threshold, dtype=np.float64),
        "left": np.array(left, dtype=np.int64),
        "right": np.array(right, dtype=np.int64),
        "counts": np.array(counts, dtype=np.int64),
    }


def _train_forest(x, y, classes, hp, seed):
    n, d = x.shape
    class_to_idx = {c: i for i, c in enumerate(classes)}
    y_idx = np.array([class_to_idx[v] for v in y], dtype=np.int64)
    n_trees = hp["n_trees"]
    n_feat_split = max(1, int(math.isqrt(d)))
    ss = np.random.SeedSequence(seed)
    master = np.random.Generator(np.random.PCG64(ss))
    # all bootstrap draws happen before any tree is grown, from the
    # canonical record order, so the forest is permutation-invariant
    bootstraps = master.integers(0, n, size=(n_trees, n))
    tree_rngs = [np.random.Generator(np.random.PCG64(child)) for child in ss.spawn(n_trees)]
    trees = []
    for b, rng in zip(bootstraps, tree_rngs):
        trees.append(_grow_tree(x[b], y_idx[b], len(classes), rng, hp["max_depth"], n_feat_split))
    return {"trees": trees, "n_feat_split": n_feat_split}


def _tree_votes(tree, x: np.ndarray) -> np.ndarray:
    """Class-index vote of one tree for each row of x."""
    node = np.zeros(len(x), dtype=np.int64)
    feature = tree["feature"]
    active = feature[node] >= 0
    while active.any():
        idx = np.flatnonzero(active)
        cur = node[idx]
        go_left = x[idx, feature[cur]] <= tree["threshold"][cur]
        node[idx] = np.where(go_left, tree["left"][cur], tree["right"][cur])
        active = feature[node] >= 0
    counts = tree["counts"][node]
    return np.argmax(counts, axis=1)  # argmax takes the first: smaller class on ties


def _scale(model: TrainedModel, x: np.ndarray) -> np.ndarray:
    return (x - model.scaler_mean) / model.scaler_std


def predict_batch(model: TrainedModel, features: np.ndarray) -> np.ndarray:
    """Predict class ids for a (n, D) feature matrix."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim == 1:
        features = features[None, :]
    if features.shape[1] != model.n_features:
        raise ValidationError(
            f"feature dimension {features.shape[1]} does not match model {model.n_features}"
        )
    x = _scale(model, features)
    classes = np.array(model.classes)
    if model.kind == "knn":
        return classes[_knn_votes(model, x)]
    if model.kind == "lda":
        score = x @ model.params["w"]
        return np.where(score > model.params["threshold"], classes[1], classes[0])
    if model.kind == "svm_linear":
        score = x @ model.params["w"] + model.params["b"]
        return np.where(score > 0.0, classes[1], classes[0])
    votes = np.stack([_tree_votes(t, x) for t in model.params["trees"]])
    n_classes = len(classes)
    tallies = np.apply_along_axis(np.bincount, 0, votes, None, n_classes)
    return classes[np.argmax(tallies, axis=0)]


def _knn_votes(model, x):
    train_x = model.params["x"]
    train_y = model.params["y"]
    k = model.hyper["k"]
    class_to_idx = {c: i for i, c in enumerate(model.classes)}
    out = np.empty(len(x), dtype=np.int64)
    for i, q in enumerate(x):
        dist = np.sqrt(((train_x - q) ** 2).sum(axis=1))
        order = np.argsort(dist, kind="stable")  # equal distances: lower index first
        neighbors = order[:k]
        tally = np.zeros(len(model.classes), dtype=np.int64)
        for j in neighbors:
            tally[class_to_idx[int(train_y[j])]] += 1
        out[i] = np.argmax(tally)  # first max: smaller class id on vote ties
    return out


def predict(model: TrainedModel, features) -> int:
    """Class id for a single feature vector."""
    return int(predict_batch(model, np.asarray(features, dtype=np.float64))[0])


def evaluate(model: TrainedModel, records) -> EvalReport:
    records = list(records)
    if not records:
        raise ValidationError("cannot evaluate on an empty record list")
    x = np.array([r.features for r in records], dtype=np.float64)
    y_true = np.array([r.label for r in records])
    y_pred = predict_batch(model, x)
    classes = tuple(sorted(set(y_true.tolist()) | set(model.classes)))
    lookup = {c: i for i, c in enumerate(classes)}
    confusion = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for t, p in zip(y_true, y_pred):
        confusion[lookup[int(t)], lookup[int(p)]] += 1
    acc = float(np.trace(confusion) / confusion.sum())
    return EvalReport(classes=classes, confusion=confusion, fold_accuracies=(acc,))


def _stratified_folds(records, folds, seed):
    by_class: dict[int, list[FeatureRecord]] = {}
    for r in records:
        by_class.setdefault(r.label, []).append(r)
    for label, group in sorted(by_class.items()):
        if len(group) < folds:
            raise ValidationError(
                f"class {label} has {len(group)} records, fewer than {folds} folds"
            )
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    assignment: list[list[FeatureRecord]] = [[] for _ in range(folds)]
    for label in sorted(by_class):
        group = by_class[label]
        perm = rng.permutation(len(group))
        for pos, gi in enumerate(perm):
            assignment[pos % folds].append(group[gi])
    return assignment


def kfold_cv(kind: str, records, folds: int = 5, seed: int = 0,
             hyper: dict | None = None) -> EvalReport:
    """Stratified k-fold cross-validation of one classifier kind."""
    records = _canonical_order(records)
    _check_dims(records)
    fold_sets = _stratified_folds(records, folds, seed)
    classes = tuple(sorted({r.label for r in records}))
    lookup = {c: i for i, c in enumerate(classes)}
    confusion = np.zeros((len(classes), len(classes)), dtype=np.int64)
    fold_accs = []
    for f in range(folds):
        test_part = fold_sets[f]
        train_part = [r for g in range(folds) if g != f for r in fold_sets[g]]
        model = train(kind, train_part, hyper=hyper, seed=seed + f)
        x = np.array([r.features for r in test_part], dtype=np.float64)
        y_true = np.array([r.label for r in test_part])
        y_pred = predict_batch(model, x)
        hits = 0
        for t, p in zip(y_true, y_pred):
            confusion[lookup[int(t)], lookup[int(p)]] += 1
            hits += int(t == p)
        fold_accs.append(hits / len(test_part))
    return EvalReport(classes=classes, confusion=confusion, fold_accuracies=tuple(fold_accs))


# -- model persistence: versioned, self-describing JSON text ---------------

def save_model(model: TrainedModel, path) -> None:
    doc = {
        "format": MODEL_FORMAT,
        "kind": model.kind,
        "hyper": model.hyper,
        "seed": model.seed,
        "classes": list(model.classes),
        "n_features": model.n_features,
        "scaler_mean": model.scaler_mean.tolist(),
        "scaler_std": model.scaler_std.tolist(),
        "params": _params_to_json(model),
    }
    Path(path).write_text(json.dumps(doc, indent=1), encoding="utf-8")


def _params_to_json(model: TrainedModel):
    p = model.params
    if model.kind == "knn":
        return {"x": p["x"].tolist(), "y": p["y"].tolist()}
    if model.kind == "lda":
        return {"w": p["w"].tolist(), "threshold": p["threshold"],
                "mu0": p["mu0"].tolist(), "mu1": p["mu1"].tolist()}
    if model.kind == "svm_linear":
        return {"w": p["w"].tolist(), "b": p["b"]}
    return {
        "n_feat_split": p["n_feat_split"],
        "trees": [
            {k: t[k].tolist() for k in ("feature", "threshold", "left", "right", "counts")}
            for t in p["trees"]
        ],
    }


def load_model(path) -> TrainedModel:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != MODEL_FORMAT:
        raise ParseError(f"{path}: not a {MODEL_FORMAT} document")
    kind = doc["kind"]
    raw = doc["params"]
    if kind == "knn":
        params = {"x": np.array(raw["x"], dtype=np.float64),
                  "y": np.array(raw["y"], dtype=np.int64)}
    elif kind == "lda":
        params = {"w": np.array(raw["w"]), "threshold": raw["threshold"],
                  "mu0": np.array(raw["mu0"]), "mu1": np.array(raw["mu1"])}
    elif kind == "svm_linear":
        params = {"w": np.array(raw["w"]), "b": raw["b"]}
    else:
        params = {
            "n_feat_split": raw["n_feat_split"],
            "trees": [
                {
                    "feature": np.array(t["feature"], dtype=np.int64),
                    "threshold": np.array(t["threshold"], dtype=np.float64),
                    "left": np.array(t["left"], dtype=np.int64),
                    "right": np.array(t["right"], dtype=np.int64),
                    "counts": np.array(t["counts"], dtype=np.int64),
                }
                for t in raw["trees"]
            ],
        }
    return TrainedModel(
        kind=kind, hyper=doc["hyper"], seed=doc["seed"], classes=tuple(doc["classes"]),
        n_features=doc["n_features"], scaler_mean=np.array(doc["scaler_mean"]),
        scaler_std=np.array(doc["scaler_std"]), params=params,
    )
