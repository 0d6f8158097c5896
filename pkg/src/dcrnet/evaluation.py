"""Test-phase prediction, split accuracies and feature-drift diagnostics."""

import csv
import json
from dataclasses import dataclass

import numpy as np

from .classifier import rbmc_logits
from .fcm import compensate


def predict(model, f):
    """Argmax of the balanced-branch logits; compensation is not applied at test time.

    Ties resolve to the lowest class index.
    """
    z = rbmc_logits(model, f)
    return np.argmax(z, axis=-1)


def shot_splits(train_counts, thresholds=(100, 20)):
    """Classes in the Many (> hi), Medium (lo..hi) and Few (< lo) splits."""
    hi, lo = thresholds
    counts = np.asarray(train_counts)
    return {
        "many": np.flatnonzero(counts > hi),
        "medium": np.flatnonzero((counts >= lo) & (counts <= hi)),
        "few": np.flatnonzero(counts < lo),
    }


@dataclass
class EvalReport:
    overall: float
    splits: dict
    split_sizes: dict
    per_class: np.ndarray
    class_support: np.ndarray
    confusion: np.ndarray

    def as_dict(self):
        return {
            "top1": self.overall,
            "many": self.splits["many"],
            "medium": self.splits["medium"],
            "few": self.splits["few"],
            "split_num_classes": self.split_sizes,
            "per_class": [None if np.isnan(a) else float(a) for a in self.per_class],
        }

    def to_json(self):
        return json.dumps(self.as_dict(), indent=2)

    def write_csv(self, path, train_counts=None):
        """Columns: class, train_count, test_support, correct, accuracy."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["class", "train_count", "test_support", "correct", "accuracy"])
            for k, acc in enumerate(self.per_class):
                n = int(self.class_support[k])
                count = "" if train_counts is None else int(train_counts[k])
                w.writerow([k, count, n, int(self.confusion[k, k]), "" if n == 0 else f"{acc:.6f}"])


def accuracy_report(labels, preds, train_counts, thresholds=(100, 20)):
    labels = np.asarray(labels)
    preds = np.asarray(preds)
    K = len(train_counts)
    if labels.size and labels.max() >= K:
        raise ValueError("test labels outside the training label space")
    absent = np.setdiff1d(np.unique(labels), np.flatnonzero(np.asarray(train_counts) > 0))
    if absent.size:
        raise ValueError(f"classes {absent.tolist()} appear in test data but not in training counts")
    confusion = np.zeros((K, K), dtype=np.int64)
    np.add.at(confusion, (labels, preds), 1)
    support = confusion.sum(axis=1)
    correct = np.diag(confusion)
    with np.errstate(invalid="ignore", divide="ignore"):
        per_class = np.where(support > 0, correct / np.maximum(support, 1), np.nan)
    overall = float(correct.sum() / support.sum()) if support.sum() else float("nan")
    splits, sizes = {}, {}
    for name, classes in shot_splits(train_counts, thresholds).items():
        n = support[classes].sum()
        splits[name] = float(correct[classes].sum() / n) if n else None
        sizes[name] = int(classes.size)
    return EvalReport(overall, splits, sizes, per_class, support, confusion)


def evaluate(model, test, train_counts, thresholds=(100, 20)):
    """Top-1 accuracy overall and per shot split, with splits set by training counts."""
    if test.num_classes != len(train_counts):
        raise ValueError(f"test has {test.num_classes} classes, training counts cover {len(train_counts)}")
    preds = predict(model, test.features)
    return accuracy_report(test.labels, preds, train_counts, thresholds)


@dataclass
class DriftReport:
    """Per-class drift measurements.

    ``prototype_shift``: train/test prototype distance for every class.
    ``nearest_head``, ``train_to_head``, ``test_to_head``: per tail class,
    its most similar head class and the mean distance of train and test
    features to that head prototype. ``distinct_nearest_heads``: per tail
    class, how many different head classes are nearest to its test
    features. ``test_to_train`` / ``test_to_compensated``: mean distance
    from each test feature to the closest training feature of its class,
    before and after feature compensation.
    """

    classes: np.ndarray
    train_counts: np.ndarray
    prototype_shift: np.ndarray
    tail_classes: np.ndarray
    nearest_head: np.ndarray
    train_to_head: np.ndarray
    test_to_head: np.ndarray
    distinct_nearest_heads: np.ndarray
    test_to_train: np.ndarray
    test_to_compensated: np.ndarray

    def write_csvs(self, outdir):
        """Write one CSV per diagnostic; returns the paths written."""
        from pathlib import Path

        out = Path(outdir)
        out.mkdir(parents=True, exist_ok=True)
        paths = []

        def dump(name, header, rows):
            p = out / name
            with open(p, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(header)
                w.writerows(rows)
            paths.append(p)

        dump("prototype_shift.csv", ["class", "train_count", "distance"],
             [[int(k), int(self.train_counts[k]), f"{self.prototype_shift[k]:.6g}"] for k in self.classes])
        dump("tail_to_head.csv", ["class", "train_count", "nearest_head", "train_distance", "test_distance"],
             [[int(t), int(self.train_counts[t]), int(h), f"{a:.6g}", f"{b:.6g}"]
              for t, h, a, b in zip(self.tail_classes, self.nearest_head, self.train_to_head, self.test_to_head)])
        dump("nearest_head_count.csv", ["class", "train_count", "distinct_nearest_heads"],
             [[int(t), int(self.train_counts[t]), int(c)] for t, c in zip(self.tail_classes, self.distinct_nearest_heads)])
        dump("test_to_train.csv", ["class", "train_count", "original_distance", "compensated_distance"],
             [[int(k), int(self.train_counts[k]), f"{self.test_to_train[k]:.6g}", f"{self.test_to_compensated[k]:.6g}"]
              for k in self.classes])
        return paths


def _unit(x):
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


def _min_dist(queries, refs):
    d2 = (queries**2).sum(1)[:, None] + (refs**2).sum(1)[None, :] - 2 * queries @ refs.T
    return np.sqrt(np.maximum(d2.min(axis=1), 0.0))


def drift_report(train, test, stats, compensated=True):
    """Compute the drift diagnostics between ``train`` and ``test`` features.

    Nearest-head assignment uses cosine similarity to head prototypes;
    every distance is Euclidean. When ``compensated`` is true, each tail
    class's training features are expanded into all their compensation
    modes for the ``test_to_compensated`` column; otherwise that column
    repeats the uncompensated distance.
    """
    if train.dim != test.dim:
        raise ValueError("train and test feature dimensions differ")
    K = stats.num_classes
    xtr = np.asarray(train.features, dtype=np.float64)
    xte = np.asarray(test.features, dtype=np.float64)
    c = stats.prototypes
    head = stats.head_classes
    tail = stats.tail_classes
    head_units = _unit(c[head])

    shift = np.full(K, np.nan)
    to_train = np.full(K, np.nan)
    to_comp = np.full(K, np.nan)
    for k in range(K):
        te = xte[test.labels == k]
        tr = xtr[train.labels == k]
        if te.shape[0] == 0 or tr.shape[0] == 0:
            continue
        shift[k] = np.linalg.norm(te.mean(axis=0) - c[k])
        d = _min_dist(te, tr)
        to_train[k] = d.mean()
        if compensated and k in stats.drift_table:
            refs = np.vstack([compensate(f, k, stats).features for f in tr])
            to_comp[k] = _min_dist(te, refs).mean()
        else:
            to_comp[k] = to_train[k]

    nearest = np.zeros(tail.size, dtype=np.int64)
    tr_head = np.full(tail.size, np.nan)
    te_head = np.full(tail.size, np.nan)
    distinct = np.zeros(tail.size, dtype=np.int64)
    for i, t in enumerate(tail):
        h = head[np.argmax(head_units @ _unit(c[t]))]
        nearest[i] = h
        tr = xtr[train.labels == t]
        te = xte[test.labels == t]
        tr_head[i] = np.linalg.norm(tr - c[h], axis=1).mean()
        if te.shape[0]:
            te_head[i] = np.linalg.norm(te - c[h], axis=1).mean()
            per_sample = head[np.argmax(_unit(te) @ head_units.T, axis=1)]
            distinct[i] = np.unique(per_sample).size

    return DriftReport(
        classes=np.arange(K),
        train_counts=np.asarray(train.class_counts),
        prototype_shift=shift,
        tail_classes=np.asarray(tail),
        nearest_head=nearest,
        train_to_head=tr_head,
        test_to_head=te_head,
        distinct_nearest_heads=distinct,
        test_to_train=to_train,
        test_to_compensated=to_comp,
    )
