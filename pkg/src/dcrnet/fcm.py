"""Feature compensation: shift tail-class training features along their estimated drift directions."""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True, eq=False)
class CompensatedSet:
    """All drift-compensated variants of one feature.

    ``mode_classes[i]`` is the class the i-th variant drifts toward (the
    base label itself for the unshifted variant); ``features[i]`` is the
    shifted feature and ``probs[i]`` its probability.
    """

    base_label: int
    mode_classes: np.ndarray
    features: np.ndarray
    probs: np.ndarray

    def __len__(self):
        return self.probs.shape[0]


def compensate(f, label, stats):
    """Expand ``f`` into its compensated modes. Head-class features come back unchanged as a single mode."""
    f = np.asarray(f)
    if f.shape != (stats.dim,):
        raise ValueError(f"feature has shape {f.shape}, expected ({stats.dim},)")
    label = int(label)
    entry = stats.drift_table.get(label)
    if entry is None:
        return CompensatedSet(label, np.array([label]), f[None, :].copy(), np.ones(1))
    c = stats.prototypes
    shifted = f + entry.alpha * (c[entry.neighbors] - c[label])
    feats = np.vstack([shifted, f[None, :]])
    return CompensatedSet(label, entry.modes, feats, entry.probs.copy())


@dataclass(frozen=True, eq=False)
class ModeTable:
    """Per-class compensation modes, flattened for fast batch expansion.

    Class ``k`` owns rows ``offsets[k] : offsets[k] + counts[k]`` of
    ``shifts`` and ``probs``.
    """

    counts: np.ndarray
    offsets: np.ndarray
    shifts: np.ndarray
    probs: np.ndarray
    beta: np.ndarray
    var: np.ndarray


def build_mode_table(stats, use_fcm=True, use_lcm=True):
    """Precompute drift shifts, probabilities and LCM parameters for every class.

    Classes with zero drift (head classes, ``alpha_t = 0`` or
    ``use_fcm=False``) get a single unshifted mode of probability 1; the
    loss is unchanged because identical modes with probabilities summing
    to one collapse to one term.
    """
    K, D = stats.num_classes, stats.dim
    c = stats.prototypes
    counts = np.ones(K, dtype=np.int64)
    shifts, probs = [], []
    beta = np.zeros(K)
    var = np.zeros((K, D))
    for k in range(K):
        entry = stats.drift_table.get(k)
        if entry is not None and use_lcm and entry.beta > 0:
            beta[k] = entry.beta
            var[k] = stats.std_devs[k] ** 2
        if entry is None or not use_fcm or entry.alpha == 0:
            shifts.append(np.zeros((1, D)))
            probs.append(np.ones(1))
            continue
        shifts.append(np.vstack([entry.alpha * (c[entry.neighbors] - c[k]), np.zeros((1, D))]))
        probs.append(entry.probs)
        counts[k] = entry.probs.shape[0]
    offsets = np.concatenate([[0], np.cumsum(counts)[:-1]])
    return ModeTable(counts, offsets, np.vstack(shifts), np.concatenate(probs), beta, var)


@dataclass(frozen=True, eq=False)
class ExpandedBatch:
    """A batch flattened to one row per (sample, mode).

    Head samples contribute a single row with weight 1 and no variance
    term; tail samples contribute ``|S_t| + 1`` rows weighted by their
    drift probabilities and carry ``beta_t`` and ``sigma_t ** 2``.
    """

    features: np.ndarray
    labels: np.ndarray
    weights: np.ndarray
    sample_index: np.ndarray
    beta: np.ndarray
    var: np.ndarray
    num_samples: int


def expand_batch(features, labels, table):
    """Vectorised ``compensate`` over a batch, attaching the per-row LCM parameters from ``table``."""
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n = features.shape[0]
    per_sample = table.counts[labels]
    sample_index = np.repeat(np.arange(n), per_sample)
    first_row = np.concatenate([[0], np.cumsum(per_sample)[:-1]])
    within = np.arange(sample_index.size) - first_row[sample_index]
    rows = table.offsets[labels][sample_index] + within
    row_labels = labels[sample_index]
    return ExpandedBatch(
        features=features[sample_index] + table.shifts[rows],
        labels=row_labels,
        weights=table.probs[rows],
        sample_index=sample_index,
        beta=table.beta[row_labels],
        var=table.var[row_labels],
        num_samples=n,
    )
