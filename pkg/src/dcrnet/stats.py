"""Per-class statistics and the tail-class drift table used for feature/logit compensation."""

import logging
from dataclasses import dataclass

import numpy as np

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class DriftEntry:
    """Drift description of one tail class ``t``.

    ``neighbors`` holds the selected head classes in descending similarity;
    ``probs`` has one entry per neighbor followed by the self term.
    """

    tail: int
    neighbors: np.ndarray
    similarities: np.ndarray
    probs: np.ndarray
    alpha: float
    beta: float

    @property
    def self_prob(self):
        return float(self.probs[-1])

    @property
    def modes(self):
        """Mode classes in the order the probabilities are stored: neighbors, then ``t``."""
        return np.append(self.neighbors, self.tail)


@dataclass(frozen=True, eq=False)
class ClassStats:
    prototypes: np.ndarray
    std_devs: np.ndarray
    class_counts: np.ndarray
    head_classes: np.ndarray
    tail_classes: np.ndarray
    drift_table: dict
    m: int = 2
    tau: float = 8.0
    alpha0: float = 0.5
    beta0: float = 6.0
    head_threshold: float = 100

    @property
    def num_classes(self):
        return self.prototypes.shape[0]

    @property
    def dim(self):
        return self.prototypes.shape[1]

    @property
    def head_mask(self):
        mask = np.zeros(self.num_classes, dtype=bool)
        mask[self.head_classes] = True
        return mask

    def is_tail(self, k):
        return int(k) in self.drift_table

    def drift_vectors(self, t):
        return drift_vectors(self, t)


def compute_prototypes(train):
    """Mean training feature of every class."""
    counts = train.class_counts
    empty = np.flatnonzero(counts == 0)
    if empty.size:
        raise ValueError(f"classes without training samples: {empty.tolist()}")
    x = np.asarray(train.features, dtype=np.float64)
    sums = np.zeros((train.num_classes, train.dim))
    # np.add.at accumulates in row order, so the result is reproducible
    np.add.at(sums, train.labels, x)
    return sums / counts[:, None]


def compute_std(train, prototypes=None):
    """Per-dimension population standard deviation of every class (zero for single-sample or empty classes)."""
    x = np.asarray(train.features, dtype=np.float64)
    counts = train.class_counts
    if prototypes is None:
        sums = np.zeros((train.num_classes, train.dim))
        np.add.at(sums, train.labels, x)
        prototypes = sums / np.maximum(counts, 1)[:, None]
    sq = np.zeros((train.num_classes, train.dim))
    np.add.at(sq, train.labels, (x - prototypes[train.labels]) ** 2)
    var = sq / np.maximum(counts, 1)[:, None]
    var[counts <= 1] = 0.0
    return np.sqrt(var)


def partition_head_tail(class_counts, head_threshold):
    """Split classes into head (count > threshold) and tail (the rest)."""
    if head_threshold < 0:
        raise ValueError("head_threshold must be non-negative")
    counts = np.asarray(class_counts)
    head = np.flatnonzero(counts > head_threshold)
    tail = np.flatnonzero(counts <= head_threshold)
    if head.size == 0:
        raise ValueError(
            f"no head classes: every class has at most {head_threshold} samples; "
            "lower head_threshold so that compensation has a head class to drift toward"
        )
    if tail.size == 0:
        logger.warning("no tail classes at head_threshold=%s; compensation disabled", head_threshold)
    return head, tail


def cosine_similarity(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ValueError("cosine similarity is undefined for zero-norm vectors")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def select_neighbors(prototypes, head_classes, t, m):
    """The ``m`` head classes most cosine-similar to class ``t``, best first.

    Returns (indices, similarities). Ties go to the lower class index.
    """
    head = np.asarray(head_classes, dtype=np.int64)
    if head.size == 0:
        raise ValueError("no head classes to select from")
    sims = np.array([cosine_similarity(prototypes[t], prototypes[j]) for j in head])
    order = np.lexsort((head, -sims))[: min(m, head.size)]
    return head[order], sims[order]


def _linear_schedule(n_t, n_max, n_min, scale):
    if n_max == n_min:
        return float(scale)
    if not n_min <= n_t <= n_max:
        raise ValueError(f"count {n_t} outside [{n_min}, {n_max}]")
    return float(scale) * (n_max - n_t) / (n_max - n_min)


def alpha_schedule(n_t, n_max, n_min, alpha0):
    """Drift strength, largest for the rarest tail class and zero for the most frequent."""
    return _linear_schedule(n_t, n_max, n_min, alpha0)


def beta_schedule(n_t, n_max, n_min, beta0):
    """Translation strength of the Gaussian drift noise; same shape as ``alpha_schedule``."""
    return _linear_schedule(n_t, n_max, n_min, beta0)


def drift_vectors(stats, t):
    """Map each selected neighbor ``j`` (and ``t`` itself) to its drift vector."""
    entry = stats.drift_table[int(t)]
    c = stats.prototypes
    out = {int(j): entry.alpha * (c[j] - c[t]) for j in entry.neighbors}
    out[int(t)] = np.zeros(stats.dim)
    return out


def drift_probabilities(similarities, tau):
    """Softmax over ``tau * similarity`` for each neighbor plus the self term (similarity 1).

    Returns an array with the neighbor probabilities first and the self
    probability last.
    """
    if not tau > 0:
        raise ValueError("tau must be positive")
    logits = tau * np.append(np.asarray(similarities, dtype=np.float64), 1.0)
    logits -= logits.max()
    e = np.exp(logits)
    return e / e.sum()


def build_class_stats(train, config=None, *, head_threshold=None, m=None, tau=None, alpha0=None, beta0=None):
    """Assemble prototypes, deviations, partition and drift table from training features.

    Hyperparameters come from ``config`` (any object with the TrainConfig
    attribute names) and may be overridden by keyword.
    """
    def pick(value, name, default):
        if value is not None:
            return value
        return getattr(config, name, default) if config is not None else default

    head_threshold = pick(head_threshold, "head_threshold", 100)
    m = int(pick(m, "m", 2))
    tau = float(pick(tau, "tau", 8.0))
    alpha0 = float(pick(alpha0, "alpha0", 0.5))
    beta0 = float(pick(beta0, "beta0", 6.0))

    prototypes = compute_prototypes(train)
    std = compute_std(train, prototypes)
    counts = np.asarray(train.class_counts, dtype=np.int64)
    head, tail = partition_head_tail(counts, head_threshold)

    table = {}
    if tail.size:
        n_max, n_min = int(counts[tail].max()), int(counts[tail].min())
        for t in tail:
            neighbors, sims = select_neighbors(prototypes, head, t, m)
            table[int(t)] = DriftEntry(
                tail=int(t),
                neighbors=neighbors,
                similarities=sims,
                probs=drift_probabilities(sims, tau),
                alpha=alpha_schedule(counts[t], n_max, n_min, alpha0),
                beta=beta_schedule(counts[t], n_max, n_min, beta0),
            )
    for arr in (prototypes, std, counts, head, tail):
        arr.setflags(write=False)
    return ClassStats(prototypes, std, counts, head, tail, table, m, tau, alpha0, beta0, head_threshold)


def check_invariants(stats, atol=1e-9):
    """Raise AssertionError on the first violated ClassStats invariant."""
    K = stats.num_classes
    head, tail = set(stats.head_classes.tolist()), set(stats.tail_classes.tolist())
    assert head.isdisjoint(tail), "head and tail sets overlap"
    assert head | tail == set(range(K)), "head and tail sets do not cover all classes"
    assert set(stats.drift_table) == tail
    assert np.all(np.isfinite(stats.std_devs)) and np.all(stats.std_devs >= 0)
    for t, e in stats.drift_table.items():
        assert e.neighbors.size == min(stats.m, len(head))
        assert set(e.neighbors.tolist()) <= head
        assert abs(e.probs.sum() - 1.0) <= atol, f"class {t}: probabilities sum to {e.probs.sum()}"
        assert np.all((e.probs > 0) & (e.probs < 1))
        assert 0.0 <= e.alpha <= stats.alpha0 and 0.0 <= e.beta <= stats.beta0
    return True


def format_stats_report(stats):
    """One line per class: index, count, role, prototype norm, mean std, neighbors, probabilities, alpha, beta."""
    lines = ["# class count role proto_norm mean_std neighbors probs alpha beta"]
    for k in range(stats.num_classes):
        norm = float(np.linalg.norm(stats.prototypes[k]))
        mean_std = float(stats.std_devs[k].mean())
        count = int(stats.class_counts[k])
        entry = stats.drift_table.get(k)
        if entry is None:
            lines.append(f"{k} {count} head {norm:.6g} {mean_std:.6g} - - 0 0")
            continue
        nb = ",".join(str(int(j)) for j in entry.neighbors)
        pr = ",".join(f"{p:.6g}" for p in entry.probs)
        lines.append(f"{k} {count} tail {norm:.6g} {mean_std:.6g} {nb} {pr} {entry.alpha:.6g} {entry.beta:.6g}")
    return "\n".join(lines) + "\n"
