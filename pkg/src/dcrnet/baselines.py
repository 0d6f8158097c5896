"""Reference classifiers trained on the same frozen features, for comparison with the dual-branch head."""

import numpy as np

from ._rng import derive_rng
from .classifier import DcrModel, init_classifier, zeros_classifier
from .config import TrainConfig
from .data import ClassBalancedSampler, UniformSampler
from .fcm import build_mode_table, expand_batch
from .stats import build_class_stats
from .training import MomentumSGD, branch_loss_and_grad, cosine_lr


def train_linear(train_set, config, sampling="uniform", consumer="linear"):
    """Plain softmax cross-entropy linear classifier under one sampling scheme.

    Uses the same SGD-with-momentum and cosine schedule as the dual-branch
    loop; ``config.batch_uniform`` sets the batch size and the iteration
    count per epoch is ``ceil(N / batch_uniform)``.
    """
    config = config.validate()
    stats = build_class_stats(train_set, config, alpha0=0.0, beta0=0.0)
    K, D = train_set.num_classes, train_set.dim
    all_head = np.ones(K, dtype=bool)
    clf = init_classifier(D, K, 1, all_head, derive_rng(config.seed, f"{consumer}_init"))
    table = build_mode_table(stats, use_fcm=False, use_lcm=False)
    n = min(config.batch_uniform, len(train_set))
    per_epoch = UniformSampler(train_set, n).batches_per_epoch
    rng = derive_rng(config.seed, f"{consumer}_{sampling}")
    if sampling == "uniform":
        sampler = UniformSampler(train_set, n, rng)
    elif sampling == "balanced":
        sampler = ClassBalancedSampler(train_set, n, rng)
    else:
        raise ValueError(f"unknown sampling {sampling!r}")
    total = config.epochs * per_epoch
    opt = MomentumSGD([clf.weights.shape], config.momentum)
    for step in range(total):
        b = next(sampler)
        _, g = branch_loss_and_grad(clf, expand_batch(b.features, b.labels, table))
        opt.step([clf.weights], [g], cosine_lr(config.lr_initial, step, total))
    return clf, stats


def train_crt(train_set, config=None):
    """Classifier re-training (cRT) baseline on frozen features.

    In the decoupled pipeline a uniform-sampling stage learns the features
    and its classifier is then discarded; the classifier is re-initialised
    and re-trained under class-balanced sampling. Features here are
    already fixed, so only the re-training stage affects the result. The
    returned model holds that classifier with a zero residual so that
    ``predict`` and ``evaluate`` apply unchanged.
    """
    config = (config or TrainConfig()).validate()
    clf, stats = train_linear(train_set, config, "balanced", "crt")
    return DcrModel(clf, zeros_classifier(clf.dim, clf.num_classes, 1, clf.head_mask), stats)
