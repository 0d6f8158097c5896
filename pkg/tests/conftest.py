import numpy as np
import pytest

from dcrnet.data import FeatureDataset
from dcrnet.stats import build_class_stats


def small_longtail(seed=0, dim=6, counts=(40, 30, 12, 8, 5, 3), spread=0.5):
    rng = np.random.default_rng(seed)
    counts = np.asarray(counts)
    labels = np.repeat(np.arange(counts.size), counts)
    means = np.abs(rng.standard_normal((counts.size, dim)))
    x = means[labels] + spread * rng.standard_normal((labels.size, dim))
    return FeatureDataset(x, labels, counts.size)


@pytest.fixture
def small_train():
    return small_longtail()


@pytest.fixture
def small_stats(small_train):
    return build_class_stats(small_train, head_threshold=20, m=2, tau=8.0, alpha0=0.5, beta0=6.0)
