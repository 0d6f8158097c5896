"""Randomised comparison of the closed-form compensated loss against its Monte-Carlo counterpart."""

from dataclasses import dataclass

import numpy as np

from ._rng import derive_rng
from .data import FeatureDataset
from .lcm import lcm_loss, linear_bundle, mc_expected_loss
from .stats import build_class_stats

_COUNTS = (40, 30, 12, 8, 5, 3)
_HEAD_THRESHOLD = 20


@dataclass
class OracleResult:
    instance: int
    beta: float
    closed_form: float
    mc_estimate: float
    std_error: float

    @property
    def passed(self):
        if self.beta > 0:
            # Jensen: the closed form is an upper bound of the expected loss
            return self.mc_estimate <= self.closed_form + 3 * self.std_error
        return abs(self.mc_estimate - self.closed_form) <= 3 * self.std_error

    def line(self):
        kind = "bound" if self.beta > 0 else "equal"
        verdict = "PASS" if self.passed else "FAIL"
        return (f"instance {self.instance:3d} beta={self.beta:.4f} closed={self.closed_form:.6f} "
                f"mc={self.mc_estimate:.6f} se={self.std_error:.2e} [{kind}] {verdict}")


def random_oracle_instance(rng, dim=8, beta0=None, alpha0=0.5, tau=8.0, m=2):
    """Random dataset, stats and linear classifier; returns (f, t, W, stats) for the rarest tail class."""
    counts = np.array(_COUNTS)
    K = counts.size
    labels = np.repeat(np.arange(K), counts)
    means = np.abs(rng.standard_normal((K, dim)))
    x = means[labels] + rng.uniform(0.3, 1.0) * rng.standard_normal((labels.size, dim))
    ds = FeatureDataset(x, labels, K)
    if beta0 is None:
        beta0 = float(rng.uniform(0.5, 6.0))
    stats = build_class_stats(ds, head_threshold=_HEAD_THRESHOLD, m=m, tau=tau, alpha0=alpha0, beta0=beta0)
    t = int(np.argmin(counts))
    f = x[rng.choice(np.flatnonzero(labels == t))]
    w = rng.uniform(0.5, 2.0) * rng.standard_normal((dim, K)) / np.sqrt(dim)
    return f, t, w, stats


def run_oracle_check(instances=20, samples=100_000, seed=0, threads=1, include_degenerate=True):
    """Check the upper bound on ``instances`` random cases (and the beta = 0 equality on as many more)."""
    rng = derive_rng(seed, "oracle_instances")
    results = []
    cases = [None] * instances + ([0.0] * instances if include_degenerate else [])
    for i, beta0 in enumerate(cases):
        f, t, w, stats = random_oracle_instance(rng, beta0=beta0)
        closed = lcm_loss([linear_bundle(f, t, w, stats)])
        est, se = mc_expected_loss(f, t, w, stats, samples, seed=int(rng.integers(2**63)), threads=threads)
        results.append(OracleResult(i, stats.drift_table[t].beta, closed, est, se))
    return results
