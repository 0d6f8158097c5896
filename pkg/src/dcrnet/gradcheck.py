"""Central finite-difference check of the analytic training gradients."""

import itertools
from dataclasses import dataclass, field

import numpy as np

from ._rng import derive_rng
from .classifier import DcrModel, MultiProxyClassifier
from .config import TrainConfig
from .data import Batch, FeatureDataset
from .fcm import build_mode_table
from .stats import build_class_stats
from .training import loss_and_grad

TOLERANCE = 1e-4
# per-class counts for the random instances; threshold 5 makes the first two classes head
_COUNTS = (14, 9, 5, 4, 3, 2)
_HEAD_THRESHOLD = 5


@dataclass
class GradcheckTrial:
    num_proxies: int
    alpha0: float
    beta0: float
    phi: float
    logit_scale: float
    max_rel_error: float


@dataclass
class GradcheckReport:
    trials: list = field(default_factory=list)
    tolerance: float = TOLERANCE

    @property
    def max_rel_error(self):
        return max((t.max_rel_error for t in self.trials), default=0.0)

    @property
    def passed(self):
        return bool(self.trials) and self.max_rel_error <= self.tolerance

    def summary(self):
        lines = [
            f"trial {i}: L={t.num_proxies} alpha0={t.alpha0} beta0={t.beta0} phi={t.phi} "
            f"scale={t.logit_scale} max_rel_err={t.max_rel_error:.3e}"
            for i, t in enumerate(self.trials)
        ]
        verdict = "PASS" if self.passed else "FAIL"
        lines.append(f"{verdict}: max relative error {self.max_rel_error:.3e} (tolerance {self.tolerance:.0e})")
        return "\n".join(lines)


def relative_error(analytic, numeric):
    """Largest componentwise discrepancy relative to the gradient's overall magnitude.

    ``max_i |a_i - n_i| / max(max_i |a_i|, max_i |n_i|)``. Normalising by the
    whole gradient rather than per component keeps near-zero entries from
    turning finite-difference truncation noise into huge ratios.
    """
    analytic = np.asarray(analytic).ravel()
    numeric = np.asarray(numeric).ravel()
    scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)), 1e-12)
    return float(np.max(np.abs(analytic - numeric)) / scale)


def random_instance(rng, dim=8, num_proxies=2, alpha0=0.5, beta0=1.0, tau=8.0, m=2, logit_scale=1.0, batch=6):
    """Small dataset, stats, random model and a (uniform, balanced) batch pair."""
    counts = np.array(_COUNTS)
    K = counts.size
    labels = np.repeat(np.arange(K), counts)
    means = np.abs(rng.standard_normal((K, dim)))
    x = means[labels] + 0.5 * rng.standard_normal((labels.size, dim))
    ds = FeatureDataset(x, labels, K)
    stats = build_class_stats(ds, head_threshold=_HEAD_THRESHOLD, m=m, tau=tau, alpha0=alpha0, beta0=beta0)
    shape = (K, num_proxies, dim)
    head = stats.head_mask
    wu = logit_scale * rng.standard_normal(shape) / np.sqrt(dim)
    wr = logit_scale * rng.standard_normal(shape) / np.sqrt(dim)
    wu[head, 1:] = 0.0
    wr[head, 1:] = 0.0
    model = DcrModel(MultiProxyClassifier(wu, head), MultiProxyClassifier(wr, head), stats)

    def draw():
        # every class appears so that head and tail paths are both exercised
        idx = np.concatenate([np.flatnonzero(labels == k)[:1] for k in range(K)])
        idx = np.concatenate([idx, rng.integers(0, labels.size, size=batch)])
        return Batch(idx, ds.features[idx], ds.labels[idx])

    return model, draw(), draw()


def numeric_gradients(model, batch_u, batch_b, config, h=1e-4, tables=None):
    """Central differences of the combined loss over every existing proxy weight."""
    tables = tables or build_mode_table(model.stats)
    out = []
    for clf in (model.uniform, model.residual):
        W = clf.weights
        grad = np.zeros_like(W)
        for k, l, d in itertools.product(*map(range, W.shape)):
            if not clf.proxy_mask[k, l]:
                continue
            orig = W[k, l, d]
            W[k, l, d] = orig + h
            fp = loss_and_grad(model, batch_u, batch_b, config, tables)[0]
            W[k, l, d] = orig - h
            fm = loss_and_grad(model, batch_u, batch_b, config, tables)[0]
            W[k, l, d] = orig
            grad[k, l, d] = (fp - fm) / (2 * h)
        out.append(grad)
    return out


def check_instance(model, batch_u, batch_b, config, h=1e-4):
    tables = build_mode_table(model.stats)
    _, _, _, gu, gr = loss_and_grad(model, batch_u, batch_b, config, tables)
    nu, nr = numeric_gradients(model, batch_u, batch_b, config, h, tables)
    return relative_error(np.concatenate([gu.ravel(), gr.ravel()]), np.concatenate([nu.ravel(), nr.ravel()]))


def gradcheck(trials=10, seed=0, dim=8, proxies=(1, 2, 4), alpha0s=(0.0, 0.5), beta0s=(0.0, 1.0, 6.0),
              phis=(0.5, 0.8, 1.0), logit_scale=1.0, h=1e-4):
    """Compare analytic and finite-difference gradients on ``trials`` random instances.

    Trials cycle through the grid of (L, alpha0, beta0, phi) settings.
    """
    rng = derive_rng(seed, "gradcheck")
    grid = list(itertools.product(proxies, alpha0s, beta0s, phis))
    order = rng.permutation(len(grid))
    report = GradcheckReport()
    for i in range(trials):
        L, a0, b0, phi = grid[order[i % len(grid)]]
        model, bu, bb = random_instance(rng, dim, L, a0, b0, logit_scale=logit_scale)
        cfg = TrainConfig(phi=phi, num_proxies=L, alpha0=a0, beta0=b0, head_threshold=_HEAD_THRESHOLD)
        err = check_instance(model, bu, bb, cfg, h)
        report.trials.append(GradcheckTrial(L, a0, b0, phi, logit_scale, err))
    return report
