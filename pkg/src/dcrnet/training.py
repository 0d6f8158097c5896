"""Dual-branch training of the uniform and residual classifiers on fixed features."""

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from ._rng import derive_rng
from .classifier import DcrModel, init_classifier, zeros_classifier
from .config import TrainConfig
from .data import ClassBalancedSampler, UniformSampler
from .fcm import build_mode_table, expand_batch
from .stats import build_class_stats

logger = logging.getLogger(__name__)


class TrainingError(FloatingPointError):
    """Raised when the loss becomes non-finite or diverges."""


@dataclass
class TrainReport:
    loss_uniform: list = field(default_factory=list)
    loss_balanced: list = field(default_factory=list)
    loss: list = field(default_factory=list)
    wall_clock: float = 0.0
    seed: int = 0
    iterations: int = 0

    def as_dict(self):
        return {
            "seed": self.seed,
            "iterations": self.iterations,
            "wall_clock_seconds": self.wall_clock,
            "epochs": [
                {"epoch": i + 1, "loss_uniform": a, "loss_balanced": b, "loss": c}
                for i, (a, b, c) in enumerate(zip(self.loss_uniform, self.loss_balanced, self.loss))
            ],
        }


def branch_loss_and_grad(clf, batch):
    """Loss and weight gradient of one multi-proxy classifier on an expanded batch.

    The loss is the batch mean of the mode-weighted cross-entropy of the
    compensated logits. The gradient is exact, including the path through
    the proxy softmax and through the variance term, which depends on the
    sample-adaptive weights.
    """
    W = clf.weights
    K, L, D = W.shape
    mask = clf.proxy_mask
    f = batch.features
    y = batch.labels
    R = f.shape[0]
    rows = np.arange(R)

    scores = (f @ W.reshape(K * L, D).T).reshape(R, K, L)
    a = np.where(mask, scores, 0.0)
    s = np.where(mask, scores, -np.inf)
    e = np.exp(s - s.max(axis=-1, keepdims=True))
    pi = e / e.sum(axis=-1, keepdims=True)
    z = np.sum(pi * a, axis=-1)

    # the variance term only touches rows with beta > 0; work on that subset
    act = np.flatnonzero(batch.beta > 0)
    lcm_active = act.size > 0
    zbar = z
    if lcm_active:
        pa, ya, ba, va = pi[act], y[act], batch.beta[act], batch.var[act]
        # (K, A, D): sample-adaptive weights per class
        w_hat = np.matmul(pa.transpose(1, 0, 2), W)
        diff = w_hat - w_hat[ya, np.arange(act.size)][None, :, :]
        zbar = z.copy()
        zbar[act] += 0.5 * ba[:, None] * np.einsum("kad,ad->ak", diff**2, va)

    zmax = zbar.max(axis=1, keepdims=True)
    ez = np.exp(zbar - zmax)
    sum_ez = ez.sum(axis=1)
    ce = zmax[:, 0] + np.log(sum_ez) - zbar[rows, y]
    n = batch.num_samples
    loss = float(np.dot(batch.weights, ce) / n)

    g = ez / sum_ez[:, None]
    g[rows, y] -= 1.0
    g *= (batch.weights / n)[:, None]

    # dL/da through the proxy-weighted average z = sum_l pi_l a_l
    d_a = g[:, :, None] * pi * (1.0 + a - z[:, :, None])
    if lcm_active:
        G = g[act].T[:, :, None] * ba[None, :, None] * diff * va[None, :, :]
        G[ya, np.arange(act.size)] -= G.sum(axis=0)
        # through pi inside w_hat: dL/dpi_kl = G_k . w_kl
        gw = np.matmul(G, W.transpose(0, 2, 1)).transpose(1, 0, 2)
        gw_bar = np.sum(pa * gw, axis=-1, keepdims=True)
        d_a[act] += pa * (gw - gw_bar)
    grad = (d_a.reshape(R, K * L).T @ f).reshape(K, L, D)
    if lcm_active:
        grad += np.matmul(pa.transpose(1, 2, 0), G)
    grad[~mask] = 0.0
    return loss, grad


def _diagnose(model, batch, clf):
    z = np.einsum("rd,kld->rkl", batch.features, clf.weights)
    return (
        f"|W_u|={np.linalg.norm(model.uniform.weights):.4g} "
        f"|W_r|={np.linalg.norm(model.residual.weights):.4g} "
        f"proxy scores in [{np.nanmin(z):.4g}, {np.nanmax(z):.4g}]"
    )


def loss_and_grad(model, batch_u, batch_b, config, tables=None):
    """Combined loss ``phi * L1 + (1 - phi) * L2`` and gradients for both classifiers.

    ``L1`` scores the uniform batch with the uniform classifier; ``L2``
    scores the balanced batch with the summed classifier, whose gradient
    flows equally into the uniform and residual weights.

    Returns ``(loss, l1, l2, grad_uniform, grad_residual)``.
    """
    if tables is None:
        tables = build_mode_table(model.stats)
    phi = config.phi
    eu = expand_batch(batch_u.features, batch_u.labels, tables)
    eb = expand_batch(batch_b.features, batch_b.labels, tables)
    balanced = model.balanced()
    l1, g1 = branch_loss_and_grad(model.uniform, eu)
    l2, g2 = branch_loss_and_grad(balanced, eb)
    if phi == 1.0:
        g2 = np.zeros_like(g2)
    loss = phi * l1 + (1.0 - phi) * l2
    if not np.isfinite(loss):
        raise TrainingError(f"non-finite loss (L1={l1}, L2={l2}); {_diagnose(model, eu, balanced)}")
    grad_u = phi * g1 + (1.0 - phi) * g2
    grad_r = (1.0 - phi) * g2
    return loss, l1, l2, grad_u, grad_r


def cosine_lr(lr0, step, total):
    """Cosine decay from ``lr0`` at step 0 toward 0 at ``total``."""
    if total <= 0:
        return lr0
    return 0.5 * lr0 * (1.0 + math.cos(math.pi * step / total))


class MomentumSGD:
    """Classical momentum: ``v <- mu * v - lr * g``; ``w <- w + v``."""

    def __init__(self, shapes, momentum):
        self.momentum = momentum
        self.velocity = [np.zeros(s) for s in shapes]

    def step(self, params, grads, lr):
        for w, v, g in zip(params, self.velocity, grads):
            v *= self.momentum
            v -= lr * g
            w += v


def init_model(train_set, config, stats=None):
    stats = stats or build_class_stats(train_set, config)
    head_mask = stats.head_mask
    D, K, L = train_set.dim, train_set.num_classes, config.num_proxies
    uniform = init_classifier(D, K, L, head_mask, derive_rng(config.seed, "init_uniform"))
    residual = zeros_classifier(D, K, L, head_mask)
    return DcrModel(uniform, residual, stats)


def train(train_set, config=None, stats=None, on_step=None):
    """Run the dual-branch loop for ``config.epochs`` epochs.

    Every iteration pairs one uniform batch with one class-balanced batch;
    an epoch is ``ceil(N / batch_uniform)`` iterations. ``on_step`` (if
    given) is called as ``on_step(step, loss, l1, l2, batch_u, batch_b)``.
    Returns ``(model, report)``.
    """
    config = (config or TrainConfig()).validate()
    start = time.perf_counter()
    model = init_model(train_set, config, stats)
    tables = build_mode_table(model.stats)
    report = TrainReport(seed=config.seed)
    if config.epochs == 0:
        report.wall_clock = time.perf_counter() - start
        return model, report

    n1 = min(config.batch_uniform, len(train_set))
    n2 = min(config.batch_balanced, len(train_set))
    us = UniformSampler(train_set, n1, derive_rng(config.seed, "uniform_sampler"))
    cbs = ClassBalancedSampler(train_set, n2, derive_rng(config.seed, "balanced_sampler"))
    per_epoch = us.batches_per_epoch
    total = config.epochs * per_epoch
    opt = MomentumSGD([model.uniform.weights.shape] * 2, config.momentum)
    limit = 1e3 * math.log(max(train_set.num_classes, 2))

    step = 0
    for epoch in range(config.epochs):
        acc = np.zeros(3)
        for _ in range(per_epoch):
            bu, bb = next(us), next(cbs)
            loss, l1, l2, gu, gr = loss_and_grad(model, bu, bb, config, tables)
            if loss > limit:
                raise TrainingError(f"loss {loss:.4g} exceeds divergence limit {limit:.4g} at step {step}")
            if on_step is not None:
                on_step(step, loss, l1, l2, bu, bb)
            lr = cosine_lr(config.lr_initial, step, total)
            opt.step([model.uniform.weights, model.residual.weights], [gu, gr], lr)
            acc += (l1, l2, loss)
            step += 1
        acc /= per_epoch
        report.loss_uniform.append(float(acc[0]))
        report.loss_balanced.append(float(acc[1]))
        report.loss.append(float(acc[2]))
        logger.debug("epoch %d: L1=%.5f L2=%.5f L=%.5f", epoch + 1, *acc)
    report.iterations = step
    report.wall_clock = time.perf_counter() - start
    return model, report
