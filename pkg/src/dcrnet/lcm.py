"""Logit compensation: closed-form upper bound of the expected loss under Gaussian drift noise.

``mc_expected_loss`` is the explicit-augmentation estimate the closed form
bounds; it samples features instead of adjusting logits and shares no code
with ``compensate_logits`` / ``lcm_loss``.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from ._rng import derive_rng
from .classifier import effective_weights, mp_logits
from .fcm import compensate


def logsumexp(z, axis=-1):
    z = np.asarray(z, dtype=np.float64)
    zmax = np.max(z, axis=axis, keepdims=True)
    out = zmax + np.log(np.sum(np.exp(z - zmax), axis=axis, keepdims=True))
    return np.squeeze(out, axis=axis)


def cross_entropy(z, t):
    """``-log softmax(z)[t]`` with the max subtracted before exponentiation."""
    z = np.asarray(z, dtype=np.float64)
    t = np.asarray(t)
    picked = np.take_along_axis(z, t[..., None], axis=-1)[..., 0] if z.ndim > 1 else z[int(t)]
    return logsumexp(z) - picked


def logit_adjustment(w_eff, t, beta, var):
    """``(beta / 2) * ((w_k - w_t) ** 2) . var`` for every class k (zero at k = t).

    ``w_eff`` is (D, K); ``var`` the per-dimension variance of class ``t``.
    """
    diff = w_eff - w_eff[:, [t]]
    return 0.5 * beta * (var @ diff**2)


def compensate_logits(z, w_eff, t, stats):
    """Add the drift-noise variance term to the logits of a sample labelled ``t``.

    Head classes (and tail classes with ``beta_t = 0``) pass through unchanged.
    """
    z = np.asarray(z, dtype=np.float64)
    entry = stats.drift_table.get(int(t))
    if entry is None or entry.beta == 0:
        return z.copy()
    return z + logit_adjustment(np.asarray(w_eff, dtype=np.float64), int(t), entry.beta, stats.std_devs[t] ** 2)


@dataclass(frozen=True, eq=False)
class LogitBundle:
    """Raw and compensated logits of every compensation mode of one sample."""

    label: int
    raw: np.ndarray
    compensated: np.ndarray
    probs: np.ndarray


def lcm_loss(bundles):
    """Mean over bundles of the probability-weighted cross-entropy of the compensated logits."""
    if isinstance(bundles, LogitBundle):
        bundles = [bundles]
    total = 0.0
    for b in bundles:
        ce = cross_entropy(b.compensated, np.full(b.compensated.shape[0], b.label))
        total += float(np.dot(b.probs, ce))
    return total / len(bundles)


def classifier_bundle(clf, f, t, stats, use_fcm=True, use_lcm=True):
    """Bundle for a multi-proxy classifier; each mode gets its own sample-adaptive weights."""
    cset = compensate(np.asarray(f, dtype=np.float64), t, stats)
    feats = cset.features if use_fcm else cset.features[-1:]
    probs = cset.probs if use_fcm else np.ones(1)
    z, _ = mp_logits(clf, feats)
    w_hat = effective_weights(clf, feats)
    zbar = np.array([compensate_logits(z[i], w_hat[i], t, stats) if use_lcm else z[i] for i in range(len(z))])
    return LogitBundle(int(t), z, zbar, probs)


def linear_bundle(f, t, w, stats):
    """Bundle for a fixed linear classifier ``w`` of shape (D, K)."""
    cset = compensate(np.asarray(f, dtype=np.float64), t, stats)
    z = cset.features @ w
    zbar = np.array([compensate_logits(zi, w, t, stats) for zi in z])
    return LogitBundle(int(t), z, zbar, cset.probs)


_SHARDS = 8


def _mc_shard(f, t, w, modes, probs, noise_std, n, rng):
    choice = rng.choice(len(probs), size=n, p=probs)
    noise = rng.standard_normal((n, f.shape[0])) * noise_std
    feats = f + modes[choice] + noise
    logits = feats @ w
    m = logits.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(logits - m).sum(axis=1))
    losses = lse - logits[:, t]
    mean = losses.mean()
    return n, mean, float(((losses - mean) ** 2).sum())


def mc_expected_loss(f, t, w_eff, stats, M, seed=0, threads=1):
    """Monte-Carlo estimate of the expected cross-entropy over explicitly augmented features.

    Each draw picks drift mode ``j`` with probability ``s_tj`` and adds
    Gaussian noise with per-dimension std ``sqrt(beta_t) * sigma_t``.
    Draws are split into a fixed number of independently seeded shards,
    so the result does not depend on ``threads``. Returns ``(mean, standard_error)``.
    """
    if M < 1:
        raise ValueError("M must be at least 1")
    f = np.asarray(f, dtype=np.float64)
    w = np.asarray(w_eff, dtype=np.float64)
    t = int(t)
    entry = stats.drift_table.get(t)
    c = stats.prototypes
    if entry is None:
        modes, probs, noise_std = np.zeros((1, f.shape[0])), np.ones(1), np.zeros(f.shape[0])
    else:
        modes = np.vstack([entry.alpha * (c[entry.neighbors] - c[t]), np.zeros((1, f.shape[0]))])
        probs = entry.probs / entry.probs.sum()
        noise_std = np.sqrt(entry.beta) * stats.std_devs[t]

    root = derive_rng(seed, "mc_oracle")
    seeds = root.bit_generator.seed_seq.spawn(_SHARDS)
    sizes = [M // _SHARDS + (1 if i < M % _SHARDS else 0) for i in range(_SHARDS)]
    jobs = [(f, t, w, modes, probs, noise_std, n, np.random.default_rng(s)) for n, s in zip(sizes, seeds) if n]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda a: _mc_shard(*a), jobs))
    else:
        parts = [_mc_shard(*a) for a in jobs]
    # pairwise merge of (count, mean, sum of squared deviations), in shard order
    n, mean, m2 = parts[0]
    for nb, mb, m2b in parts[1:]:
        delta = mb - mean
        total = n + nb
        mean += delta * nb / total
        m2 += m2b + delta**2 * n * nb / total
        n = total
    if M == 1:
        return float(mean), float("nan")
    return float(mean), float(np.sqrt(m2 / (M - 1) / M))
