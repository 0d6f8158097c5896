"""Multi-proxy classifiers and the residual balanced composition of two of them."""

from dataclasses import dataclass

import numpy as np

from ._rng import derive_rng


@dataclass(frozen=True, eq=False)
class MultiProxyClassifier:
    """Bias-free classifier with one proxy per head class and ``L`` per tail class.

    ``weights`` has shape (K, L, D). Head classes only use slot 0; their
    remaining slots are kept at zero and masked out everywhere.
    """

    weights: np.ndarray
    head_mask: np.ndarray

    @property
    def num_classes(self):
        return self.weights.shape[0]

    @property
    def num_proxies(self):
        return self.weights.shape[1]

    @property
    def dim(self):
        return self.weights.shape[2]

    @property
    def proxy_mask(self):
        """(K, L) boolean mask of the proxies that exist."""
        mask = np.ones(self.weights.shape[:2], dtype=bool)
        mask[self.head_mask, 1:] = False
        return mask

    def proxy_counts(self):
        return self.proxy_mask.sum(axis=1)

    def __add__(self, other):
        if not np.array_equal(self.head_mask, other.head_mask) or self.weights.shape != other.weights.shape:
            raise ValueError("classifiers disagree on shape or head/tail partition")
        return MultiProxyClassifier(self.weights + other.weights, self.head_mask)

    def copy(self):
        return MultiProxyClassifier(self.weights.copy(), self.head_mask.copy())


@dataclass(eq=False)
class DcrModel:
    """Uniform classifier, residual classifier and the class statistics they were trained with."""

    uniform: MultiProxyClassifier
    residual: MultiProxyClassifier
    stats: object

    def balanced(self):
        """The classifier used by the class-balanced branch: proxy-wise sum of both."""
        return self.uniform + self.residual

    def copy(self):
        return DcrModel(self.uniform.copy(), self.residual.copy(), self.stats)


def proxy_scores(clf, f):
    """Raw proxy scores ``w_{k,l} . f`` with shape (N, K, L)."""
    return np.einsum("nd,kld->nkl", f, clf.weights)


def proxy_softmax(scores, mask):
    """Softmax over the proxy axis restricted to existing proxies."""
    s = np.where(mask, scores, -np.inf)
    s = s - s.max(axis=-1, keepdims=True)
    e = np.exp(s)
    return e / e.sum(axis=-1, keepdims=True)


def _forward(clf, f):
    f = np.asarray(f, dtype=np.float64)
    single = f.ndim == 1
    f2 = np.atleast_2d(f)
    if f2.shape[1] != clf.dim:
        raise ValueError(f"feature dim {f2.shape[1]} does not match classifier dim {clf.dim}")
    scores = proxy_scores(clf, f2)
    pi = proxy_softmax(scores, clf.proxy_mask)
    z = np.sum(pi * np.where(clf.proxy_mask, scores, 0.0), axis=-1)
    return single, scores, pi, z


def mp_logits(clf, f):
    """Class logits and proxy weights for feature(s) ``f``.

    Each tail logit is the ``pi``-weighted average of its proxy scores,
    where ``pi`` is the softmax over those scores. Returns ``(z, pi)`` with
    shapes (K,), (K, L) for a single feature or (N, K), (N, K, L) for a batch.
    """
    single, _, pi, z = _forward(clf, f)
    if single:
        return z[0], pi[0]
    return z, pi


def effective_weights(clf, f):
    """Sample-adaptive weight matrix: column ``k`` is ``sum_l pi_{k,l} w_{k,l}``.

    Shape (D, K) for one feature, (N, D, K) for a batch.
    """
    single, _, pi, _ = _forward(clf, f)
    w_hat = np.einsum("nkl,kld->ndk", pi, clf.weights)
    return w_hat[0] if single else w_hat


def uniform_logits(model, f):
    return mp_logits(model.uniform, f)[0]


def rbmc_logits(model, f):
    """Logits of the balanced branch: proxy-wise summed weights, then multi-proxy scoring."""
    return mp_logits(model.balanced(), f)[0]


def init_classifier(dim, num_classes, num_proxies, head_mask, seed=0, consumer="init"):
    """Random classifier with per-component scale ``1/sqrt(D)`` (expected squared norm 1).

    Proxies of a tail class share a base direction plus independent noise,
    so they start close together but never identical.
    """
    rng = seed if isinstance(seed, np.random.Generator) else derive_rng(seed, consumer)
    head_mask = np.asarray(head_mask, dtype=bool)
    if head_mask.shape != (num_classes,):
        raise ValueError("head_mask must have one entry per class")
    scale = 1.0 / np.sqrt(dim)
    base = rng.standard_normal((num_classes, 1, dim))
    noise = rng.standard_normal((num_classes, num_proxies, dim))
    eps = 0.1
    w = scale * (np.sqrt(1.0 - eps**2) * base + eps * noise)
    w[head_mask, 1:] = 0.0
    return MultiProxyClassifier(w, head_mask)


def zeros_classifier(dim, num_classes, num_proxies, head_mask):
    head_mask = np.asarray(head_mask, dtype=bool)
    return MultiProxyClassifier(np.zeros((num_classes, num_proxies, dim)), head_mask)
