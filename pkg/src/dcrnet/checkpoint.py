"""DCRM model checkpoints: both classifiers plus the class statistics needed to evaluate them.

Layout (little-endian)::

    "DCRM"                      4 bytes
    version                     u32 (= 1)
    D, K, L                     u32 each
    head bitmap                 ceil(K / 8) bytes, bit k%8 of byte k//8 set for head classes
    uniform weights             for k in 0..K-1, for each proxy of k (1 if head, else L): D x f32
    residual weights            same order
    class counts                K x u64
    prototypes                  K x D x f64
    standard deviations         K x D x f64
    m                           u32
    tau, alpha0, beta0,
    head_threshold              f64 each
    number of tail classes      u32
    per tail class t            t (u32), n = |S_t| (u32), neighbors (n x u32),
                                similarities (n x f64), probabilities (n+1 x f64, self last),
                                alpha_t (f64), beta_t (f64)
"""

import struct

import numpy as np

from .classifier import DcrModel, MultiProxyClassifier
from .stats import ClassStats, DriftEntry

MAGIC = b"DCRM"
VERSION = 1
_HEADER = struct.Struct("<4sIIII")


class CheckpointError(ValueError):
    pass


def _pack_weights(clf):
    mask = clf.proxy_mask
    return np.ascontiguousarray(clf.weights[mask], dtype="<f4").tobytes()


def save_checkpoint(model, path):
    u, r, st = model.uniform, model.residual, model.stats
    K, L, D = u.weights.shape
    head = np.asarray(u.head_mask, dtype=bool)
    parts = [
        _HEADER.pack(MAGIC, VERSION, D, K, L),
        np.packbits(head, bitorder="little").tobytes(),
        _pack_weights(u),
        _pack_weights(r),
        np.asarray(st.class_counts, dtype="<u8").tobytes(),
        np.ascontiguousarray(st.prototypes, dtype="<f8").tobytes(),
        np.ascontiguousarray(st.std_devs, dtype="<f8").tobytes(),
        struct.pack("<Idddd", st.m, st.tau, st.alpha0, st.beta0, float(st.head_threshold)),
        struct.pack("<I", len(st.drift_table)),
    ]
    for t in sorted(st.drift_table):
        e = st.drift_table[t]
        n = e.neighbors.size
        parts.append(struct.pack("<II", t, n))
        parts.append(np.asarray(e.neighbors, dtype="<u4").tobytes())
        parts.append(np.asarray(e.similarities, dtype="<f8").tobytes())
        parts.append(np.asarray(e.probs, dtype="<f8").tobytes())
        parts.append(struct.pack("<dd", e.alpha, e.beta))
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


class _Reader:
    def __init__(self, blob, path):
        self.blob, self.pos, self.path = blob, 0, path

    def take(self, n):
        if self.pos + n > len(self.blob):
            raise CheckpointError(f"{self.path}: truncated at byte {self.pos}")
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def array(self, dtype, count):
        dt = np.dtype(dtype)
        return np.frombuffer(self.take(dt.itemsize * count), dtype=dt).copy()

    def unpack(self, fmt):
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size))


def load_checkpoint(path):
    with open(path, "rb") as fh:
        rd = _Reader(fh.read(), path)
    magic, version, D, K, L = rd.unpack(_HEADER.format)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: not a DCRM checkpoint (magic {magic!r})")
    if version != VERSION:
        raise CheckpointError(f"{path}: version {version}, expected {VERSION}")
    head = np.unpackbits(np.frombuffer(rd.take((K + 7) // 8), dtype=np.uint8), bitorder="little")[:K].astype(bool)
    mask = np.ones((K, L), dtype=bool)
    mask[head, 1:] = False
    n_proxies = int(mask.sum())

    def weights():
        w = np.zeros((K, L, D))
        w[mask] = rd.array("<f4", n_proxies * D).reshape(n_proxies, D)
        return MultiProxyClassifier(w, head.copy())

    uniform, residual = weights(), weights()
    counts = rd.array("<u8", K).astype(np.int64)
    prototypes = rd.array("<f8", K * D).reshape(K, D)
    std = rd.array("<f8", K * D).reshape(K, D)
    m, tau, alpha0, beta0, head_threshold = rd.unpack("<Idddd")
    (num_tail,) = rd.unpack("<I")
    table = {}
    for _ in range(num_tail):
        t, n = rd.unpack("<II")
        neighbors = rd.array("<u4", n).astype(np.int64)
        sims = rd.array("<f8", n)
        probs = rd.array("<f8", n + 1)
        alpha, beta = rd.unpack("<dd")
        table[t] = DriftEntry(t, neighbors, sims, probs, alpha, beta)
    if rd.pos != len(rd.blob):
        raise CheckpointError(f"{path}: {len(rd.blob) - rd.pos} trailing bytes")
    tail = np.flatnonzero(~head)
    if set(table) != set(tail.tolist()):
        raise CheckpointError(f"{path}: drift table does not match the head/tail bitmap")
    stats = ClassStats(prototypes, std, counts, np.flatnonzero(head), tail, table, m, tau, alpha0, beta0, head_threshold)
    return DcrModel(uniform, residual, stats)
