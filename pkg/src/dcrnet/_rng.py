"""Deterministic per-consumer random streams derived from one root seed."""

import zlib

import numpy as np


def derive_rng(seed, consumer):
    """Return a Generator for ``consumer`` that depends only on (seed, consumer).

    Each named consumer (generator, samplers, init, oracle, ...) gets an
    independent stream, so adding draws in one place never shifts another.
    """
    key = zlib.crc32(consumer.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, key]))
