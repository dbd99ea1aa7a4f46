"""Seeded randomness and small numeric kernels shared by every module.

All arrays are dense, row-major, double-precision numpy arrays. Randomness
flows from one root seed through named substreams (PCG64 generators built
from numpy SeedSequence spawn keys), so a run is fully determined by its
seed on a given platform.
"""

import numpy as np

# A "matrix" throughout this package is a 2-D float64 ndarray (row-major).
Matrix = np.ndarray


class Rng:
    """Deterministic random stream backed by numpy's PCG64.

    ``derive(*labels)`` builds an independent child stream from a path of
    string/int labels, e.g. ``root.derive("pretrain", "raw")``. The same
    seed and label path always yields the same draw sequence. Instances are
    single-owner: share seeds, not streams, across parallel work.
    """

    def __init__(self, seed, _spawn_key=()):
        self.seed = int(seed)
        self._spawn_key = tuple(_spawn_key)
        seq = np.random.SeedSequence(self.seed, spawn_key=self._spawn_key)
        self._gen = np.random.Generator(np.random.PCG64(seq))

    def derive(self, *labels):
        """Child stream keyed by (seed, this stream's path, labels)."""
        key = list(self._spawn_key)
        for lab in labels:
            if isinstance(lab, str):
                raw = lab.encode("utf-8")
                key.append(0x5452)  # string tag
                key.append(len(raw))
                key.extend(raw)
            elif isinstance(lab, (int, np.integer)) and int(lab) >= 0:
                key.append(0x494E)  # integer tag
                key.append(int(lab) & 0xFFFFFFFF)
                key.append((int(lab) >> 32) & 0xFFFFFFFF)
            else:
                raise ValueError(f"stream label must be str or int >= 0, got {lab!r}")
        return Rng(self.seed, _spawn_key=key)

    def uniform(self, size=None):
        """Draws in [0, 1)."""
        return self._gen.random(size)

    def normal(self, size=None):
        """Standard normal draws."""
        return self._gen.standard_normal(size)

    def integers(self, low, high, size=None):
        """Integer draws in [low, high)."""
        return self._gen.integers(low, high, size=size)

    def permutation(self, n):
        return self._gen.permutation(n)

    def __repr__(self):
        return f"Rng(seed={self.seed}, path_len={len(self._spawn_key)})"


def sigmoid(x):
    """Logistic function, overflow-safe for any finite input."""
    x = np.asarray(x, dtype=np.float64)
    t = np.exp(-np.abs(x))
    out = np.where(x >= 0.0, 1.0 / (1.0 + t), t / (1.0 + t))
    if out.ndim == 0:
        return float(out)
    return out


def softmax(v, axis=-1):
    """Max-shifted softmax along ``axis``; rows sum to 1."""
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise ValueError("softmax of empty logits")
    shifted = v - np.max(v, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def log_softmax(v, axis=-1):
    """Log of softmax, computed without forming intermediate ratios."""
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise ValueError("log_softmax of empty logits")
    shifted = v - np.max(v, axis=axis, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))


def sample_bernoulli(p, rng):
    """Elementwise Bernoulli draws: entry 1 with probability p, else 0.

    Raises ValueError if any entry of ``p`` is outside [0, 1].
    """
    p = np.asarray(p, dtype=np.float64)
    if p.size and (p.min() < 0.0 or p.max() > 1.0):
        raise ValueError("Bernoulli probabilities must lie in [0, 1]")
    return (rng.uniform(p.shape) < p).astype(np.float64)


def sample_gaussian(mean, rng):
    """Elementwise Normal(mean, 1) draws."""
    mean = np.asarray(mean, dtype=np.float64)
    return mean + rng.normal(mean.shape)


def matmul(a, b):
    """Matrix product with an explicit inner-dimension check."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul needs 2-D operands, got {a.ndim}-D and {b.ndim}-D")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul dimension mismatch: {a.shape} x {b.shape}")
    return a @ b
