"""Deterministic numeric primitives: tensors, activations, seeded RNG, init.

Tensors are plain float64 NumPy arrays (1-D vectors, 2-D row-major matrices).
The RNG is pinned to a fixed algorithm -- SplitMix64 seeding of xoshiro256**
with Box-Muller normals and a defined draw order -- so a (seed, stream_id)
pair reproduces the same experiment byte for byte, run after run.
"""

import math

import numpy as np

from ._backend import kernels

#: 1-D / 2-D float64 ndarray aliases; shapes are enforced by the operations.
Tensor1 = np.ndarray
Tensor2 = np.ndarray


class RngState:
    """xoshiro256** stream, seeded via SplitMix64 from seed XOR stream_id.

    The integer output sequence is reproducible bit-for-bit across platforms
    and across the compiled/pure backends.  Normal variates come from
    Box-Muller pairs: each pair consumes exactly two uniform draws and the
    second variate is cached, so consumption order is part of the contract.
    A state is single-owner; parallel work should use distinct stream_ids.
    """

    __slots__ = ("seed", "stream_id", "s", "_cache")

    def __init__(self, seed, stream_id=0):
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        self.s = np.zeros(4, dtype=np.uint64)
        self._cache = np.zeros(2, dtype=np.float64)
        kernels.rng_seed(self.s, self.seed, self.stream_id)

    def next_uint64(self):
        return kernels.rng_next(self.s)

    def uniform(self):
        """One uniform draw in [0, 1) with 53 random bits."""
        out = np.empty(1, dtype=np.float64)
        kernels.rng_fill_uniform(self.s, out)
        return float(out[0])

    def normal(self):
        out = np.empty(1, dtype=np.float64)
        kernels.rng_fill_normal(self.s, self._cache, out)
        return float(out[0])

    def fill_uniform(self, out):
        kernels.rng_fill_uniform(self.s, np.ravel(out))

    def fill_normal(self, out):
        kernels.rng_fill_normal(self.s, self._cache, np.ravel(out))

    def uniforms(self, n):
        out = np.empty(n, dtype=np.float64)
        kernels.rng_fill_uniform(self.s, out)
        return out

    def normals(self, n):
        out = np.empty(n, dtype=np.float64)
        kernels.rng_fill_normal(self.s, self._cache, out)
        return out

    def randint_below(self, n):
        """Uniform integer in [0, n) via modulo (bias is O(n/2^64))."""
        if n <= 0:
            raise ValueError("randint_below needs n >= 1")
        return self.next_uint64() % n

    def shuffle(self, seq):
        """In-place Fisher-Yates shuffle of a list or 1-D array."""
        for i in range(len(seq) - 1, 0, -1):
            j = self.randint_below(i + 1)
            seq[i], seq[j] = seq[j], seq[i]


def rng_new(seed, stream_id=0):
    """Create an independent deterministic stream for (seed, stream_id)."""
    return RngState(seed, stream_id)


def rng_standard_normal(rng):
    """One standard-normal variate; advances the stream."""
    return rng.normal()


def as_tensor1(v):
    a = np.asarray(v, dtype=np.float64)
    if a.ndim != 1:
        raise ValueError(f"expected a 1-D vector, got shape {a.shape}")
    return a


def as_tensor2(m):
    a = np.asarray(m, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {a.shape}")
    return a


def matvec(m, v):
    """Matrix-vector product with an explicit dimension check."""
    m = as_tensor2(m)
    v = as_tensor1(v)
    if m.shape[1] != v.shape[0]:
        raise ValueError(
            f"matvec dimension mismatch: {m.shape} @ ({v.shape[0]},)")
    return m @ v


def sigmoid(v):
    """Elementwise logistic function, overflow-safe for any finite input."""
    a = np.asarray(v, dtype=np.float64)
    out = np.empty_like(a)
    pos = a >= 0.0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    ea = np.exp(a[~pos])
    out[~pos] = ea / (1.0 + ea)
    return out


def tanh_ew(v):
    """Elementwise hyperbolic tangent."""
    return np.tanh(np.asarray(v, dtype=np.float64))


def softplus(v):
    """Elementwise log(1 + e^x), overflow-safe; strictly positive."""
    a = np.asarray(v, dtype=np.float64)
    return np.maximum(a, 0.0) + np.log1p(np.exp(-np.abs(a)))


def glorot_init(rng, rows, cols):
    """Glorot-uniform matrix: entries in +-sqrt(6/(rows+cols)), row-major."""
    if rows < 1 or cols < 1:
        raise ValueError("glorot_init needs rows, cols >= 1")
    limit = math.sqrt(6.0 / (rows + cols))
    u = rng.uniforms(rows * cols)
    return ((2.0 * u - 1.0) * limit).reshape(rows, cols)


def uniform_init(rng, n, low, high):
    """Uniform vector in [low, high); used for per-neuron liquid parameters."""
    return low + (high - low) * rng.uniforms(n)
