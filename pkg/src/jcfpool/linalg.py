"""Dense float64 primitives with a fixed summation order.

Every multiply that the pooling kernels perform goes through :func:`matmul`,
:func:`mul` or :func:`kron_columns`, so an active :class:`MultiplyCounter`
sees the exact arithmetic cost of a kernel call.
"""

from collections import Counter
from contextlib import contextmanager

import numpy as np

from .exceptions import NumericError, ShapeError

DEFAULT_EPS = 1e-12

_counter = None
_stage = None


class MultiplyCounter:
    """Tally of scalar multiplies, keyed by kernel stage."""

    def __init__(self):
        self.counts = Counter()

    @property
    def total(self):
        return sum(self.counts.values())

    def __repr__(self):
        return f"MultiplyCounter({dict(self.counts)})"


@contextmanager
def count_multiplies():
    """Activate a fresh counter for the duration of the block.

    Only multiplies issued inside a :func:`stage` block are tallied.
    """
    global _counter
    previous = _counter
    _counter = MultiplyCounter()
    try:
        yield _counter
    finally:
        _counter = previous


@contextmanager
def stage(name):
    global _stage
    previous = _stage
    _stage = name
    try:
        yield
    finally:
        _stage = previous


def _tally(n):
    if _counter is not None and _stage is not None:
        _counter.counts[_stage] += int(n)


def as_matrix(a, name="matrix"):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {a.shape}")
    return a


def matmul(a, b):
    """Matrix product ``a @ b`` accumulated over the inner index in order.

    The result is bit-identical to the textbook triple loop
    ``c[i, j] = sum_k a[i, k] * b[k, j]`` evaluated with ``k`` ascending,
    independent of BLAS or thread count.
    """
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: {a.shape} x {b.shape}")
    m, k = a.shape
    n = b.shape[1]
    out = np.zeros((m, n))
    term = np.empty((m, n))
    for t in range(k):
        np.multiply(a[:, t:t + 1], b[t:t + 1, :], out=term)
        out += term
    _tally(m * k * n)
    return out


def mul(a, b):
    """Elementwise (broadcasting) product, tallied by result size."""
    out = np.multiply(a, b)
    _tally(np.size(out))
    return out


def kron(a, b):
    """Kronecker product of two vectors: ``out[i*len(b) + j] = a[i] * b[j]``."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    return mul(a[:, None], b[None, :]).reshape(-1)


def kron_columns(a, b):
    """Column-wise Kronecker product of ``(p, M)`` and ``(q, M)`` -> ``(p*q, M)``."""
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[1]:
        raise ShapeError(f"kron_columns: {a.shape} vs {b.shape}")
    out = mul(a[:, None, :], b[None, :, :])
    return out.reshape(a.shape[0] * b.shape[0], a.shape[1])


def l2_normalize(v, eps=DEFAULT_EPS):
    """Return ``v / max(||v||, eps)``."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    v = np.asarray(v, dtype=np.float64)
    return v / max(float(np.sqrt(np.dot(v.ravel(), v.ravel()))), eps)


def normalize_columns(x, eps=DEFAULT_EPS):
    """Column-wise l2 normalization; returns ``(normalized, guarded_norms)``."""
    x = np.asarray(x, dtype=np.float64)
    norms = np.maximum(np.sqrt(np.sum(x * x, axis=0)), eps)
    return x / norms, norms


def normalize_rows(x, eps=DEFAULT_EPS):
    x = np.asarray(x, dtype=np.float64)
    norms = np.maximum(np.sqrt(np.sum(x * x, axis=1, keepdims=True)), eps)
    return x / norms


def normalize_backward(grad_out, normalized, norm, eps=DEFAULT_EPS):
    """Vector-Jacobian product of ``v -> v / max(||v||, eps)``.

    Works column-wise when ``grad_out`` is 2-D and ``norm`` has one entry per
    column. Below ``eps`` the map is linear with slope ``1/eps``.
    """
    norm = np.asarray(norm, dtype=np.float64)
    dot = np.sum(grad_out * normalized, axis=0)
    active = norm > eps
    projected = grad_out - normalized * np.where(active, dot, 0.0)
    return projected / norm


def softmax(v, axis=-1):
    """Max-shifted softmax along ``axis``."""
    v = np.asarray(v, dtype=np.float64)
    shifted = v - np.max(v, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def softmax_backward(grad_out, probs, axis=-1):
    dot = np.sum(grad_out * probs, axis=axis, keepdims=True)
    return probs * (grad_out - dot)


def check_finite(x, name):
    if not np.all(np.isfinite(x)):
        raise NumericError(f"non-finite values in {name}", tensor=name)
    return x
