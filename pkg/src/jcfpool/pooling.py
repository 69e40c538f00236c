"""Second-order pooling kernels.

All kernels take a ``d x M`` feature set (one column per location) and return
the sum-pooled representation of length ``D``. A ``B x d x M`` stack is also
accepted and yields a ``B x D`` array. The per-location terms are evaluated
for every column at once and summed over locations afterwards.

Materialized paths (:func:`bp_full`, :func:`project_so`,
:func:`codebook_bp_naive`) exist as oracles for the factorized ones
(:func:`rank1_pool`, :func:`jcf_pool`, :func:`jcf_shared_pool`).
"""

from dataclasses import dataclass

import numpy as np

from . import linalg
from .codebook import assign_columns
from .exceptions import CapacityError, ShapeError
from .validation import check_feature_set

NAIVE_CAPACITY = 10**6


@dataclass
class FullProjection:
    w: np.ndarray  # d^2 x D

    @property
    def out_dim(self):
        return self.w.shape[1]


@dataclass
class Rank1Params:
    u: np.ndarray  # D x d
    v: np.ndarray  # D x d


@dataclass
class JcfParams:
    u_set: np.ndarray  # D x d x N
    v_set: np.ndarray  # D x d x N


@dataclass
class JcfSharedParams:
    u_shared: np.ndarray  # D x d x R
    v_shared: np.ndarray  # D x d x R
    a: np.ndarray  # N x R
    b: np.ndarray  # N x R

    def materialize(self):
        """Per-codeword projections ``U_i = U~_i A^T``, ``V_i = V~_i B^T``."""
        u_set = np.einsum("idr,nr->idn", self.u_shared, self.a)
        v_set = np.einsum("idr,nr->idn", self.v_shared, self.b)
        return JcfParams(u_set, v_set)


def _columns(xs):
    """Flatten features to ``d x (B*M)``; returns ``(cols, batch, M)``."""
    xs = check_feature_set(xs)
    if xs.ndim == 2:
        return xs, None, xs.shape[1]
    b, d, m = xs.shape
    return xs.transpose(1, 0, 2).reshape(d, b * m), b, m


def _pool(terms, batch, m):
    """Sum per-location terms (``D x (B*M)``) over locations."""
    if batch is None:
        return terms.sum(axis=1)
    return terms.reshape(terms.shape[0], batch, m).sum(axis=2).T


def _stack_projectors(tensor):
    """``D x d x K`` -> ``(D*K) x d`` with row ``i*K + k`` holding ``tensor[i, :, k]``."""
    n_out, d, k = tensor.shape
    return tensor.transpose(0, 2, 1).reshape(n_out * k, d)


def normalize_representation(z, eps=linalg.DEFAULT_EPS):
    """l2-normalize a representation (or each row of a batch of them)."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim == 1:
        return linalg.l2_normalize(z, eps)
    return linalg.normalize_rows(z, eps)


def bp_full(xs):
    """Full bilinear pooling ``sum_x x (x) x`` (length d^2)."""
    cols, batch, m = _columns(xs)
    with linalg.stage("encode"):
        outer = linalg.kron_columns(cols, cols)
    return _pool(outer, batch, m)


def project_so(xs, w):
    """Project every ``x (x) x`` with a full ``d^2 x D`` matrix, then pool."""
    w = w.w if isinstance(w, FullProjection) else np.asarray(w, dtype=np.float64)
    cols, batch, m = _columns(xs)
    d = cols.shape[0]
    if w.ndim != 2 or w.shape[0] != d * d:
        raise ShapeError(f"projection has {w.shape[0]} rows, expected d^2 = {d * d}")
    with linalg.stage("encode"):
        outer = linalg.kron_columns(cols, cols)
    with linalg.stage("projector"):
        terms = linalg.matmul(w.T, outer)
    return _pool(terms, batch, m)


def first_order_pool(xs, w):
    """Baseline: linear projection (d x D) of each feature, sum-pooled."""
    w = np.asarray(w, dtype=np.float64)
    cols, batch, m = _columns(xs)
    if w.ndim != 2 or w.shape[0] != cols.shape[0]:
        raise ShapeError(f"projection shape {w.shape} does not match feature dim {cols.shape[0]}")
    with linalg.stage("projector"):
        terms = linalg.matmul(w.T, cols)
    return _pool(terms, batch, m)


def rank1_pool(xs, p):
    """Rank-one factorized projection: ``z_i = sum_x <u_i, x><v_i, x>``."""
    cols, batch, m = _columns(xs)
    u = np.asarray(p.u, dtype=np.float64)
    v = np.asarray(p.v, dtype=np.float64)
    if u.shape != v.shape or u.ndim != 2 or u.shape[1] != cols.shape[0]:
        raise ShapeError(f"rank-one factors {u.shape}/{v.shape} do not match feature dim {cols.shape[0]}")
    with linalg.stage("projector"):
        left = linalg.matmul(u, cols)
        right = linalg.matmul(v, cols)
    with linalg.stage("combine"):
        terms = linalg.mul(left, right)
    return _pool(terms, batch, m)


def codebook_bp_naive(xs, cb, w, cb_q=None, capacity=NAIVE_CAPACITY):
    """Codebook bilinear pooling through the materialized ``(h (x) x)^{(x)2}``.

    ``w`` is ``(N d)^2 x D``. Verification only: refuses instances whose
    projection exceeds ``capacity`` parameters.
    """
    w = np.asarray(w, dtype=np.float64)
    cb_q = cb if cb_q is None else cb_q
    n, d = cb.n_words, cb.dim
    rows = n * n * d * d
    needed = rows * (w.shape[1] if w.ndim == 2 else 1)
    if needed > capacity:
        raise CapacityError(f"naive codebook pooling needs {needed} parameters, guard is {capacity}")
    if w.ndim != 2 or w.shape[0] != rows:
        raise ShapeError(f"projection has {w.shape[0]} rows, expected N^2 d^2 = {rows}")
    cols, batch, m = _columns(xs)
    if cols.shape[0] != d:
        raise ShapeError(f"feature dim {cols.shape[0]} != codebook dim {d}")
    h_p = assign_columns(cols, cb)
    h_q = assign_columns(cols, cb_q)
    with linalg.stage("encode"):
        g_p = linalg.kron_columns(h_p, cols)
        g_q = g_p if cb_q is cb else linalg.kron_columns(h_q, cols)
        lifted = linalg.kron_columns(g_p, g_q)
    with linalg.stage("projector"):
        terms = linalg.matmul(w.T, lifted)
    return _pool(terms, batch, m)


def _weighted_projection(stacked, cols, weights, n_out):
    """``sum_k weights[k, x] * (row_{i,k} . x)`` for every output ``i``."""
    k = weights.shape[0]
    with linalg.stage("projector"):
        proj = linalg.matmul(stacked, cols).reshape(n_out, k, cols.shape[1])
    with linalg.stage("combine"):
        return linalg.mul(proj, weights[None, :, :]).sum(axis=1)


def jcf_pool(xs, cb, p, cb_q=None):
    """Joint codebook and factorization pooling (JCF-N).

    Per location ``z_i(x) = (h(x)^T U_i^T x)(h(x)^T V_i^T x)`` with
    ``U_i = p.u_set[i]`` (d x N); no d^2 or N^2 d^2 intermediate is formed.
    """
    cols, batch, m = _columns(xs)
    u_set = np.asarray(p.u_set, dtype=np.float64)
    v_set = np.asarray(p.v_set, dtype=np.float64)
    n_out, d, n = u_set.shape
    if v_set.shape != u_set.shape or d != cols.shape[0] or n != cb.n_words:
        raise ShapeError(
            f"JCF params {u_set.shape}/{v_set.shape} incompatible with d={cols.shape[0]}, N={cb.n_words}")
    h_p = assign_columns(cols, cb)
    h_q = h_p if cb_q is None else assign_columns(cols, cb_q)
    left = _weighted_projection(_stack_projectors(u_set), cols, h_p, n_out)
    right = _weighted_projection(_stack_projectors(v_set), cols, h_q, n_out)
    with linalg.stage("combine"):
        terms = linalg.mul(left, right)
    return _pool(terms, batch, m)


def jcf_shared_pool(xs, cb, p, cb_q=None):
    """JCF with ``R`` shared projectors recombined per codeword (JCF-N-R).

    Per location ``s = A^T h(x)``, ``t = B^T h(x)`` and
    ``z_i(x) = (s^T U~_i^T x)(t^T V~_i^T x)``.
    """
    cols, batch, m = _columns(xs)
    u_sh = np.asarray(p.u_shared, dtype=np.float64)
    v_sh = np.asarray(p.v_shared, dtype=np.float64)
    a = np.asarray(p.a, dtype=np.float64)
    b = np.asarray(p.b, dtype=np.float64)
    n_out, d, r = u_sh.shape
    n = cb.n_words
    if (v_sh.shape != u_sh.shape or d != cols.shape[0] or a.shape != (n, r)
            or b.shape != (n, r)):
        raise ShapeError(
            f"JCF-shared params U~{u_sh.shape} V~{v_sh.shape} A{a.shape} B{b.shape} "
            f"incompatible with d={cols.shape[0]}, N={n}")
    h_p = assign_columns(cols, cb)
    h_q = h_p if cb_q is None else assign_columns(cols, cb_q)
    with linalg.stage("recombine"):
        s = linalg.matmul(a.T, h_p)
        t = linalg.matmul(b.T, h_q)
    left = _weighted_projection(_stack_projectors(u_sh), cols, s, n_out)
    right = _weighted_projection(_stack_projectors(v_sh), cols, t, n_out)
    with linalg.stage("combine"):
        terms = linalg.mul(left, right)
    return _pool(terms, batch, m)


def reduce_features(raw, reduction):
    """Map each column through ``reduction^T`` (d_in x d) and l2-normalize it."""
    reduction = np.asarray(reduction, dtype=np.float64)
    raw = check_feature_set(raw)
    if reduction.ndim != 2 or raw.shape[-2] != reduction.shape[0]:
        raise ShapeError(f"reduction {reduction.shape} does not accept features of dim {raw.shape[-2]}")
    if raw.ndim == 2:
        return linalg.normalize_columns(linalg.matmul(reduction.T, raw))[0]
    b, d_in, m = raw.shape
    flat = raw.transpose(1, 0, 2).reshape(d_in, b * m)
    reduced = linalg.normalize_columns(linalg.matmul(reduction.T, flat))[0]
    return reduced.reshape(-1, b, m).transpose(1, 0, 2)
