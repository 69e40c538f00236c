"""Trainable pooling models as dicts of named tensors.

A model is ``reduce -> pool -> (normalize)`` except the first-order
baseline, which projects raw features straight to ``D`` dimensions. The
factorized model is stored as ``u``/``v`` and evaluated as the one-codeword,
one-projector case of the shared kernel, which it equals exactly.
"""

from dataclasses import dataclass

import numpy as np

from .codebook import Codebook, init_codebook
from .exceptions import InputError, UnsupportedModeError
from .grad import first_order_backward, jcf_backward, jcf_shared_backward
from .pooling import (
    JcfParams,
    JcfSharedParams,
    first_order_pool,
    jcf_pool,
    jcf_shared_pool,
    normalize_representation,
    reduce_features,
)


@dataclass
class ModelSpec:
    method: str
    d_in: int
    d: int
    D: int
    n_words: int = 1
    rank: int = 1
    temperature: float = 0.1
    mode: str = "soft"
    dual: bool = False
    normalize_output: bool = True

    @classmethod
    def from_config(cls, cfg, d_in=None):
        p, c = cfg.pooling, cfg.codebook
        return cls(method=p.method, d_in=d_in or cfg.dataset.raw_dim, d=p.reduced_dim,
                   D=p.out_dim, n_words=p.n_words, rank=p.rank, temperature=c.temperature,
                   mode=c.mode, dual=c.dual, normalize_output=p.normalize_output)

    def tensor_names(self):
        if self.method == "baseline":
            return ["w"]
        if self.method == "factorized":
            return ["reduction", "u", "v"]
        books = ["codebook", "codebook_q"] if self.dual else ["codebook"]
        if self.method == "jcf":
            return ["reduction", *books, "u_set", "v_set"]
        return ["reduction", *books, "u_shared", "v_shared", "a", "b"]


def init_params(spec, train_features, rng, init_iters=10):
    """Random projections; codebooks from spherical k-means on reduced training features."""
    if spec.method == "baseline":
        return {"w": rng.standard_normal((spec.d_in, spec.D)) / np.sqrt(spec.d_in)}
    params = {"reduction": rng.standard_normal((spec.d_in, spec.d)) / np.sqrt(spec.d_in)}
    scale = 1.0 / np.sqrt(spec.d)
    if spec.method == "factorized":
        params["u"] = rng.standard_normal((spec.D, spec.d)) * scale
        params["v"] = rng.standard_normal((spec.D, spec.d)) * scale
        return params
    reduced = reduce_features(train_features, params["reduction"])
    columns = list(reduced)
    params["codebook"] = init_codebook(columns, spec.n_words, int(rng.integers(2**31 - 1)),
                                       n_iter=init_iters).words
    if spec.dual:
        params["codebook_q"] = init_codebook(columns, spec.n_words, int(rng.integers(2**31 - 1)),
                                             n_iter=init_iters).words
    k = spec.n_words if spec.method == "jcf" else spec.rank
    name_u, name_v = ("u_set", "v_set") if spec.method == "jcf" else ("u_shared", "v_shared")
    params[name_u] = rng.standard_normal((spec.D, spec.d, k)) * scale
    params[name_v] = rng.standard_normal((spec.D, spec.d, k)) * scale
    if spec.method == "jcf_shared":
        params["a"] = _orthonormal_columns(rng, spec.n_words, spec.rank)
        params["b"] = _orthonormal_columns(rng, spec.n_words, spec.rank)
    return params


def _orthonormal_columns(rng, n, r):
    """Random ``n x r`` recombination with orthonormal columns, scaled by ``sqrt(n / r)``.

    Mixing iid projectors through it leaves each materialized per-word
    projector at the JCF-N init scale; at ``r = n`` the mixed set is again iid.
    """
    q, upper = np.linalg.qr(rng.standard_normal((n, r)))
    q *= np.sign(np.diag(upper))  # unique (Haar) choice of signs
    return q * np.sqrt(n / r)


def _codebooks(spec, params):
    cb = Codebook(params["codebook"], spec.mode, spec.temperature)
    cb_q = Codebook(params["codebook_q"], spec.mode, spec.temperature) if spec.dual else None
    return cb, cb_q


_ONE = np.ones((1, 1))


def _factorized_as_shared(params):
    u = params["u"][:, :, None]
    v = params["v"][:, :, None]
    return JcfSharedParams(u, v, _ONE, _ONE)


def _unit_book(d):
    return Codebook(np.ones((1, d)) / np.sqrt(d))


def pool(spec, params, raw):
    """Unnormalized pooled representation of raw features (``B x D``)."""
    if spec.method == "baseline":
        return first_order_pool(raw, params["w"])
    feats = reduce_features(raw, params["reduction"])
    if spec.method == "factorized":
        return jcf_shared_pool(feats, _unit_book(spec.d), _factorized_as_shared(params))
    cb, cb_q = _codebooks(spec, params)
    if spec.method == "jcf":
        return jcf_pool(feats, cb, JcfParams(params["u_set"], params["v_set"]), cb_q=cb_q)
    shared = JcfSharedParams(params["u_shared"], params["v_shared"], params["a"], params["b"])
    return jcf_shared_pool(feats, cb, shared, cb_q=cb_q)


def embed(spec, params, raw, chunk=256):
    """Embeddings for a ``B x d_in x M`` stack, evaluated in fixed-size chunks."""
    raw = np.asarray(raw, dtype=np.float64)
    parts = [pool(spec, params, raw[k:k + chunk]) for k in range(0, len(raw), chunk)]
    z = np.concatenate(parts, axis=0)
    return normalize_representation(z) if spec.normalize_output else z


def backward(spec, params, raw, upstream):
    """Gradients of ``sum_b <upstream_b, embedding_b>``; returns ``(embeddings, grads)``."""
    norm = spec.normalize_output
    if spec.method == "baseline":
        bundle = first_order_backward(raw, params["w"], upstream, normalize_output=norm)
        return bundle.value, bundle.as_dict()
    if spec.method == "factorized":
        bundle = jcf_shared_backward(raw, _unit_book(spec.d), _factorized_as_shared(params),
                                     upstream, reduction=params["reduction"], normalize_output=norm)
        grads = {"reduction": bundle.d_reduction, "u": bundle.d_u_shared[:, :, 0],
                 "v": bundle.d_v_shared[:, :, 0]}
        return bundle.value, grads
    if spec.mode != "soft":
        raise UnsupportedModeError("training needs codebook.mode = 'soft'")
    cb, cb_q = _codebooks(spec, params)
    if spec.method == "jcf":
        bundle = jcf_backward(raw, cb, JcfParams(params["u_set"], params["v_set"]), upstream,
                              reduction=params["reduction"], normalize_output=norm, cb_q=cb_q)
    elif spec.method == "jcf_shared":
        shared = JcfSharedParams(params["u_shared"], params["v_shared"], params["a"], params["b"])
        bundle = jcf_shared_backward(raw, cb, shared, upstream, reduction=params["reduction"],
                                     normalize_output=norm, cb_q=cb_q)
    else:
        raise InputError(f"no backward for method {spec.method!r}")
    return bundle.value, bundle.as_dict()


def param_total(params):
    return int(sum(np.size(v) for v in params.values()))
