"""Hand-derived reverse mode for the codebook pooling chain.

The chain is ``raw -> reduction -> column l2-norm -> soft assignment ->
recombination -> bilinear factors -> sum pooling -> output l2-norm``. Every
stage is optional except the pooling itself; :func:`finite_diff_check`
compares the analytic gradients with central differences of the forward
kernels in :mod:`jcfpool.pooling`.
"""

from dataclasses import dataclass, field, fields

import numpy as np

from . import linalg
from .codebook import Codebook
from .exceptions import InputError, NumericError, ShapeError, UnsupportedModeError
from .pooling import (
    JcfParams,
    JcfSharedParams,
    _columns,
    _pool,
    _stack_projectors,
    first_order_pool,
    jcf_pool,
    jcf_shared_pool,
    normalize_representation,
    reduce_features,
)


@dataclass
class GradientBundle:
    """Gradients of ``<upstream, z>``; entries are ``None`` when not applicable.

    ``d_features`` is taken w.r.t. the pooling input (the reduced, normalized
    features when a reduction is part of the chain). ``value`` holds the
    forward representation computed on the way.
    """

    d_u_shared: np.ndarray = None
    d_v_shared: np.ndarray = None
    d_a: np.ndarray = None
    d_b: np.ndarray = None
    d_u_set: np.ndarray = None
    d_v_set: np.ndarray = None
    d_w: np.ndarray = None
    d_codebook: np.ndarray = None
    d_codebook_q: np.ndarray = None
    d_features: np.ndarray = None
    d_reduction: np.ndarray = None
    value: np.ndarray = field(default=None, repr=False)

    def as_dict(self):
        """Parameter name -> gradient for every populated parameter gradient."""
        out = {}
        for f in fields(self):
            if f.name.startswith("d_") and f.name != "d_features":
                g = getattr(self, f.name)
                if g is not None:
                    out[f.name[2:]] = g
        return out


def _split_reduction(xs, reduction):
    """Apply the optional reduction; returns pooling input and a backward closure."""
    if reduction is None:
        return np.asarray(xs, dtype=np.float64), None
    reduction = np.asarray(reduction, dtype=np.float64)
    raw_cols, batch, m = _columns(xs)
    if raw_cols.shape[0] != reduction.shape[0]:
        raise ShapeError(f"reduction {reduction.shape} does not accept features of dim {raw_cols.shape[0]}")
    reduced = linalg.matmul(reduction.T, raw_cols)
    normed, norms = linalg.normalize_columns(reduced)

    def backward(d_cols):
        d_reduced = linalg.normalize_backward(d_cols, normed, norms)
        return raw_cols @ d_reduced.T

    if batch is None:
        return normed, backward
    return normed.reshape(-1, batch, m).transpose(1, 0, 2), backward


def _output_backward(z, upstream, normalize_output):
    """Return ``(value, d_z)`` through the optional output normalization."""
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != z.shape:
        raise ShapeError(f"upstream shape {upstream.shape} != representation shape {z.shape}")
    if not normalize_output:
        return z, upstream
    z_cols = np.atleast_2d(z).T
    norms = np.maximum(np.sqrt(np.sum(z_cols * z_cols, axis=0)), linalg.DEFAULT_EPS)
    z_hat = z_cols / norms
    d_z = linalg.normalize_backward(np.atleast_2d(upstream).T, z_hat, norms).T
    return normalize_representation(z), d_z.reshape(z.shape)


def _per_location(d_z, batch, m):
    """Broadcast a pooled gradient (``D`` or ``B x D``) to every location column."""
    if batch is None:
        return np.repeat(d_z[:, None], m, axis=1)
    return np.repeat(d_z.T, m, axis=1)


def _assignment_forward(cols, cb):
    x_hat, x_norm = linalg.normalize_columns(cols)
    c_norm = np.maximum(np.sqrt(np.sum(cb.words * cb.words, axis=1)), linalg.DEFAULT_EPS)
    c_hat = cb.words / c_norm[:, None]
    cos = linalg.matmul(c_hat, x_hat)
    h = linalg.softmax(cos / cb.temperature, axis=0)
    return h, (x_hat, x_norm, c_hat, c_norm)


def _assignment_backward(d_h, h, cache, temperature):
    """Backprop through softmax(cos / T); returns ``(d_cols, d_words)``."""
    x_hat, x_norm, c_hat, c_norm = cache
    d_cos = linalg.softmax_backward(d_h, h, axis=0) / temperature
    d_x_hat = c_hat.T @ d_cos
    d_c_hat = d_cos @ x_hat.T
    d_cols = linalg.normalize_backward(d_x_hat, x_hat, x_norm)
    d_words = linalg.normalize_backward(d_c_hat.T, c_hat.T, c_norm).T
    return d_cols, d_words


def _check_soft(cb, name):
    if cb.mode != "soft":
        raise UnsupportedModeError(f"{name}: gradients need soft assignment, got mode {cb.mode!r}")


def jcf_shared_backward(xs, cb, p, upstream, *, reduction=None, normalize_output=False,
                        cb_q=None):
    """Gradients of ``<upstream, z>`` for JCF-N-R pooling.

    With ``reduction`` given, ``xs`` holds raw features and the reduction
    layer (plus its column normalization) is part of the chain.
    """
    _check_soft(cb, "jcf_shared_backward")
    if cb_q is not None:
        _check_soft(cb_q, "jcf_shared_backward")
    feats, reduction_backward = _split_reduction(xs, reduction)
    cols, batch, m = _columns(feats)
    u_sh = np.asarray(p.u_shared, dtype=np.float64)
    v_sh = np.asarray(p.v_shared, dtype=np.float64)
    a = np.asarray(p.a, dtype=np.float64)
    b = np.asarray(p.b, dtype=np.float64)
    n_out, d, r = u_sh.shape
    if (v_sh.shape != u_sh.shape or d != cols.shape[0] or a.shape != (cb.n_words, r)
            or b.shape != a.shape):
        raise ShapeError("JCF-shared parameters incompatible with features or codebook")

    h_p, cache_p = _assignment_forward(cols, cb)
    if cb_q is None:
        h_q, cache_q = h_p, cache_p
    else:
        h_q, cache_q = _assignment_forward(cols, cb_q)
    s = linalg.matmul(a.T, h_p)
    t = linalg.matmul(b.T, h_q)
    proj_u = linalg.matmul(_stack_projectors(u_sh), cols).reshape(n_out, r, -1)
    proj_v = linalg.matmul(_stack_projectors(v_sh), cols).reshape(n_out, r, -1)
    left = (proj_u * s[None]).sum(axis=1)
    right = (proj_v * t[None]).sum(axis=1)
    z = _pool(left * right, batch, m)

    value, d_z = _output_backward(z, upstream, normalize_output)
    d_terms = _per_location(d_z, batch, m)
    d_left = d_terms * right
    d_right = d_terms * left

    d_proj_u = d_left[:, None, :] * s[None]
    d_proj_v = d_right[:, None, :] * t[None]
    d_s = np.sum(d_left[:, None, :] * proj_u, axis=0)
    d_t = np.sum(d_right[:, None, :] * proj_v, axis=0)

    out = GradientBundle(value=value)
    flat_u = d_proj_u.reshape(n_out * r, -1)
    flat_v = d_proj_v.reshape(n_out * r, -1)
    out.d_u_shared = (flat_u @ cols.T).reshape(n_out, r, d).transpose(0, 2, 1)
    out.d_v_shared = (flat_v @ cols.T).reshape(n_out, r, d).transpose(0, 2, 1)
    d_cols = _stack_projectors(u_sh).T @ flat_u + _stack_projectors(v_sh).T @ flat_v
    out.d_a = h_p @ d_s.T
    out.d_b = h_q @ d_t.T

    d_h_p = a @ d_s
    d_h_q = b @ d_t
    if cb_q is None:
        dx, out.d_codebook = _assignment_backward(d_h_p + d_h_q, h_p, cache_p, cb.temperature)
        d_cols = d_cols + dx
    else:
        dx, out.d_codebook = _assignment_backward(d_h_p, h_p, cache_p, cb.temperature)
        dx_q, out.d_codebook_q = _assignment_backward(d_h_q, h_q, cache_q, cb_q.temperature)
        d_cols = d_cols + dx + dx_q

    if reduction_backward is not None:
        out.d_reduction = reduction_backward(d_cols)
    out.d_features = d_cols if batch is None else d_cols.reshape(d, batch, m).transpose(1, 0, 2)
    return out


def jcf_backward(xs, cb, p, upstream, *, reduction=None, normalize_output=False, cb_q=None):
    """Gradients for JCF-N pooling, via the shared path with identity recombination."""
    n = cb.n_words
    eye = np.eye(n)
    shared = JcfSharedParams(p.u_set, p.v_set, eye, eye)
    bundle = jcf_shared_backward(xs, cb, shared, upstream, reduction=reduction,
                                 normalize_output=normalize_output, cb_q=cb_q)
    bundle.d_u_set, bundle.d_v_set = bundle.d_u_shared, bundle.d_v_shared
    bundle.d_u_shared = bundle.d_v_shared = bundle.d_a = bundle.d_b = None
    return bundle


def first_order_backward(xs, w, upstream, *, normalize_output=False):
    """Gradients of the first-order baseline ``z = sum_x W^T x``."""
    w = np.asarray(w, dtype=np.float64)
    cols, batch, m = _columns(xs)
    z = first_order_pool(xs, w)
    value, d_z = _output_backward(z, upstream, normalize_output)
    d_terms = _per_location(d_z, batch, m)
    d_cols = w @ d_terms
    d_features = d_cols if batch is None else d_cols.reshape(-1, batch, m).transpose(1, 0, 2)
    return GradientBundle(d_w=cols @ d_terms.T, d_features=d_features, value=value)


# -- finite-difference verification -------------------------------------------------


@dataclass
class FdConfig:
    """A small random instance for gradient verification.

    ``path="linear"`` checks only ``u_shared`` with output normalization off,
    where the loss is linear in the checked tensor.
    """

    d_in: int = 5
    d: int = 4
    n_words: int = 3
    rank: int = 2
    out_dim: int = 2
    locations: int = 3
    temperature: float = 0.5
    normalize_output: bool = True
    use_reduction: bool = True
    dual_codebook: bool = False
    kernel: str = "jcf_shared"
    path: str = "full"
    step: float = 1e-5
    tolerance: float = 1e-5


@dataclass
class FdCheckReport:
    errors: dict
    tolerance: float
    seed: int

    @property
    def max_error(self):
        return max(self.errors.values()) if self.errors else 0.0

    @property
    def passed(self):
        return self.max_error < self.tolerance

    def to_dict(self):
        return {"seed": self.seed, "tolerance": self.tolerance, "passed": bool(self.passed),
                "max_error": self.max_error, "errors": dict(self.errors)}


def relative_error(analytic, numeric):
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return np.abs(analytic - numeric) / scale


def central_difference(f, x, step):
    """Central-difference gradient of scalar ``f`` at array ``x`` (perturbed in place)."""
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    g = grad.reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + step
        up = f()
        flat[k] = orig - step
        down = f()
        flat[k] = orig
        g[k] = (up - down) / (2.0 * step)
    return grad


def _fd_instance(config, seed):
    rng = np.random.default_rng(seed)
    c = config
    n = 1 if c.kernel == "factorized" else c.n_words
    inst = {
        "raw": rng.standard_normal((c.d_in, c.locations)) if c.use_reduction
        else rng.standard_normal((c.d, c.locations)),
        "codebook": linalg.normalize_rows(rng.standard_normal((n, c.d))),
        "upstream": rng.standard_normal(c.out_dim),
    }
    if c.use_reduction:
        inst["reduction"] = rng.standard_normal((c.d_in, c.d)) / np.sqrt(c.d_in)
    if c.dual_codebook:
        inst["codebook_q"] = linalg.normalize_rows(rng.standard_normal((n, c.d)))
    if c.kernel == "jcf":
        inst["u_set"] = rng.standard_normal((c.out_dim, c.d, n)) / np.sqrt(c.d)
        inst["v_set"] = rng.standard_normal((c.out_dim, c.d, n)) / np.sqrt(c.d)
    else:
        inst["u_shared"] = rng.standard_normal((c.out_dim, c.d, c.rank)) / np.sqrt(c.d)
        inst["v_shared"] = rng.standard_normal((c.out_dim, c.d, c.rank)) / np.sqrt(c.d)
        inst["a"] = rng.standard_normal((n, c.rank))
        inst["b"] = rng.standard_normal((n, c.rank))
    return inst


def finite_diff_check(config=None, seed=0):
    """Compare analytic and central-difference gradients on a random instance.

    Returns an :class:`FdCheckReport` with the max relative error per tensor,
    ``|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)``.
    """
    c = config or FdConfig()
    if c.kernel not in ("jcf_shared", "jcf"):
        raise InputError(f"finite_diff_check supports jcf_shared and jcf, got {c.kernel!r}")
    if c.path not in ("full", "linear"):
        raise InputError(f"unknown path {c.path!r}")
    inst = _fd_instance(c, seed)
    normalize = c.normalize_output and c.path == "full"

    def codebooks():
        cb = Codebook(inst["codebook"], "soft", c.temperature)
        cb_q = Codebook(inst["codebook_q"], "soft", c.temperature) if c.dual_codebook else None
        return cb, cb_q

    def params():
        if c.kernel == "jcf":
            return JcfParams(inst["u_set"], inst["v_set"])
        return JcfSharedParams(inst["u_shared"], inst["v_shared"], inst["a"], inst["b"])

    def pool(feats):
        cb, cb_q = codebooks()
        kernel = jcf_pool if c.kernel == "jcf" else jcf_shared_pool
        z = kernel(feats, cb, params(), cb_q=cb_q)
        return normalize_representation(z) if normalize else z

    def loss():
        feats = inst["raw"]
        if c.use_reduction:
            feats = reduce_features(feats, inst["reduction"])
        return float(np.dot(inst["upstream"], pool(feats)))

    cb, cb_q = codebooks()
    backward = jcf_backward if c.kernel == "jcf" else jcf_shared_backward
    bundle = backward(inst["raw"], cb, params(), inst["upstream"],
                      reduction=inst.get("reduction"), normalize_output=normalize, cb_q=cb_q)
    analytic = bundle.as_dict()

    if c.path == "linear":
        names = ["u_set" if c.kernel == "jcf" else "u_shared"]
    else:
        names = [k for k in ("u_shared", "v_shared", "a", "b", "u_set", "v_set",
                             "codebook", "codebook_q", "reduction") if k in inst]
    errors = {}
    for name in names:
        numeric = central_difference(loss, inst[name], c.step)
        errors[name] = float(relative_error(analytic[name], numeric).max())

    if c.path == "full":
        feats = inst["raw"]
        if c.use_reduction:
            feats = reduce_features(feats, inst["reduction"]).copy()
        bundle_x = backward(feats, cb, params(), inst["upstream"],
                            normalize_output=normalize, cb_q=cb_q)
        numeric = central_difference(lambda: float(np.dot(inst["upstream"], pool(feats))),
                                     feats, c.step)
        errors["features"] = float(relative_error(bundle_x.d_features, numeric).max())
    return FdCheckReport(errors=errors, tolerance=c.tolerance, seed=seed)


# -- optimizer ----------------------------------------------------------------------

CODEBOOK_KEYS = ("codebook", "codebook_q")


def sgd_step(params, grads, lr, frozen=()):
    """Plain SGD ``p <- p - lr * g`` over a dict of named tensors.

    Tensors without a gradient or listed in ``frozen`` are left as is.
    Codebook rows are re-projected onto the unit sphere after the update.
    Returns a new dict; the inputs are not modified.
    """
    if lr < 0:
        raise InputError(f"learning rate must be non-negative, got {lr}")
    for name, g in grads.items():
        if name in params and not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {name}", tensor=name)
    out = {}
    for name, value in params.items():
        g = grads.get(name)
        if g is None or name in frozen or lr == 0:
            new = np.array(value, dtype=np.float64, copy=True)
        else:
            g = np.asarray(g, dtype=np.float64)
            if g.shape != np.shape(value):
                raise ShapeError(f"gradient for {name} has shape {g.shape}, expected {np.shape(value)}")
            new = value - lr * g
        if name in CODEBOOK_KEYS and name not in frozen and g is not None and lr != 0:
            new = linalg.normalize_rows(new)
        out[name] = new
    return out
