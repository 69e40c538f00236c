import numpy as np
import pytest

from jcfpool import linalg
from jcfpool.codebook import Codebook
from jcfpool.exceptions import InputError, NumericError, UnsupportedModeError
from jcfpool.grad import (
    FdConfig,
    central_difference,
    finite_diff_check,
    first_order_backward,
    jcf_backward,
    jcf_shared_backward,
    relative_error,
    sgd_step,
)
from jcfpool.pooling import JcfParams, JcfSharedParams, first_order_pool, jcf_pool


def instance(rng, d=4, n=3, r=2, D=2, m=3, temperature=0.5):
    cb = Codebook(linalg.normalize_rows(rng.standard_normal((n, d))), "soft", temperature)
    p = JcfSharedParams(rng.standard_normal((D, d, r)), rng.standard_normal((D, d, r)),
                        rng.standard_normal((n, r)), rng.standard_normal((n, r)))
    return rng.standard_normal((d, m)), cb, p


def test_zero_features_give_zero_projector_grads(rng):
    _, cb, p = instance(rng)
    bundle = jcf_shared_backward(np.zeros((4, 3)), cb, p, rng.standard_normal(2))
    assert np.array_equal(bundle.value, np.zeros(2))
    assert not np.any(bundle.d_u_shared) and not np.any(bundle.d_v_shared)


@pytest.mark.parametrize("normalize", [False, True])
def test_zero_upstream_gives_zero_grads(rng, normalize):
    x, cb, p = instance(rng)
    reduction = rng.standard_normal((6, 4))
    bundle = jcf_shared_backward(rng.standard_normal((6, 3)), cb, p, np.zeros(2),
                                 reduction=reduction, normalize_output=normalize)
    for name, g in bundle.as_dict().items():
        assert not np.any(g), name
    assert not np.any(bundle.d_features)


def test_hard_mode_rejected(rng):
    x, cb, p = instance(rng)
    with pytest.raises(UnsupportedModeError):
        jcf_shared_backward(x, Codebook(cb.words, "hard"), p, np.ones(2))


def test_value_matches_forward(rng):
    x, cb, p = instance(rng)
    from jcfpool.pooling import jcf_shared_pool
    bundle = jcf_shared_backward(x, cb, p, np.ones(2))
    assert np.allclose(bundle.value, jcf_shared_pool(x, cb, p), atol=1e-13)


def test_small_instance_matches_central_differences(rng):
    x, cb, p = instance(rng)
    upstream = rng.standard_normal(2)

    def loss():
        from jcfpool.pooling import jcf_shared_pool
        return float(upstream @ jcf_shared_pool(x, cb, p))

    bundle = jcf_shared_backward(x, cb, p, upstream)
    for name in ("u_shared", "v_shared", "a", "b"):
        numeric = central_difference(loss, getattr(p, name), 1e-5)
        assert relative_error(getattr(bundle, "d_" + name), numeric).max() < 1e-5, name
    numeric = central_difference(loss, x, 1e-5)
    assert relative_error(bundle.d_features, numeric).max() < 1e-5


@pytest.mark.parametrize("kwargs", [
    {}, {"kernel": "jcf"}, {"dual_codebook": True}, {"normalize_output": False},
    {"use_reduction": False}, {"kernel": "jcf", "dual_codebook": True}, {"temperature": 0.1},
])
def test_finite_diff_check_variants(kwargs):
    report = finite_diff_check(FdConfig(**kwargs), seed=3)
    assert report.passed, report.errors


def test_finite_diff_check_covers_every_tensor():
    report = finite_diff_check(FdConfig(dual_codebook=True), seed=0)
    assert set(report.errors) == {"u_shared", "v_shared", "a", "b", "codebook", "codebook_q",
                                  "reduction", "features"}


def test_linear_path_is_nearly_exact():
    for seed in range(5):
        assert finite_diff_check(FdConfig(path="linear"), seed=seed).max_error < 1e-7


def test_finite_diff_check_deterministic():
    a = finite_diff_check(seed=5).to_dict()
    b = finite_diff_check(seed=5).to_dict()
    assert a == b


def test_finite_diff_check_rejects_unknown_kernel():
    with pytest.raises(InputError):
        finite_diff_check(FdConfig(kernel="bp"))


def test_additivity_over_locations(rng):
    x, cb, p = instance(rng, m=6)
    upstream = rng.standard_normal(2)
    whole = jcf_shared_backward(x, cb, p, upstream).as_dict()
    parts = [jcf_shared_backward(x[:, k:k + 1], cb, p, upstream).as_dict() for k in range(6)]
    for name, g in whole.items():
        assert np.max(np.abs(g - sum(part[name] for part in parts))) < 1e-10, name


def test_batch_gradient_is_sum_of_samples(rng):
    _, cb, p = instance(rng)
    xs = rng.standard_normal((3, 4, 5))
    up = rng.standard_normal((3, 2))
    whole = jcf_shared_backward(xs, cb, p, up, normalize_output=True)
    singles = [jcf_shared_backward(xs[k], cb, p, up[k], normalize_output=True) for k in range(3)]
    for name, g in whole.as_dict().items():
        assert np.allclose(g, sum(s.as_dict()[name] for s in singles), atol=1e-12), name
    assert np.allclose(whole.d_features, np.stack([s.d_features for s in singles]), atol=1e-13)


def test_jcf_backward_uses_per_word_names(rng):
    x, cb, _ = instance(rng)
    p = JcfParams(rng.standard_normal((2, 4, 3)), rng.standard_normal((2, 4, 3)))
    bundle = jcf_backward(x, cb, p, np.ones(2))
    assert set(bundle.as_dict()) == {"u_set", "v_set", "codebook"}
    assert np.allclose(bundle.value, jcf_pool(x, cb, p), atol=1e-13)


def test_first_order_backward(rng):
    x, w = rng.standard_normal((5, 4)), rng.standard_normal((5, 3))
    up = rng.standard_normal(3)
    bundle = first_order_backward(x, w, up)
    numeric = central_difference(lambda: float(up @ first_order_pool(x, w)), w, 1e-6)
    assert np.allclose(bundle.d_w, numeric, atol=1e-8)


# -- sgd -----------------------------------------------------------------------------


def test_sgd_scalar_example():
    out = sgd_step({"p": np.array(1.0)}, {"p": np.array(0.5)}, 0.1)
    assert out["p"] == pytest.approx(0.95, abs=1e-15)


def test_sgd_zero_lr_and_zero_grad(rng):
    params = {"u": rng.standard_normal((2, 3)),
              "codebook": linalg.normalize_rows(rng.standard_normal((3, 3)))}
    grads = {k: rng.standard_normal(v.shape) for k, v in params.items()}
    same = sgd_step(params, grads, 0.0)
    for k in params:
        assert np.array_equal(same[k], params[k])
    zero = sgd_step(params, {k: np.zeros_like(v) for k, v in params.items()}, 0.3)
    assert np.array_equal(zero["u"], params["u"])
    assert np.allclose(zero["codebook"], params["codebook"], atol=1e-15)


def test_sgd_renormalizes_codebook_and_respects_freeze(rng):
    params = {"codebook": linalg.normalize_rows(rng.standard_normal((3, 4))),
              "a": rng.standard_normal((3, 2))}
    grads = {k: rng.standard_normal(v.shape) for k, v in params.items()}
    out = sgd_step(params, grads, 0.5, frozen=("a",))
    assert np.allclose(np.linalg.norm(out["codebook"], axis=1), 1, atol=1e-12)
    assert np.array_equal(out["a"], params["a"])


def test_sgd_non_finite_gradient_named(rng):
    with pytest.raises(NumericError) as info:
        sgd_step({"a": np.ones(2), "b": np.ones(2)}, {"a": np.ones(2), "b": np.array([1, np.nan])},
                 0.1)
    assert info.value.tensor == "b"


def test_sgd_negative_lr_rejected():
    with pytest.raises(InputError):
        sgd_step({"a": np.ones(1)}, {"a": np.ones(1)}, -1.0)
