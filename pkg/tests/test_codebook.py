import numpy as np
import pytest

from jcfpool import linalg
from jcfpool.codebook import Codebook, assign_columns, hard_assign, init_codebook, soft_assign
from jcfpool.exceptions import InputError

E1E2 = np.eye(2)


def test_soft_assign_examples():
    e = np.e
    h = soft_assign(np.array([1.0, 0.0]), Codebook(E1E2, "soft", 1.0))
    assert np.allclose(h, [e / (e + 1), 1 / (e + 1)], atol=1e-15)
    h = soft_assign(np.array([1.0, 1.0]) / np.sqrt(2), Codebook(E1E2))
    assert np.allclose(h, [0.5, 0.5], atol=1e-15)


def test_soft_assign_low_temperature_limit():
    words = np.eye(4)
    h = soft_assign(words[2] * 3.0, Codebook(words, "soft", 0.01))
    assert np.max(np.abs(h - np.eye(4)[2])) < 1e-10


def test_hard_assign_examples():
    cb = Codebook(E1E2, "hard")
    assert np.array_equal(hard_assign(np.array([0.1, 0.9]), cb), [0.0, 1.0])
    assert np.array_equal(hard_assign(np.array([1.0, 1.0]), cb), [1.0, 0.0])


def test_hard_assign_linear_scan(rng):
    words = linalg.normalize_rows(rng.standard_normal((8, 5)))
    cb = Codebook(words, "hard")
    for _ in range(20):
        x = rng.standard_normal(5)
        sims = [np.dot(w, x) / np.linalg.norm(x) for w in words]
        best = 0
        for j in range(1, 8):
            if sims[j] > sims[best]:
                best = j
        assert np.array_equal(hard_assign(x, cb), np.eye(8)[best])


def test_soft_weights_on_simplex_and_positive(rng):
    cb = Codebook(linalg.normalize_rows(rng.standard_normal((6, 4))))
    h = assign_columns(rng.standard_normal((4, 30)), cb)
    assert np.all(h > 0)
    assert np.max(np.abs(h.sum(axis=0) - 1)) < 1e-10


def test_soft_tends_to_hard(rng):
    words = linalg.normalize_rows(rng.standard_normal((6, 4)))
    x = rng.standard_normal((4, 50))
    cos = np.sort(words @ linalg.normalize_columns(x)[0], axis=0)
    x = x[:, cos[-1] - cos[-2] > 0.01]  # drop near-ties, where the limit is not yet reached
    soft = assign_columns(x, Codebook(words, "soft", 1e-3))
    hard = assign_columns(x, Codebook(words, "hard"))
    assert np.array_equal(np.argmax(soft, axis=0), np.argmax(hard, axis=0))
    assert np.all(soft.max(axis=0) > 0.999)


def test_codebook_validation():
    with pytest.raises(InputError):
        Codebook(np.ones((2, 2)), "fuzzy")
    with pytest.raises(InputError):
        Codebook(np.eye(2), "soft", 0.0)


def test_init_codebook_fixed_point():
    basis = np.eye(5)
    cb = init_codebook([basis], 5, seed=3)
    order = np.argmax(cb.words, axis=1)
    assert sorted(order) == list(range(5))
    assert np.allclose(cb.words, basis[order], atol=1e-12)


def test_init_codebook_deterministic(rng):
    feats = [rng.standard_normal((6, 20)) for _ in range(3)]
    a = init_codebook(feats, 4, seed=11)
    b = init_codebook(feats, 4, seed=11)
    assert a.words.tobytes() == b.words.tobytes()
    assert np.allclose(np.linalg.norm(a.words, axis=1), 1, atol=1e-10)


def test_init_codebook_finds_clusters(rng):
    means = linalg.normalize_rows(rng.standard_normal((2, 8)))
    cols = np.concatenate([means[k][:, None] * 5 + 0.3 * rng.standard_normal((8, 100))
                           for k in range(2)], axis=1)
    cb = init_codebook([cols], 2, seed=0)
    for k in range(2):
        block = cols[:, k * 100:(k + 1) * 100]
        direction = linalg.l2_normalize(linalg.normalize_columns(block)[0].mean(axis=1))
        assert 1 - np.max(cb.words @ direction) < 0.1


def test_init_codebook_too_few_columns():
    with pytest.raises(InputError):
        init_codebook([np.eye(3)[:, :2]], 4, seed=0)
