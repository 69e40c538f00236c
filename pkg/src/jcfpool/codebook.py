"""Codebook and the per-feature assignment function ``h(x)``."""

from dataclasses import dataclass

import numpy as np

from . import linalg
from .exceptions import InputError, ShapeError

DEFAULT_TEMPERATURE = 0.1


@dataclass
class Codebook:
    """``N`` unit-norm codewords stored as rows of ``words`` (N x d).

    ``mode`` is ``"soft"`` (softmax of cosine similarity divided by
    ``temperature``) or ``"hard"`` (one-hot at the most similar codeword).
    """

    words: np.ndarray
    mode: str = "soft"
    temperature: float = DEFAULT_TEMPERATURE

    def __post_init__(self):
        self.words = np.asarray(self.words, dtype=np.float64)
        if self.words.ndim != 2 or self.words.shape[0] < 1:
            raise InputError(f"codebook words must be N x d with N >= 1, got {self.words.shape}")
        if self.mode not in ("soft", "hard"):
            raise InputError(f"unknown assignment mode {self.mode!r}")
        if self.mode == "soft" and not self.temperature > 0:
            raise InputError("soft assignment needs a positive temperature")

    @property
    def n_words(self):
        return self.words.shape[0]

    @property
    def dim(self):
        return self.words.shape[1]

    def normalized(self):
        """Copy with rows re-projected to the unit sphere."""
        return Codebook(linalg.normalize_rows(self.words), self.mode, self.temperature)


def _columns(x, dim):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[:, None]
    if x.ndim != 2 or x.shape[0] != dim:
        raise ShapeError(f"feature dimension {x.shape[0]} does not match codebook dimension {dim}")
    return x, single


def cosine_similarity(x, words, eps=linalg.DEFAULT_EPS):
    """Cosine similarity between codeword rows and feature columns (N x M)."""
    x_hat, _ = linalg.normalize_columns(x, eps)
    c_hat = linalg.normalize_rows(words, eps)
    return linalg.matmul(c_hat, x_hat)


def assign_columns(x, cb):
    """Assignment weights for every column of ``x``; returns N x M."""
    x, _ = _columns(x, cb.dim)
    cos = cosine_similarity(x, cb.words)
    if cb.mode == "soft":
        return linalg.softmax(cos / cb.temperature, axis=0)
    out = np.zeros_like(cos)
    out[np.argmax(cos, axis=0), np.arange(cos.shape[1])] = 1.0
    return out


def soft_assign(x, cb):
    """Softmax over temperature-scaled cosine similarities for one feature."""
    x, single = _columns(x, cb.dim)
    if cb.mode != "soft":
        cb = Codebook(cb.words, "soft", cb.temperature)
    h = assign_columns(x, cb)
    return h[:, 0] if single else h


def hard_assign(x, cb):
    """One-hot at the highest cosine similarity; ties go to the lowest index."""
    x, single = _columns(x, cb.dim)
    h = assign_columns(x, Codebook(cb.words, "hard"))
    return h[:, 0] if single else h


def _kmeans_pp(points, k, rng):
    n = points.shape[0]
    centers = [int(rng.integers(n))]
    closest = np.sum((points - points[centers[0]]) ** 2, axis=1)
    for _ in range(1, k):
        total = closest.sum()
        if total <= 0:
            # fewer distinct points than k; take the first unused index
            unused = np.setdiff1d(np.arange(n), centers)
            idx = int(unused[0])
        else:
            idx = int(rng.choice(n, p=closest / total))
        centers.append(idx)
        closest = np.minimum(closest, np.sum((points - points[idx]) ** 2, axis=1))
    return points[centers].copy()


def init_codebook(features, n_words, seed, n_iter=10, mode="soft",
                  temperature=DEFAULT_TEMPERATURE):
    """Spherical k-means codebook from a list of d x M feature sets.

    Seeds with k-means++ on the l2-normalized feature columns, then runs
    ``n_iter`` Lloyd iterations under cosine similarity. Empty clusters keep
    their previous codeword.
    """
    if isinstance(features, np.ndarray) and features.ndim == 2:
        features = [features]
    columns = np.concatenate([np.asarray(f, dtype=np.float64) for f in features], axis=1)
    points = linalg.normalize_columns(columns)[0].T
    if n_words < 1 or points.shape[0] < n_words:
        raise InputError(f"need at least {n_words} feature columns, got {points.shape[0]}")
    rng = np.random.default_rng(seed)
    words = _kmeans_pp(points, n_words, rng)
    for _ in range(n_iter):
        labels = np.argmax(points @ words.T, axis=1)
        for j in range(n_words):
            members = points[labels == j]
            if len(members):
                words[j] = members.mean(axis=0)
        words = linalg.normalize_rows(words)
    return Codebook(linalg.normalize_rows(words), mode, temperature)
