"""Triplet hinge loss with semi-hard negative mining."""

from dataclasses import dataclass, field

import numpy as np

from .exceptions import InputError

DEFAULT_MARGIN = 0.1


@dataclass
class TripletSet:
    """``(anchor, positive, negative)`` index rows plus anchors that had no positive."""

    triplets: np.ndarray = field(default_factory=lambda: np.zeros((0, 3), dtype=np.int64))
    skipped: list = field(default_factory=list)

    def __len__(self):
        return len(self.triplets)


def squared_distances(embeddings):
    """Pairwise squared Euclidean distances, computed entry by entry from differences."""
    e = np.asarray(embeddings, dtype=np.float64)
    diff = e[:, None, :] - e[None, :, :]
    return np.sum(diff * diff, axis=2)


def build_pairs(labels, seed):
    """Split the batch into disjoint same-label index pairs.

    Within every label the indices are shuffled and paired consecutively (an
    odd one out is dropped); the list of pairs is then shuffled as a whole.
    """
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    pairs = []
    for label in np.unique(labels):
        idx = np.flatnonzero(labels == label)
        if len(idx) < 2:
            raise InputError(f"label {label!r} has a single sample; pairing needs at least two")
        idx = rng.permutation(idx)
        pairs.extend((int(idx[k]), int(idx[k + 1])) for k in range(0, len(idx) - 1, 2))
    order = rng.permutation(len(pairs))
    return [pairs[k] for k in order]


def mine_semi_hard(embeddings, labels, margin=DEFAULT_MARGIN):
    """One negative per ordered (anchor, positive) pair.

    Picks the closest negative that is still farther than the positive; when
    there is none, falls back to the farthest negative. Ties go to the lowest
    index. Anchors with no positive (or no negative) are listed in
    ``skipped``.
    """
    labels = np.asarray(labels)
    dist = squared_distances(embeddings)
    triplets, skipped = [], []
    for anchor in range(len(labels)):
        same = labels == labels[anchor]
        positives = np.flatnonzero(same)
        positives = positives[positives != anchor]
        negatives = np.flatnonzero(~same)
        if len(positives) == 0 or len(negatives) == 0:
            skipped.append(anchor)
            continue
        d_neg = dist[anchor, negatives]
        for pos in positives:
            farther = d_neg > dist[anchor, pos]
            if farther.any():
                pick = negatives[farther][np.argmin(d_neg[farther])]
            else:
                pick = negatives[np.argmax(d_neg)]
            triplets.append((anchor, int(pos), int(pick)))
    arr = np.array(triplets, dtype=np.int64).reshape(-1, 3)
    return TripletSet(arr, skipped)


def triplet_loss(embeddings, triplets, margin=DEFAULT_MARGIN):
    """Mean of ``max(0, |a-p|^2 - |a-n|^2 + margin)`` and its gradient.

    The gradient is taken w.r.t. ``embeddings``; the hinge uses subgradient 0
    at the kink. An empty triplet set gives ``(0.0, zeros)``.
    """
    if margin <= 0:
        raise InputError("margin must be positive")
    e = np.asarray(embeddings, dtype=np.float64)
    idx = triplets.triplets if isinstance(triplets, TripletSet) else np.asarray(triplets)
    grad = np.zeros_like(e)
    if len(idx) == 0:
        return 0.0, grad
    a, p, n = e[idx[:, 0]], e[idx[:, 1]], e[idx[:, 2]]
    d_ap = np.sum((a - p) ** 2, axis=1)
    d_an = np.sum((a - n) ** 2, axis=1)
    act = d_ap - d_an + margin
    active = act > 0
    loss = float(np.sum(np.where(active, act, 0.0)) / len(idx))
    w = active[:, None] * (2.0 / len(idx))
    np.add.at(grad, idx[:, 0], w * (n - p))
    np.add.at(grad, idx[:, 1], w * (p - a))
    np.add.at(grad, idx[:, 2], w * (a - n))
    return loss, grad
