"""Input checks shared by the kernels, the trainer and the estimator."""

import numpy as np

from .exceptions import InputError, NumericError, ShapeError


def check_feature_set(xs, dim=None, name="features"):
    """Validate a ``d x M`` feature set or a ``B x d x M`` stack of them.

    Returns a float64 array. Empty location sets are rejected rather than
    pooled to zero.
    """
    xs = np.asarray(xs, dtype=np.float64)
    if xs.ndim not in (2, 3):
        raise ShapeError(f"{name} must be d x M or B x d x M, got shape {xs.shape}")
    if xs.shape[-1] == 0:
        raise InputError(f"{name} has no locations (M = 0)")
    if dim is not None and xs.shape[-2] != dim:
        raise ShapeError(f"{name} dimension {xs.shape[-2]} != expected {dim}")
    if not np.all(np.isfinite(xs)):
        raise NumericError(f"non-finite values in {name}", tensor=name)
    return xs


def check_shape(array, shape, name):
    array = np.asarray(array, dtype=np.float64)
    if array.shape != tuple(shape):
        raise ShapeError(f"{name} has shape {array.shape}, expected {tuple(shape)}")
    return array


def check_labels(labels, n=None):
    labels = np.asarray(labels)
    if labels.ndim != 1:
        raise ShapeError("labels must be 1-D")
    if n is not None and len(labels) != n:
        raise ShapeError(f"{len(labels)} labels for {n} samples")
    return labels


def check_positive_int(value, name, minimum=1):
    if isinstance(value, bool) or int(value) != value or value < minimum:
        raise InputError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return int(value)
