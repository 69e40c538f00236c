"""scikit-learn style wrapper around the training harness."""

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import model as model_lib
from .config import RunConfig
from .exceptions import ShapeError
from .harness import Dataset, recall_at_k, train
from .validation import check_labels


def check_feature_stack(X):
    """``n_samples x d_in x M`` float64 array of finite local features."""
    X = check_array(X, allow_nd=True, dtype=np.float64, ensure_2d=False)
    if X.ndim != 3:
        raise ShapeError(f"expected n_samples x d_in x M features, got shape {X.shape}")
    return X


class JCFPooling(TransformerMixin, BaseEstimator):
    """Learned second-order pooling of local feature sets into compact embeddings.

    ``fit`` trains the reduction layer, codebook and projectors with the
    semi-hard triplet loss; ``transform`` maps each ``d_in x M`` feature set
    to an l2-normalized ``out_dim`` embedding. ``method`` selects
    ``"jcf_shared"`` (JCF-N-R), ``"jcf"`` (JCF-N), ``"factorized"`` or the
    first-order ``"baseline"``.
    """

    def __init__(self, method="jcf_shared", n_words=8, rank=4, reduced_dim=32, out_dim=32,
                 temperature=0.1, dual_codebook=False, normalize_output=True, lr=0.5,
                 batch_size=16, n_steps=300, margin=0.1, freeze=(), random_state=0):
        self.method = method
        self.n_words = n_words
        self.rank = rank
        self.reduced_dim = reduced_dim
        self.out_dim = out_dim
        self.temperature = temperature
        self.dual_codebook = dual_codebook
        self.normalize_output = normalize_output
        self.lr = lr
        self.batch_size = batch_size
        self.n_steps = n_steps
        self.margin = margin
        self.freeze = freeze
        self.random_state = random_state

    def _run_config(self, d_in):
        cfg = RunConfig()
        cfg.update({
            "pooling.method": self.method, "pooling.n_words": self.n_words,
            "pooling.rank": self.rank, "pooling.reduced_dim": self.reduced_dim,
            "pooling.out_dim": self.out_dim, "pooling.normalize_output": self.normalize_output,
            "codebook.temperature": self.temperature, "codebook.dual": self.dual_codebook,
            "optim.lr": self.lr, "optim.batch_size": self.batch_size,
            "optim.steps": self.n_steps, "optim.margin": self.margin,
            "optim.freeze": list(self.freeze), "dataset.raw_dim": d_in,
            "seed": 0 if self.random_state is None else self.random_state,
        })
        return cfg.validate()

    def fit(self, X, y):
        X = check_feature_stack(X)
        y = check_labels(y, len(X))
        cfg = self._run_config(X.shape[1])
        result = train(cfg, Dataset(X, y, np.ones(len(y), dtype=bool)))
        self.params_ = result.params
        self.spec_ = result.spec
        self.train_log_ = result.log
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, ["params_", "spec_"])
        X = check_feature_stack(X)
        if X.shape[1] != self.n_features_in_:
            raise ShapeError(f"X has feature dim {X.shape[1]}, fitted with {self.n_features_in_}")
        return model_lib.embed(self.spec_, self.params_, X)

    def score(self, X, y):
        """Recall@1 with every sample querying all the others."""
        emb = self.transform(X)
        return recall_at_k(emb, check_labels(y, len(emb)), ks=[1]).recall_at[1]
