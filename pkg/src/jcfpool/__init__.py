"""Compact second-order pooling with a shared, low-rank codebook factorization."""

from .codebook import Codebook, assign_columns, init_codebook
from .config import RunConfig, load_config
from .cost import PoolingConfig, flops_estimate, param_count, table1_rows
from .exceptions import (
    CapacityError,
    InputError,
    JcfError,
    NumericError,
    ShapeError,
    UnsupportedModeError,
)
from .harness import (
    SyntheticDatasetSpec,
    evaluate,
    generate_dataset,
    load_checkpoint,
    recall_at_k,
    save_checkpoint,
    train,
)
from .pooling import (
    JcfParams,
    JcfSharedParams,
    Rank1Params,
    bp_full,
    codebook_bp_naive,
    jcf_pool,
    jcf_shared_pool,
    rank1_pool,
)

__version__ = "0.1.0"

__all__ = [
    "CapacityError", "Codebook", "InputError", "JCFPooling", "JcfError", "JcfParams",
    "JcfSharedParams", "NumericError", "PoolingConfig", "Rank1Params", "RunConfig", "ShapeError",
    "SyntheticDatasetSpec", "UnsupportedModeError", "assign_columns", "bp_full",
    "codebook_bp_naive", "evaluate", "flops_estimate", "generate_dataset", "init_codebook",
    "jcf_pool", "jcf_shared_pool", "load_checkpoint", "load_config", "param_count",
    "rank1_pool", "recall_at_k", "save_checkpoint", "table1_rows", "train",
]


def __getattr__(name):
    # sklearn is only imported when the estimator is actually requested
    if name == "JCFPooling":
        from .estimator import JCFPooling
        return JCFPooling
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
