"""Closed-form parameter and multiply counts for every pooling method.

Parameter counts include the reduction layer (``d_in x d``), the codebook
(``N x d``) and the recombination matrices, and no biases; with
``d_in=2048, d=256, D=512`` they give the reference 12-column comparison (``--table1``).

Multiply counts are per location and follow the evaluation order of the
kernels in :mod:`jcfpool.pooling`, stage by stage. The assignment ``h(x)``
and the reduction layer are not included.
"""

from dataclasses import dataclass, field

from .exceptions import InputError

METHODS = ("baseline", "bp", "bp_codebook", "factorized", "jcf", "jcf_shared")


@dataclass(frozen=True)
class PoolingConfig:
    method: str
    d_in: int
    d: int = 0
    D: int = 0
    N: int = 0
    R: int = 0

    def validate(self):
        if self.method not in METHODS:
            raise InputError(f"unknown method {self.method!r}; expected one of {METHODS}")
        for name in ("d_in", "d", "D", "N", "R"):
            value = getattr(self, name)
            if isinstance(value, bool) or int(value) != value or value < 0:
                raise InputError(f"{name} must be a non-negative integer, got {value!r}")
        if self.d_in < 1 or self.D < 1:
            raise InputError("d_in and D must be >= 1")
        if self.method != "baseline" and self.d < 1:
            raise InputError(f"{self.method} needs d >= 1")
        if self.method in ("bp_codebook", "jcf", "jcf_shared") and self.N < 1:
            raise InputError(f"{self.method} needs a codebook size N >= 1")
        if self.method == "jcf_shared" and not 1 <= self.R <= self.N:
            raise InputError(f"jcf_shared needs 1 <= R <= N, got R={self.R}, N={self.N}")
        return self


@dataclass(frozen=True)
class CostReport:
    param_count: int
    flops_per_location: int
    peak_intermediate: int
    stages: dict = field(default_factory=dict, compare=False)


def param_count(cfg):
    cfg.validate()
    d_in, d, D, N, R = cfg.d_in, cfg.d, cfg.D, cfg.N, cfg.R
    reduction = d_in * d
    if cfg.method == "baseline":
        return d_in * D
    if cfg.method == "bp":
        return reduction + d * d * D
    if cfg.method == "bp_codebook":
        return reduction + N * d * d * D + N * d
    if cfg.method == "factorized":
        return reduction + 2 * d * D
    if cfg.method == "jcf":
        return reduction + 2 * N * d * D + N * d
    return reduction + 2 * R * d * D + 2 * N * R + N * d


def stage_multiplies(cfg):
    """Multiplies per location for each kernel stage."""
    cfg.validate()
    d_in, d, D, N, R = cfg.d_in, cfg.d, cfg.D, cfg.N, cfg.R
    if cfg.method == "baseline":
        return {"projector": d_in * D}
    if cfg.method == "bp":
        return {"encode": d * d, "projector": d * d * D}
    if cfg.method == "bp_codebook":
        lifted = (N * d) ** 2
        return {"encode": N * d + lifted, "projector": lifted * D}
    if cfg.method == "factorized":
        return {"projector": 2 * d * D, "combine": D}
    if cfg.method == "jcf":
        return {"projector": 2 * D * N * d, "combine": 2 * D * N + D}
    return {"recombine": 2 * N * R, "projector": 2 * D * R * d, "combine": 2 * D * R + D}


def peak_intermediate(cfg):
    """Longest temporary vector when each output dimension is evaluated in turn."""
    cfg.validate()
    d_in, d, D, N, R = cfg.d_in, cfg.d, cfg.D, cfg.N, cfg.R
    if cfg.method == "baseline":
        return max(d_in, D)
    if cfg.method == "bp":
        return max(d * d, D)
    if cfg.method == "bp_codebook":
        return max((N * d) ** 2, D)
    if cfg.method == "factorized":
        return max(d, D)
    if cfg.method == "jcf":
        return max(d, N, D)
    return max(d, N, R, D)


def flops_estimate(cfg):
    stages = stage_multiplies(cfg)
    return CostReport(
        param_count=param_count(cfg),
        flops_per_location=sum(stages.values()),
        peak_intermediate=peak_intermediate(cfg),
        stages=stages,
    )


TABLE1_DIMS = {"d_in": 2048, "d": 256, "D": 512}

# (column label, method, N, R, printed parameter count in millions)
TABLE1_COLUMNS = [
    ("Baseline", "baseline", 0, 0, 1.0),
    ("BP", "bp", 0, 0, 34.0),
    ("BP-4", "bp_codebook", 4, 0, 135.0),
    ("Factorized", "factorized", 0, 0, 0.8),
    ("JCF-4", "jcf", 4, 0, 1.6),
    ("JCF-16-4", "jcf_shared", 16, 4, 1.6),
    ("JCF-16-8", "jcf_shared", 16, 8, 2.6),
    ("JCF-16-16", "jcf_shared", 16, 16, 4.7),
    ("JCF-32-4", "jcf_shared", 32, 4, 1.6),
    ("JCF-32-8", "jcf_shared", 32, 8, 2.6),
    ("JCF-32-16", "jcf_shared", 32, 16, 4.7),
    ("JCF-32-32", "jcf_shared", 32, 32, 8.9),
]


def round_millions(count):
    """Round to 0.1M, except whole millions above 10M as printed in the table."""
    millions = count / 1e6
    return float(round(millions)) if millions >= 10 else round(millions, 1)


def table1_rows(d_in=TABLE1_DIMS["d_in"], d=TABLE1_DIMS["d"], D=TABLE1_DIMS["D"]):
    rows = []
    for label, method, n, r, printed in TABLE1_COLUMNS:
        cfg = PoolingConfig(method, d_in, 0 if method == "baseline" else d, D, n, r)
        count = param_count(cfg)
        rows.append({"label": label, "method": method, "N": n, "R": r, "params": count,
                     "millions": round_millions(count), "printed": printed})
    return rows
