"""Verification suites: factorized kernels vs. materialized oracles, gradients, cost model."""

import time

import numpy as np

from . import cost, linalg
from .codebook import Codebook
from .grad import FdConfig, central_difference, finite_diff_check
from .metric import mine_semi_hard, triplet_loss
from .pooling import (
    JcfParams,
    JcfSharedParams,
    Rank1Params,
    bp_full,
    codebook_bp_naive,
    first_order_pool,
    jcf_pool,
    jcf_shared_pool,
    project_so,
    rank1_pool,
)

SUITES = ("oracle", "grad", "cost", "metric")
ORACLE_TOL = 1e-10
GRAD_TOL = 1e-5


def max_relative_error(value, oracle):
    value = np.asarray(value, dtype=np.float64)
    oracle = np.asarray(oracle, dtype=np.float64)
    scale = max(float(np.max(np.abs(oracle))), np.finfo(float).tiny)
    return float(np.max(np.abs(value - oracle)) / scale)


def rank1_as_full(u, v):
    """Full projection whose column ``i`` is ``u_i (x) v_i``."""
    return np.stack([linalg.kron(u[i], v[i]) for i in range(u.shape[0])], axis=1)


def jcf_as_full(u_set, v_set):
    """``(Nd)^2 x D`` projection with ``w_i = p_i (x) q_i``, ``p_i = sum_j e_j (x) u_{i,j}``."""
    cols = []
    for i in range(u_set.shape[0]):
        p = u_set[i].T.reshape(-1)
        q = v_set[i].T.reshape(-1)
        cols.append(linalg.kron(p, q))
    return np.stack(cols, axis=1)


def random_instance(rng, max_d=6, max_n=4, max_out=4, max_m=8):
    d = int(rng.integers(1, max_d + 1))
    n = int(rng.integers(1, max_n + 1))
    r = int(rng.integers(1, n + 1))
    out = int(rng.integers(1, max_out + 1))
    m = int(rng.integers(1, max_m + 1))
    temperature = float(rng.uniform(0.05, 2.0))
    return {
        "x": rng.standard_normal((d, m)),
        "codebook": Codebook(linalg.normalize_rows(rng.standard_normal((n, d))), "soft", temperature),
        "u": rng.standard_normal((out, d)),
        "v": rng.standard_normal((out, d)),
        "u_shared": rng.standard_normal((out, d, r)),
        "v_shared": rng.standard_normal((out, d, r)),
        "a": rng.standard_normal((n, r)),
        "b": rng.standard_normal((n, r)),
    }


def oracle_suite(n_instances=100, seed=0):
    """Max relative error of each factorized kernel against its materialized oracle."""
    rng = np.random.default_rng(seed)
    errors = {"bp_full~vec(XX^T)": 0.0, "rank1~project_so": 0.0,
              "jcf~codebook_bp_naive": 0.0, "jcf_shared~jcf": 0.0}
    for _ in range(n_instances):
        inst = random_instance(rng)
        x, cb = inst["x"], inst["codebook"]
        e = errors
        e["bp_full~vec(XX^T)"] = max(e["bp_full~vec(XX^T)"],
                                     max_relative_error(bp_full(x), (x @ x.T).reshape(-1)))
        z = rank1_pool(x, Rank1Params(inst["u"], inst["v"]))
        e["rank1~project_so"] = max(e["rank1~project_so"], max_relative_error(
            z, project_so(x, rank1_as_full(inst["u"], inst["v"]))))
        shared = JcfSharedParams(inst["u_shared"], inst["v_shared"], inst["a"], inst["b"])
        per_word = shared.materialize()
        z_jcf = jcf_pool(x, cb, per_word)
        e["jcf~codebook_bp_naive"] = max(e["jcf~codebook_bp_naive"], max_relative_error(
            z_jcf, codebook_bp_naive(x, cb, jcf_as_full(per_word.u_set, per_word.v_set))))
        e["jcf_shared~jcf"] = max(e["jcf_shared~jcf"],
                                  max_relative_error(jcf_shared_pool(x, cb, shared), z_jcf))
    return {"instances": n_instances, "tolerance": ORACLE_TOL, "errors": errors,
            "passed": all(v < ORACLE_TOL for v in errors.values())}


def grad_suite(n_seeds=20, seed=0):
    """Finite-difference check of the full JCF-N-R chain (and JCF-N) over many seeds."""
    per_tensor = {}
    seeds = [seed + k for k in range(n_seeds)]
    for s in seeds:
        for kernel in ("jcf_shared", "jcf"):
            report = finite_diff_check(FdConfig(kernel=kernel), seed=s)
            for name, err in report.errors.items():
                key = f"{kernel}.{name}"
                per_tensor[key] = max(per_tensor.get(key, 0.0), err)
    linear = max(finite_diff_check(FdConfig(path="linear"), seed=s).max_error for s in seeds)
    return {"seeds": n_seeds, "tolerance": GRAD_TOL, "errors": per_tensor,
            "linear_path_error": linear,
            "passed": all(v < GRAD_TOL for v in per_tensor.values()) and linear < 1e-7}


def _counted(fn):
    with linalg.count_multiplies() as counter:
        fn()
    return counter.counts


def measured_stages(cfg, m=3, seed=0):
    """Run the kernel for ``cfg`` on ``m`` random locations; multiplies per location by stage."""
    rng = np.random.default_rng(seed)
    d, D, N, R = cfg.d, cfg.D, cfg.N, cfg.R
    if cfg.method == "baseline":
        x = rng.standard_normal((cfg.d_in, m))
        counts = _counted(lambda: first_order_pool(x, rng.standard_normal((cfg.d_in, D))))
    else:
        x = rng.standard_normal((d, m))
        cb = Codebook(linalg.normalize_rows(rng.standard_normal((max(N, 1), d))))
        if cfg.method == "bp":
            w = rng.standard_normal((d * d, D))
            counts = _counted(lambda: project_so(x, w))
        elif cfg.method == "bp_codebook":
            w = rng.standard_normal(((N * d) ** 2, D))
            counts = _counted(lambda: codebook_bp_naive(x, cb, w))
        elif cfg.method == "factorized":
            p = Rank1Params(rng.standard_normal((D, d)), rng.standard_normal((D, d)))
            counts = _counted(lambda: rank1_pool(x, p))
        elif cfg.method == "jcf":
            p = JcfParams(rng.standard_normal((D, d, N)), rng.standard_normal((D, d, N)))
            counts = _counted(lambda: jcf_pool(x, cb, p))
        else:
            p = JcfSharedParams(rng.standard_normal((D, d, R)), rng.standard_normal((D, d, R)),
                                rng.standard_normal((N, R)), rng.standard_normal((N, R)))
            counts = _counted(lambda: jcf_shared_pool(x, cb, p))
    return {k: v // m for k, v in counts.items() if v}, {k: v % m for k, v in counts.items()}


SMALL_CONFIGS = [
    cost.PoolingConfig("baseline", 7, 0, 3),
    cost.PoolingConfig("bp", 7, 4, 3),
    cost.PoolingConfig("bp_codebook", 7, 3, 2, 2),
    cost.PoolingConfig("factorized", 7, 5, 3),
    cost.PoolingConfig("jcf", 7, 5, 3, 4),
    cost.PoolingConfig("jcf_shared", 7, 5, 3, 8, 2),
    cost.PoolingConfig("jcf_shared", 7, 5, 3, 8, 8),
]


def cost_suite():
    """Reference parameter table, instrumented multiply counts, and the R/N scaling claim."""
    rows = cost.table1_rows()
    table_ok = all(row["millions"] == row["printed"] for row in rows)
    count_mismatches = []
    for cfg in SMALL_CONFIGS:
        measured, remainder = measured_stages(cfg)
        expected = {k: v for k, v in cost.stage_multiplies(cfg).items() if v}
        if measured != expected or any(remainder.values()):
            count_mismatches.append({"config": cfg.__dict__, "measured": measured,
                                     "expected": expected})
    ratio_ok = True
    for n, r in ((8, 2), (8, 4), (16, 4), (4, 1)):
        jcf = cost.PoolingConfig("jcf", 7, 5, 3, n)
        shared = cost.PoolingConfig("jcf_shared", 7, 5, 3, n, r)
        proj_jcf = measured_stages(jcf)[0]["projector"]
        proj_shared = measured_stages(shared)[0]["projector"]
        ratio_ok &= proj_shared * n == proj_jcf * r
        fixed = 7 * 5 + n * 5
        ratio_ok &= (cost.param_count(shared) - fixed - 2 * n * r) * n == \
            (cost.param_count(jcf) - fixed) * r
    return {"table1": rows, "table1_ok": table_ok, "count_mismatches": count_mismatches,
            "ratio_ok": bool(ratio_ok),
            "passed": table_ok and not count_mismatches and bool(ratio_ok)}


def metric_suite(n_batches=10, seed=0, kink=1e-3):
    """Triplet-loss gradient against central differences away from hinge kinks."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_batches):
        labels = np.repeat(np.arange(4), 2)
        emb = linalg.normalize_rows(rng.standard_normal((8, 5)))
        triplets = mine_semi_hard(emb, labels)
        idx = triplets.triplets
        a, p, n = emb[idx[:, 0]], emb[idx[:, 1]], emb[idx[:, 2]]
        act = np.sum((a - p) ** 2, 1) - np.sum((a - n) ** 2, 1) + 0.1
        if np.any(np.abs(act) <= kink):
            continue
        _, grad = triplet_loss(emb, triplets)
        numeric = central_difference(lambda: triplet_loss(emb, triplets)[0], emb, 1e-6)
        worst = max(worst, float(np.max(np.abs(grad - numeric))))
    return {"batches": n_batches, "max_abs_error": worst, "tolerance": 1e-6,
            "passed": worst < 1e-6}


def run_suites(names=SUITES, seed=0):
    report = {}
    for name in names:
        start = time.perf_counter()
        if name == "oracle":
            result = oracle_suite(seed=seed)
        elif name == "grad":
            result = grad_suite(seed=seed)
        elif name == "cost":
            result = cost_suite()
        elif name == "metric":
            result = metric_suite(seed=seed)
        else:
            raise ValueError(f"unknown suite {name!r}")
        result["seconds"] = round(time.perf_counter() - start, 3)
        report[name] = result
    return report

