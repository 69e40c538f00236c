"""Command-line entry point: ``jcfpool {params,check,train,eval,bench}``."""

import argparse
import json
import sys
import time
from pathlib import Path

from .exceptions import JcfError, NumericError

EXIT_OK, EXIT_INVALID, EXIT_SUITE, EXIT_NUMERIC = 0, 1, 2, 3
REPORT_SCHEMA = "jcfpool.report/1"

# Full-scale optimizer recipe (tiny step, large batch); the desk defaults use a much
# larger step so the small synthetic set converges within a few hundred steps.
PRESETS = {
    "full-scale": {"optim.lr": 1e-5, "optim.batch_size": 64, "optim.margin": 0.1},
    "desk": {},
}

ABLATION_CODEBOOK = [
    ("Baseline", {"pooling.method": "baseline"}),
    ("Factorized", {"pooling.method": "factorized"}),
    ("JCF-8", {"pooling.method": "jcf", "pooling.n_words": 8}),
    ("JCF-8-4", {"pooling.method": "jcf_shared", "pooling.n_words": 8, "pooling.rank": 4}),
]


def _write_json(path, payload):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _report(kind, **body):
    return {"schema": REPORT_SCHEMA, "kind": kind, **body}


def _table(header, rows):
    widths = [max(len(str(h)), *(len(str(r[i])) for r in rows)) for i, h in enumerate(header)]
    lines = ["  ".join(str(h).ljust(w) for h, w in zip(header, widths))]
    lines += ["  ".join(str(c).ljust(w) for c, w in zip(row, widths)) for row in rows]
    return "\n".join(lines)


# -- params --------------------------------------------------------------------------


def cmd_params(args):
    from . import cost

    if args.table1:
        rows = cost.table1_rows()
        payload = _report("params", table1=True, rows=rows,
                          matches_printed=all(r["millions"] == r["printed"] for r in rows))
        text = _table(["column", "params", "millions", "printed"],
                      [(r["label"], r["params"], r["millions"], r["printed"]) for r in rows])
    else:
        if args.method is None:
            raise _usage("params needs --table1 or --method")
        cfg = cost.PoolingConfig(args.method, args.d_in, args.d, args.D, args.n, args.r)
        report = cost.flops_estimate(cfg)
        row = {"method": cfg.method, "d_in": cfg.d_in, "d": cfg.d, "D": cfg.D, "N": cfg.N,
               "R": cfg.R, "params": report.param_count,
               "millions": cost.round_millions(report.param_count),
               "flops_per_location": report.flops_per_location,
               "peak_intermediate": report.peak_intermediate, "stages": report.stages}
        payload = _report("params", table1=False, rows=[row])
        text = _table(["method", "params", "millions", "flops/location", "peak"],
                      [(row["method"], row["params"], row["millions"],
                        row["flops_per_location"], row["peak_intermediate"])])
    print(json.dumps(payload, indent=2) if args.json else text)
    return EXIT_OK


# -- check ---------------------------------------------------------------------------


def cmd_check(args):
    from . import checks
    from .harness import check_params_finite, load_checkpoint

    payload = _report("check", seed=args.seed)
    if args.params:
        # a checkpoint handed in for inspection must be finite before anything runs on it
        check_params_finite(load_checkpoint(args.params).params)
        payload["params_file"] = str(args.params)
    suites = args.suite or list(checks.SUITES)
    results = checks.run_suites(suites, seed=args.seed)
    payload["suites"] = results
    payload["passed"] = all(r["passed"] for r in results.values())
    if args.output_dir:
        _write_json(Path(args.output_dir) / "report.json", payload)
    for name, result in results.items():
        status = "PASS" if result["passed"] else "FAIL"
        print(f"{status}  {name:<7} {_suite_summary(name, result)}  ({result['seconds']} s)")
    if args.json:
        print(json.dumps(payload, indent=2))
    return EXIT_OK if payload["passed"] else EXIT_SUITE


def _suite_summary(name, result):
    if name == "oracle":
        return f"max rel err {max(result['errors'].values()):.2e} over {result['instances']} instances"
    if name == "grad":
        return (f"max rel err {max(result['errors'].values()):.2e} over {result['seeds']} seeds, "
                f"linear path {result['linear_path_error']:.2e}")
    if name == "cost":
        return (f"table1 {'ok' if result['table1_ok'] else 'MISMATCH'}, "
                f"{len(result['count_mismatches'])} count mismatches, "
                f"R/N ratio {'ok' if result['ratio_ok'] else 'BROKEN'}")
    return f"max abs err {result['max_abs_error']:.2e}"


# -- train / eval --------------------------------------------------------------------


def _run_config(args, extra=None):
    from .config import load_config

    overrides = []
    preset = PRESETS[args.preset] if args.preset else {}
    overrides += [f"{k}={v}" for k, v in preset.items()]
    overrides += list(args.set or [])
    # model settings fixed by an ablation row take precedence over user overrides
    overrides += [f"{k}={v}" for k, v in (extra or {}).items()]
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if args.output_dir is not None:
        overrides.append(f"output_dir={args.output_dir}")
    return load_config(args.config, overrides)


def _train_one(cfg, out_dir, write_log=True):
    from .harness import SyntheticDatasetSpec, evaluate, generate_dataset, save_checkpoint, train

    out_dir.mkdir(parents=True, exist_ok=True)
    dataset = generate_dataset(SyntheticDatasetSpec.from_config(cfg))
    result = train(cfg, dataset, log_path=out_dir / "train.log.jsonl" if write_log else None)
    save_checkpoint(out_dir / "checkpoint.bin", result.params, cfg, result.step, result.epoch)
    metrics = evaluate(result.spec, result.params, dataset, cfg.eval.ks)
    return result, metrics


def cmd_train(args):
    from . import model as model_lib

    if args.ablation:
        return _ablation(args)
    cfg = _run_config(args)
    out_dir = Path(cfg.output_dir)
    result, metrics = _train_one(cfg, out_dir)
    losses = [r["loss"] for r in result.log]
    payload = _report("train", config=cfg.to_flat(), config_hash=cfg.hash(),
                      steps=result.step, epoch=result.epoch,
                      n_params=model_lib.param_total(result.params),
                      first_loss=losses[0] if losses else None,
                      final_loss=losses[-1] if losses else None, eval=metrics.to_dict())
    _write_json(out_dir / "report.json", payload)
    print(f"trained {cfg.pooling.method} for {result.step} steps; checkpoint at "
          f"{out_dir / 'checkpoint.bin'}")
    print(_recall_table(metrics))
    return EXIT_OK


def _ablation(args):
    from . import cost
    from . import model as model_lib

    if args.ablation != "codebook":
        raise _usage(f"unknown ablation {args.ablation!r}")
    base = _run_config(args)
    root = Path(base.output_dir)
    rows = []
    for label, overrides in ABLATION_CODEBOOK:
        cfg = _run_config(args, overrides)
        cfg.output_dir = str(root / label)
        result, metrics = _train_one(cfg, Path(cfg.output_dir))
        p = cfg.pooling
        pc = cost.PoolingConfig(p.method, cfg.dataset.raw_dim,
                                0 if p.method == "baseline" else p.reduced_dim, p.out_dim,
                                p.n_words if p.method in ("jcf", "jcf_shared") else 0,
                                p.rank if p.method == "jcf_shared" else 0)
        rows.append({"label": label, "method": p.method,
                     "params": model_lib.param_total(result.params),
                     "params_closed_form": cost.param_count(pc),
                     "flops_per_location": cost.flops_estimate(pc).flops_per_location,
                     "recall_at": metrics.to_dict()["recall_at"]})
    payload = _report("ablation", ablation="codebook", seed=base.seed, rows=rows)
    _write_json(root / "report.json", payload)
    ks = [str(k) for k in base.eval.ks]
    print(_table(["model", "params", "flops/location"] + [f"R@{k}" for k in ks],
                 [[r["label"], r["params"], r["flops_per_location"]]
                  + [f"{r['recall_at'][k]:.3f}" for k in ks] for r in rows]))
    return EXIT_OK


def _recall_table(metrics):
    rows = [(k, f"{v:.4f}") for k, v in metrics.recall_at.items()]
    text = _table(["K", "Recall@K"], rows)
    for k, used in metrics.clamped.items():
        text += f"\nK={k} clamped to gallery size {used}"
    return text


def cmd_eval(args):
    from .config import RunConfig
    from .harness import (
        SyntheticDatasetSpec,
        check_params_finite,
        evaluate,
        generate_dataset,
        load_checkpoint,
    )
    from .model import ModelSpec

    ckpt = load_checkpoint(args.checkpoint)
    check_params_finite(ckpt.params)
    cfg = RunConfig.from_flat(ckpt.config).validate()
    ks = args.k or cfg.eval.ks
    dataset = generate_dataset(SyntheticDatasetSpec.from_config(cfg))
    spec = ModelSpec.from_config(cfg, d_in=dataset.features.shape[1])
    metrics = evaluate(spec, ckpt.params, dataset, ks)
    payload = _report("eval", checkpoint=str(args.checkpoint), config_hash=ckpt.config_hash,
                      eval=metrics.to_dict())
    if args.output_dir:
        _write_json(Path(args.output_dir) / "report.json", payload)
    print(json.dumps(payload, indent=2) if args.json else _recall_table(metrics))
    return EXIT_OK


# -- bench ---------------------------------------------------------------------------


BENCH_SWEEP = [
    ("factorized", 0, 0),
    ("jcf", 4, 0), ("jcf", 8, 0), ("jcf", 16, 0),
    ("jcf_shared", 8, 2), ("jcf_shared", 8, 4), ("jcf_shared", 16, 4), ("jcf_shared", 16, 8),
]


def cmd_bench(args):
    import numpy as np

    from . import cost, linalg
    from .codebook import Codebook
    from .pooling import JcfParams, JcfSharedParams, Rank1Params, jcf_pool, jcf_shared_pool, rank1_pool

    rng = np.random.default_rng(args.seed)
    d, D, m = args.d, args.D, args.m
    x = rng.standard_normal((d, m))
    rows = []
    for method, n, r in BENCH_SWEEP:
        cfg = cost.PoolingConfig(method, args.d_in, d, D, n, r)
        if method == "factorized":
            p = Rank1Params(rng.standard_normal((D, d)), rng.standard_normal((D, d)))
            run = lambda: rank1_pool(x, p)  # noqa: E731
        else:
            cb = Codebook(linalg.normalize_rows(rng.standard_normal((n, d))))
            if method == "jcf":
                p = JcfParams(rng.standard_normal((D, d, n)), rng.standard_normal((D, d, n)))
                run = lambda: jcf_pool(x, cb, p)  # noqa: E731
            else:
                p = JcfSharedParams(rng.standard_normal((D, d, r)), rng.standard_normal((D, d, r)),
                                    rng.standard_normal((n, r)), rng.standard_normal((n, r)))
                run = lambda: jcf_shared_pool(x, cb, p)  # noqa: E731
        with linalg.count_multiplies() as counter:
            run()
        times = []
        for _ in range(args.repeat):
            start = time.perf_counter()
            run()
            times.append(time.perf_counter() - start)
        est = cost.flops_estimate(cfg)
        rows.append({"method": method, "N": n, "R": r, "params": est.param_count,
                     "flops_per_location": est.flops_per_location,
                     "measured_per_location": counter.total // m,
                     "seconds": float(np.median(times))})
    payload = _report("bench", d_in=args.d_in, d=d, D=D, locations=m, rows=rows)
    if args.output_dir:
        _write_json(Path(args.output_dir) / "report.json", payload)
    if args.json:
        print(json.dumps(payload, indent=2))
    elif args.csv:
        print(",".join(rows[0]))
        for row in rows:
            print(",".join(str(v) for v in row.values()))
    else:
        print(_table(["method", "N", "R", "params", "flops/loc", "measured/loc", "ms"],
                     [(r["method"], r["N"], r["R"], r["params"], r["flops_per_location"],
                       r["measured_per_location"], f"{1e3 * r['seconds']:.2f}") for r in rows]))
    return EXIT_OK


# -- parser --------------------------------------------------------------------------


class _UsageError(JcfError):
    pass


def _usage(message):
    return _UsageError(message)


def build_parser():
    parser = argparse.ArgumentParser(prog="jcfpool", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("params", help="parameter counts from the cost model")
    p.add_argument("--table1", action="store_true", help="the 12-column comparison preset")
    p.add_argument("--method", choices=("baseline", "bp", "bp_codebook", "factorized", "jcf",
                                        "jcf_shared"))
    p.add_argument("--d-in", type=int, default=2048)
    p.add_argument("--d", type=int, default=256)
    p.add_argument("--D", type=int, default=512)
    p.add_argument("--n", type=int, default=0, help="codebook size N")
    p.add_argument("--r", type=int, default=0, help="shared rank R")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_params)

    c = sub.add_parser("check", help="oracle, gradient, cost and metric verification suites")
    c.add_argument("--suite", action="append", choices=("oracle", "grad", "cost", "metric"))
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--params", help="checkpoint whose tensors must be finite")
    c.add_argument("--output-dir")
    c.add_argument("--json", action="store_true")
    c.set_defaults(func=cmd_check)

    t = sub.add_parser("train", help="train on the synthetic dataset")
    t.add_argument("--config", help="JSON config file (flat dotted keys or nested)")
    t.add_argument("--set", action="append", metavar="KEY=VALUE", help="config override")
    t.add_argument("--seed", type=int)
    t.add_argument("--output-dir")
    t.add_argument("--preset", choices=sorted(PRESETS))
    t.add_argument("--ablation", choices=("codebook",))
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="Recall@K of a checkpoint on its synthetic test split")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--k", type=int, nargs="+")
    e.add_argument("--output-dir")
    e.add_argument("--json", action="store_true")
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("bench", help="multiply counts and wall time across a method sweep")
    b.add_argument("--d-in", type=int, default=2048)
    b.add_argument("--d", type=int, default=64)
    b.add_argument("--D", type=int, default=64)
    b.add_argument("--m", type=int, default=49, help="locations per feature set")
    b.add_argument("--repeat", type=int, default=5)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--output-dir")
    fmt = b.add_mutually_exclusive_group()
    fmt.add_argument("--json", action="store_true")
    fmt.add_argument("--csv", action="store_true")
    b.set_defaults(func=cmd_bench)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except NumericError as exc:
        where = f" (tensor {exc.tensor})" if getattr(exc, "tensor", None) else ""
        print(f"numeric error{where}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (JcfError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
