"""Command-line driver: generate instances, stream them, verify, audit memory.

Every command is seeded; identical seeds reproduce identical outputs. Exit
status is nonzero only when a hard invariant breaks (malformed inputs, bad
shapes, non-finite data, output sparsity violations) -- the probabilistic
error bound is reported, not enforced, by `verify`.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from .core import ProblemParams, mat_load, mat_store, spectral_norm_upper
from .engine import AttentionOutput, CrossWeights, StreamEngine, derive_dims
from .features import FeatureConfig, default_degree
from .oracle import evaluate, exact_attention, gen_instance, memory_audit
from .recovery import SparseColumn


def _add_accuracy_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--k-sparse", type=int, required=True, help="output sparsity target k")
    p.add_argument("--eps1", type=float, default=0.5, help="sparse-recovery accuracy")
    p.add_argument("--eps2", type=float, default=0.1, help="projection accuracy")
    p.add_argument("--delta", type=float, default=0.05, help="failure probability")
    p.add_argument("--degree", type=int, default=None, help="even Taylor degree (default from entry bound)")
    p.add_argument("--sketch", choices=("ams", "gaussian"), default="ams")
    p.add_argument("--seed", type=int, default=0)


def _build_params(args, n: int, d: int, b: float) -> tuple[ProblemParams, FeatureConfig]:
    params = ProblemParams(n=n, d=d, b=b, k=args.k_sparse,
                           eps1=args.eps1, eps2=args.eps2, delta=args.delta)
    g = args.degree if args.degree is not None else default_degree(max(b, 1e-9))
    return params, FeatureConfig(d, g)


def _write_output(out_dir: Path, output, report: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    t_path = out_dir / "T.csv"
    with open(t_path, "w") as fh:
        for c, col in enumerate(output.columns):
            for idx, val in col:
                fh.write(f"{c},{idx},{val!r}\n")
    report["output"] = str(t_path)
    with open(out_dir / "report.json", "w") as fh:
        json.dump(report, fh, sort_keys=True, indent=2)
        fh.write("\n")


def read_sparse_columns(path, n: int, d: int) -> np.ndarray:
    """Densify a T.csv written by `run` (lines: col,index,value)."""
    out = np.zeros((n, d))
    with open(path) as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            c, idx, val = line.split(",")
            c, idx = int(c), int(idx)
            if not (0 <= c < d and 0 <= idx < n):
                raise ValueError(f"{path}:{line_no}: out-of-range entry ({c}, {idx})")
            out[idx, c] = float(val)
    return out


def _cmd_gen(args) -> int:
    params = ProblemParams(n=args.n, d=args.d, b=args.b, k=args.k,
                           eps1=0.5, eps2=0.1, delta=0.05)
    q, k, v = gen_instance(params, args.seed, args.profile)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    mat_store(q, out / "Q.matf")
    mat_store(k, out / "K.matf")
    mat_store(v, out / "V.matf")
    print(f"wrote Q.matf K.matf V.matf under {out} (n={args.n}, d={args.d}, profile={args.profile})")
    return 0


def _run_common(args, engine: StreamEngine, feed, inputs: dict, v_mat) -> int:
    norm_bound = 1.0 / math.sqrt(engine.params.n)
    v_norm = spectral_norm_upper(v_mat)
    if v_norm > norm_bound * (1.0 + 1e-6):
        print(
            f"warning: spectral norm of V ~ {v_norm:.4g} exceeds 1/sqrt(n) = {norm_bound:.4g}; "
            "the error guarantee assumes the bound",
            file=sys.stderr,
        )
    t0 = time.perf_counter()
    feed()
    output = engine.finalize()
    elapsed = time.perf_counter() - t0
    audit = memory_audit(engine)
    k2 = 2 * engine.params.k
    if any(col.nnz > k2 for col in output.columns):
        print("hard invariant violated: decoded column exceeds 2k entries", file=sys.stderr)
        return 1
    report = {
        "params": engine.params.as_dict(),
        "degree": engine.cfg.g,
        "sketch": engine.sketch_kind,
        "seed": engine.seed,
        "dims": {f: getattr(engine.dims, f) for f in engine.dims.__slots__},
        "inputs": inputs,
        "memory": audit.sizes(),
        "v_norm_upper": v_norm,
        "seconds": elapsed,
        "diagnostics": output.diagnostics,
    }
    _write_output(Path(args.out), output, report)
    print(f"streamed n={engine.params.n} rows in {elapsed:.2f}s; report under {args.out}")
    return 0


def _cmd_run(args) -> int:
    q, k, v = mat_load(args.q), mat_load(args.k_mat), mat_load(args.v)
    if not (q.shape == k.shape == v.shape):
        print(f"shape mismatch: Q {q.shape}, K {k.shape}, V {v.shape}", file=sys.stderr)
        return 1
    n, d = q.shape
    b = max(np.abs(q).max(), np.abs(k).max())
    params, cfg = _build_params(args, n, d, b)
    engine = StreamEngine(params, cfg, args.seed, sketch=args.sketch)

    def feed():
        for i in range(n):
            engine.ingest_v_row(i, v[i])
        for i in range(n):
            engine.ingest_k_row(i, k[i])
        for i in range(n):
            engine.ingest_q_row(i, q[i])

    inputs = {"q": str(Path(args.q).resolve()), "k": str(Path(args.k_mat).resolve()),
              "v": str(Path(args.v).resolve()), "mode": "plain"}
    return _run_common(args, engine, feed, inputs, v)


def _cmd_run_cross(args) -> int:
    x1, x2 = mat_load(args.x1), mat_load(args.x2)
    weights = CrossWeights(mat_load(args.wq), mat_load(args.wk), mat_load(args.wv))
    if x1.shape != x2.shape:
        print(f"shape mismatch: X1 {x1.shape}, X2 {x2.shape}", file=sys.stderr)
        return 1
    n, d = x1.shape
    q = x1 @ weights.w_q
    k = x2 @ weights.w_k
    v = x2 @ weights.w_v
    b = max(np.abs(q).max(), np.abs(k).max())
    params, cfg = _build_params(args, n, d, b)
    engine = StreamEngine(params, cfg, args.seed, sketch=args.sketch, cross_weights=weights)

    def feed():
        for i in range(n):
            engine.ingest_x2_row(i, x2[i])
        for i in range(n):
            engine.ingest_x1_row(i, x1[i])

    inputs = {"x1": str(Path(args.x1).resolve()), "x2": str(Path(args.x2).resolve()),
              "wq": str(Path(args.wq).resolve()), "wk": str(Path(args.wk).resolve()),
              "wv": str(Path(args.wv).resolve()), "mode": "cross",
              "q": None, "k": None, "v": None}
    return _run_common(args, engine, feed, inputs, v)


def _cmd_verify(args) -> int:
    with open(args.run_report) as fh:
        report = json.load(fh)
    p = report["params"]
    params = ProblemParams(**p)
    cfg = FeatureConfig(params.d, report["degree"])
    inputs = report["inputs"]
    if inputs["mode"] == "cross":
        x1, x2 = mat_load(inputs["x1"]), mat_load(inputs["x2"])
        weights = CrossWeights(mat_load(inputs["wq"]), mat_load(inputs["wk"]), mat_load(inputs["wv"]))
        q, k, v = x1 @ weights.w_q, x2 @ weights.w_k, x2 @ weights.w_v
    else:
        q, k, v = mat_load(inputs["q"]), mat_load(inputs["k"]), mat_load(inputs["v"])
    oracle = exact_attention(q, k, v, cfg if args.oracle_mode == "full" else None)
    dense_t = read_sparse_columns(report["output"], params.n, params.d)
    cols = []
    for c in range(params.d):
        nz = np.nonzero(dense_t[:, c])[0]
        cols.append(SparseColumn(nz, dense_t[nz, c], params.n))
        if cols[-1].nnz > 2 * params.k:
            print("hard invariant violated: stored column exceeds 2k entries", file=sys.stderr)
            return 1
    err = evaluate(AttentionOutput(cols, []), oracle, params)
    row_sums = (np.exp(q @ k.T / params.d))
    row_sums = (row_sums / row_sums.sum(axis=1, keepdims=True)).sum(axis=1)
    if np.abs(row_sums - 1.0).max() > 1e-9:
        print("hard invariant violated: oracle rows do not sum to 1", file=sys.stderr)
        return 1
    print(err.table())
    out_path = Path(args.out) if args.out else Path(args.run_report).parent / "error_report.json"
    out_path.write_text(err.to_json() + "\n")
    print(f"error report written to {out_path}")
    return 0


def _cmd_bench_memory(args) -> int:
    n_list = [int(x) for x in args.n_list.split(",")]
    pin_n = args.pin_n if args.pin_n is not None else n_list[0]
    pin_params = ProblemParams(n=pin_n, d=args.d, b=args.b, k=args.k_sparse,
                               eps1=args.eps1, eps2=args.eps2, delta=args.delta)
    g = args.degree if args.degree is not None else default_degree(max(args.b, 1e-9))
    cfg = FeatureConfig(args.d, g)
    dims = derive_dims(pin_params, cfg)
    print(f"dims pinned at n={pin_n}: {dims}")
    reports = []
    for n in n_list:
        params = ProblemParams(n=n, d=args.d, b=args.b, k=args.k_sparse,
                               eps1=args.eps1, eps2=args.eps2, delta=args.delta)
        engine = StreamEngine(params, cfg, args.seed, sketch=args.sketch, dims=dims)
        rep = memory_audit(engine)
        reports.append(rep)
        print(f"\nn = {n}")
        print(rep.table())
    sizes = [r.sizes() for r in reports]
    if any(s != sizes[0] for s in sizes[1:]):
        print("hard invariant violated: state size varies with n", file=sys.stderr)
        return 1
    print("\nstate size is identical across all n values")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="streamattn",
                                 description="one-pass sublinear-space streaming attention")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a seeded (Q, K, V) instance")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--d", type=int, required=True)
    g.add_argument("--b", type=float, default=1.0)
    g.add_argument("--k", type=int, default=16)
    g.add_argument("--profile", choices=("uniform", "spiky"), default="spiky")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out-dir", required=True)
    g.set_defaults(func=_cmd_gen)

    r = sub.add_parser("run", help="stream Q/K/V matf files through the engine")
    r.add_argument("--q", required=True)
    r.add_argument("--k-mat", required=True)
    r.add_argument("--v", required=True)
    _add_accuracy_flags(r)
    r.add_argument("--out", required=True, help="output directory for T.csv + report.json")
    r.set_defaults(func=_cmd_run)

    rc = sub.add_parser("run-cross", help="stream X1/X2 with stored weights")
    rc.add_argument("--x1", required=True)
    rc.add_argument("--x2", required=True)
    rc.add_argument("--wq", required=True)
    rc.add_argument("--wk", required=True)
    rc.add_argument("--wv", required=True)
    _add_accuracy_flags(rc)
    rc.add_argument("--out", required=True)
    rc.set_defaults(func=_cmd_run_cross)

    vf = sub.add_parser("verify", help="recompute the oracle and report errors")
    vf.add_argument("--run-report", required=True)
    vf.add_argument("--oracle-mode", choices=("exact", "full"), default="exact",
                    help="'full' also computes the feature-kernel intermediate")
    vf.add_argument("--out", default=None)
    vf.set_defaults(func=_cmd_verify)

    bm = sub.add_parser("bench-memory", help="engine state size across n")
    bm.add_argument("--n-list", required=True, help="comma-separated lengths")
    bm.add_argument("--d", type=int, default=4)
    bm.add_argument("--b", type=float, default=1.0)
    bm.add_argument("--pin-n", type=int, default=None,
                    help="derive sketch dims at this n (default: first of n-list)")
    _add_accuracy_flags(bm)
    bm.set_defaults(func=_cmd_bench_memory)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
