"""Command line entry point: ``fkdrift {run,compare,reference,aggregate}``."""

from __future__ import annotations

import argparse
import csv
import glob
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .config import ConfigError, RunConfig, design_flags
from .pipeline import RunResult, execute, reference_samples
from .reference import write_samples_csv
from .smc import NumericalFailure

OUT_ENV = "FKDRIFT_OUT"
METRIC_COLUMNS = ["delta_nll", "mmd2", "swd", "mean_l2", "cov_frobenius"]
EXIT_CONFIG, EXIT_NUMERIC = 2, 3

log = logging.getLogger("fkdrift")


def _out_dir(args, cfg=None):
    if args.out:
        return args.out
    if cfg is not None and cfg.raw.get("output"):
        return cfg.raw["output"]
    return os.environ.get(OUT_ENV, "fkdrift_out")


def _load(args) -> RunConfig:
    cfg = RunConfig.load(args.config)
    over = {}
    if args.seeds:
        over["seeds"] = [int(s) for s in args.seeds]
    if args.deterministic:
        over["deterministic"] = True
    return cfg.with_overrides(**over) if over else cfg


def _dump_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_trace(path, result: RunResult):
    with open(path, "w") as fh:
        for j, tr in enumerate(result.traces):
            for row in tr.rows():
                if len(result.traces) > 1:
                    row = {"round": j, **row}
                fh.write(json.dumps(row) + "\n")


def write_run_outputs(out, result: RunResult):
    os.makedirs(out, exist_ok=True)
    s = result.seed
    write_samples_csv(os.path.join(out, f"final_samples_{s}.csv"), result.positions, result.weights)
    write_trace(os.path.join(out, f"trace_{s}.jsonl"), result)
    _dump_json(os.path.join(out, f"metrics_{s}.json"),
               {"method": result.method.value, "seed": s, **result.metrics})


def write_meta(out, cfg: RunConfig, extra=None):
    meta = {"config": cfg.to_dict(), "config_hash": cfg.hash(), "version": __version__,
            "flags": design_flags(cfg)}
    if extra:
        meta["meta"] = extra
    _dump_json(os.path.join(out, "run_meta.json"), meta)


def _job(payload):
    raw, source, seed, method, threads = payload
    cfg = RunConfig.from_dict(raw, source)
    with threadpool_limits(limits=threads):
        return execute(cfg, seed, method)


def run_seeds(cfg: RunConfig, method, workers, blas_threads):
    jobs = [(cfg.to_dict(), cfg.source, s, method, blas_threads) for s in cfg.seeds]
    if workers <= 1 or len(jobs) == 1:
        return [_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_job, jobs))


def aggregate_rows(rows, key="method"):
    """Group metric dicts by ``key`` and emit ``<metric>_mean``/``<metric>_std`` columns."""
    groups = {}
    for r in rows:
        groups.setdefault(r.get(key, ""), []).append(r)
    out = []
    for name, items in groups.items():
        row = {key: name, "n_seeds": len(items)}
        for col in METRIC_COLUMNS:
            vals = [float(it[col]) for it in items if col in it]
            if vals:
                row[f"{col}_mean"] = float(np.mean(vals))
                row[f"{col}_std"] = float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0
        out.append(row)
    return out


def write_table(path, rows):
    cols = []
    for r in rows:
        cols += [c for c in r if c not in cols]
    with open(path, "w", newline="") as fh:
        fh.write("# mmd2 is the raw squared MMD (RBF kernel, random Fourier features)\n")
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        for r in rows:
            w.writerow({k: (f"{v:.6g}" if isinstance(v, float) else v) for k, v in r.items()})


def cmd_run(args):
    cfg = _load(args)
    out = _out_dir(args, cfg)
    results = run_seeds(cfg, None, args.threads, 1 if args.deterministic else None)
    for res in results:
        write_run_outputs(out, res)
    write_meta(out, cfg, {"wall_time": {r.seed: sum(t.wall_time for t in r.traces) for r in results}})
    if len(results) > 1:
        write_table(os.path.join(out, "aggregate.csv"),
                    aggregate_rows([{"method": r.method.value, **r.metrics} for r in results]))
    return 0


def cmd_compare(args):
    cfg = _load(args)
    out = _out_dir(args, cfg)
    rows, table = [], []
    traces_path = os.path.join(out, "compare_traces.csv")
    trace_rows = []
    for method in cfg.methods:
        results = run_seeds(cfg, method, args.threads, 1 if args.deterministic else None)
        sub = os.path.join(out, method.value)
        for res in results:
            write_run_outputs(sub, res)
            rows.append({"method": method.value, "seed": res.seed, **res.metrics})
            for k, row in enumerate(res.trace.rows()):
                trace_rows.append({"method": method.value, "seed": res.seed, "step": k, "t": row["t"],
                                   "ess": row["ess"], "var_phi": row["var_phi"],
                                   "var_g": float(res.trace.var_g[k])})
        table += aggregate_rows([{"method": method.value, **r.metrics} for r in results])
    os.makedirs(out, exist_ok=True)
    write_table(os.path.join(out, "compare.csv"), table)
    write_table(os.path.join(out, "compare_per_seed.csv"), rows)
    write_table(traces_path, trace_rows)
    write_meta(out, cfg, {"methods": [m.value for m in cfg.methods]})
    for r in table:
        print(r["method"], " ".join(f"{c}={r.get(c + '_mean', float('nan')):.4g}" for c in METRIC_COLUMNS))
    return 0


def cmd_reference(args):
    cfg = _load(args)
    out = _out_dir(args, cfg)
    os.makedirs(out, exist_ok=True)
    m = cfg.raw["metrics"]
    cache = m["cache_dir"] or os.path.join(out, "reference")
    for seed in cfg.seeds:
        target = cfg.target(seed)
        _, _, path = reference_samples(target, int(m["reference_size"]),
                                       int(m["reference_seed_offset"]) + seed, cache)
        print(path)
    return 0


def cmd_aggregate(args):
    out = _out_dir(args)
    files = sorted(glob.glob(os.path.join(out, "**", "metrics_*.json"), recursive=True))
    if not files:
        raise ConfigError(f"no metrics_*.json files under {out}")
    rows = []
    for f in files:
        with open(f) as fh:
            rows.append(json.load(fh))
    table = aggregate_rows(rows)
    write_table(os.path.join(out, "aggregate.csv"), table)
    for r in table:
        print(r["method"], " ".join(f"{c}={r.get(c + '_mean', float('nan')):.4g}" for c in METRIC_COLUMNS))
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="fkdrift", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    for name, fn, needs_cfg in [("run", cmd_run, True), ("compare", cmd_compare, True),
                                ("reference", cmd_reference, True), ("aggregate", cmd_aggregate, False)]:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=needs_cfg, help="YAML run config")
        sp.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./fkdrift_out)")
        sp.add_argument("--seeds", nargs="+", type=int, help="override engine.seeds")
        sp.add_argument("--threads", type=int, default=1, help="worker processes across seeds")
        sp.add_argument("--deterministic", action="store_true", help="single-threaded BLAS, fixed reductions")
        sp.add_argument("-v", "--verbose", action="store_true")
        sp.set_defaults(func=fn)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
