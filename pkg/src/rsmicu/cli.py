"""Command-line interface.

Subcommands: simulate, fit, decode, calibrate, emit-chart,
bench-samplers. Every command is deterministic given its inputs and the
seed, writes canonical JSON or CSV, and exits nonzero with a message on
any validation failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import subprocess
import sys

import numpy as np

from . import io
from .engine import (
    ChainConfig,
    chain_medians,
    params_from_medians,
    run_chain,
    run_decode,
)
from .evaluate import (
    BenchConfig,
    bench_samplers,
    calibration_report,
    summarize_decode,
)
from .model import InvalidDataError, PriorConfig
from .simulate import SimConfig, simulate_dataset


def _fail(msg: str) -> int:
    print(f"error: {msg}", file=sys.stderr)
    return 2


def _load_priors(path: str | None, n_total_obs: int,
                 n_hr: int, n_map: int) -> PriorConfig:
    """Priors from the standard construction, with JSON field overrides."""
    pri = PriorConfig.default(n_total_obs, n_hr=n_hr, n_map=n_map)
    if path is None:
        return pri
    spec = io.read_json(path)
    names = {f.name for f in dataclasses.fields(PriorConfig)}
    for key, val in spec.items():
        if key not in names:
            raise InvalidDataError(f"unknown prior field {key!r}")
        cur = getattr(pri, key)
        if isinstance(cur, np.ndarray):
            arr = np.asarray(val, dtype=float)
            if arr.shape != cur.shape:
                raise InvalidDataError(
                    f"prior field {key!r} expects shape {cur.shape}")
            setattr(pri, key, arr)
        else:
            setattr(pri, key, float(val))
    return pri


def _workers(args_value: int) -> int:
    env = os.environ.get("RSM_WORKERS")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise InvalidDataError(f"RSM_WORKERS={env!r} is not an integer")
    return args_value


# ---------------------------------------------------------------------------
# commands

def cmd_simulate(args) -> int:
    cfg = SimConfig.from_dict(io.read_json(args.config))
    out = simulate_dataset(cfg)
    os.makedirs(args.out, exist_ok=True)
    data_path = os.path.join(args.out, "dataset.json")
    io.write_dataset(data_path, out.encounters, cfg.mode)
    io.write_json(os.path.join(args.out, "dataset.truth.json"), out.truth)
    print(f"wrote {data_path} ({len(out.encounters)} encounters)")
    return 0


def cmd_fit(args) -> int:
    encounters, header = io.read_dataset(args.data)
    n_total = sum(e.y.shape[1] for e in encounters)
    priors = _load_priors(args.priors, n_total,
                          int(header["n_hr"]), int(header["n_map"]))
    workers = _workers(args.workers)
    os.makedirs(args.out, exist_ok=True)
    config = ChainConfig(
        iterations=args.iterations, burnin=args.burnin, thin=args.thin,
        seed=args.seed, workers=workers,
        checkpoint_every=args.checkpoint_every,
        checkpoint_path=os.path.join(args.out, "checkpoint.rsmckpt")
        if args.checkpoint_every else None)
    print(f"fit: {len(encounters)} encounters, {args.iterations} iterations "
          f"({args.burnin} burnin), workers={workers}")
    fit = run_chain(encounters, priors, config)
    io.write_chain_csv(os.path.join(args.out, "chains.csv"), fit.chain)
    io.write_json(os.path.join(args.out, "occupancy.json"), {
        "tally_count": fit.tally_count,
        "encounters": [
            {"encounter_id": eid, "tally": tal.tolist()}
            for eid, tal in zip(fit.encounter_ids, fit.occupancy)],
    })
    manifest = {
        "iterations": args.iterations,
        "burnin": args.burnin,
        "thin": args.thin,
        "seed": args.seed,
        "workers": workers,
        "data": os.path.abspath(args.data),
        "stats": {k: v for k, v in fit.stats.items()
                  if isinstance(v, (int, float, str))},
    }
    io.write_json(os.path.join(args.out, "manifest.json"), manifest)
    print(f"wrote {args.out}/chains.csv "
          f"({len(fit.chain['iteration'])} rows)")
    return 0


def cmd_decode(args) -> int:
    encounters, header = io.read_dataset(args.data)
    chain_dir = args.chain
    chain = io.read_chain_csv(os.path.join(chain_dir, "chains.csv"))
    manifest = io.read_json(os.path.join(chain_dir, "manifest.json"))
    med = chain_medians(chain, start_iteration=int(manifest["burnin"]))
    params = params_from_medians(med)
    n_total = sum(e.y.shape[1] for e in encounters)
    priors = _load_priors(args.priors, n_total,
                          int(header["n_hr"]), int(header["n_map"]))
    fit = run_decode(encounters, params, priors,
                     iterations=args.iterations, seed=args.seed)
    summaries = summarize_decode(fit)
    os.makedirs(args.out, exist_ok=True)
    post_path = os.path.join(args.out, "posteriors.json")
    io.write_json(post_path, io.posterior_document(summaries))
    print(f"wrote {post_path} ({len(summaries)} encounters)")
    return 0


def cmd_calibrate(args) -> int:
    posteriors = io.read_posteriors(args.posterior)
    truth = io.read_json(args.truth)
    paths = {rec["encounter_id"]: np.asarray(rec["b"], dtype=np.int64)
             for rec in truth["encounters"]}
    from .evaluate import PosteriorSummary
    summaries = []
    for eid, rec in posteriors.items():
        if eid not in paths:
            raise InvalidDataError(f"encounter {eid!r} missing from truth")
        summaries.append(PosteriorSummary(
            eid, rec["probs"], rec["impute_cells"],
            rec["impute_median"], rec["impute_lo"], rec["impute_hi"]))
    report = calibration_report(summaries, paths)
    io.write_json(args.out, report)
    print(f"c* = {report['c_star']:.4f}, AUC = {report['auc']:.4f}, "
          f"sens = {report['sensitivity']:.4f}, "
          f"spec = {report['specificity']:.4f}")
    return 0


def cmd_emit_chart(args) -> int:
    encounters, _ = io.read_dataset(args.data)
    posteriors = io.read_posteriors(args.posterior)
    by_id = {e.encounter_id: e for e in encounters}
    if args.encounter_id not in by_id:
        raise InvalidDataError(
            f"unknown encounter id {args.encounter_id!r}")
    if args.encounter_id not in posteriors:
        raise InvalidDataError(
            f"no posterior for encounter {args.encounter_id!r}")
    doc = io.chart_document(by_id[args.encounter_id],
                            posteriors[args.encounter_id],
                            threshold=args.threshold)
    io.write_json(args.out, doc)
    print(f"wrote {args.out}")
    return 0


def cmd_bench(args) -> int:
    cfg = BenchConfig(
        n_encounters=args.encounters, n_time=args.n_time, seed=args.seed,
        iterations=args.iterations, budget_s=args.budget,
        algorithms=tuple(args.algorithms.split(",")),
        p_values=tuple(int(x) for x in args.p.split(",")))
    report = bench_samplers(cfg)
    if args.compare_kernels:
        env = dict(os.environ, RSMICU_NO_NUMBA="1")
        code = ("import json,sys\n"
                "from rsmicu.evaluate import BenchConfig, bench_samplers\n"
                f"cfg = BenchConfig(n_encounters={cfg.n_encounters}, "
                f"n_time={cfg.n_time}, seed={cfg.seed}, "
                f"iterations={cfg.iterations}, budget_s={cfg.budget_s}, "
                f"algorithms={cfg.algorithms!r}, p_values={cfg.p_values!r})\n"
                "json.dump(bench_samplers(cfg), sys.stdout)\n")
        proc = subprocess.run([sys.executable, "-c", code], env=env,
                              capture_output=True, text=True)
        if proc.returncode != 0:
            raise RuntimeError(
                f"fallback-kernel bench failed:\n{proc.stderr}")
        report = {"numba": report, "numpy": json.loads(proc.stdout)}
    io.write_json(args.out, report)
    rows = report["rows"] if "rows" in report else report["numba"]["rows"]
    for row in rows:
        flag = " (partial)" if row["partial"] else ""
        print(f"{row['algorithm']:>10} p={row['p']}: "
              f"{row['median_iter_s']*1e3:9.3f} ms/iter, "
              f"{row['evals_per_iter']:>8} evals/iter, "
              f"acc {row['modal_accuracy']:.3f}{flag}")
    return 0


# ---------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="rsmicu",
        description="Regime-switching latent state model for ICU series")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic dataset")
    p.add_argument("--config", required=True, help="SimConfig JSON path")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="run the posterior sampling chain")
    p.add_argument("--data", required=True)
    p.add_argument("--priors", default=None,
                   help="JSON overriding default prior fields")
    p.add_argument("--iterations", type=int, default=10000)
    p.add_argument("--burnin", type=int, default=5000)
    p.add_argument("--thin", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--checkpoint-every", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("decode",
                       help="sample states for encounters at frozen globals")
    p.add_argument("--chain", required=True, help="fit output directory")
    p.add_argument("--data", required=True)
    p.add_argument("--priors", default=None)
    p.add_argument("--iterations", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("calibrate",
                       help="ROC, threshold, and accuracy against truth")
    p.add_argument("--posterior", required=True, help="posteriors.json path")
    p.add_argument("--truth", required=True, help="truth sidecar path")
    p.add_argument("--out", required=True, help="report JSON path")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("emit-chart", help="chart data for one encounter")
    p.add_argument("--posterior", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--encounter-id", required=True)
    p.add_argument("--threshold", type=float, default=io.DEFAULT_THRESHOLD)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_emit_chart)

    p = sub.add_parser("bench-samplers", help="time the block samplers")
    p.add_argument("--encounters", type=int, default=10)
    p.add_argument("--n-time", type=int, default=96)
    p.add_argument("--iterations", type=int, default=100)
    p.add_argument("--budget", type=float, default=150.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--algorithms", default="alg1,baseline_a,baseline_b")
    p.add_argument("--p", default="2,4,6")
    p.add_argument("--compare-kernels", action="store_true",
                   help="also run with the pure-numpy kernels")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bench)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (InvalidDataError, ValueError, OSError, KeyError) as exc:
        return _fail(str(exc))


if __name__ == "__main__":
    sys.exit(main())
