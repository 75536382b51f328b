"""Posterior summaries, ROC calibration, and the sampler benchmark.

Probabilities come from integer occupancy tallies over retained chain
iterations. Calibration pools time points across encounters, scores
P(state 2) against the indicator of true state 2, and picks the cutoff
minimizing FPR - TPR. The benchmark times the block samplers on a fixed
synthetic instance with every global parameter frozen at truth.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .engine import FitResult
from .sampler import (
    baseline_a_sweep,
    baseline_b_sweep,
    build_factors,
    log_initial_distribution,
    log_transition_table,
    make_ctx,
    sweep_states,
)
from .simulate import SimConfig, load_truth, simulate_dataset, truth_global_params

N_STATES = 5


# ---------------------------------------------------------------------------
# posterior summaries

@dataclass
class PosteriorSummary:
    """Decoded posterior for one encounter.

    probs columns are exact tally fractions and sum to 1; impute_* arrays
    are aligned with impute_cells (flat indices into y.ravel()).
    """
    encounter_id: str
    probs: np.ndarray            # (5, n) posterior state probabilities
    impute_cells: np.ndarray     # (m,) flat indices of imputed coordinates
    impute_median: np.ndarray    # (m,)
    impute_lo: np.ndarray        # (m,) 2.5% bound
    impute_hi: np.ndarray        # (m,) 97.5% bound

    @property
    def prob2(self) -> np.ndarray:
        return self.probs[1]


def probs_from_tallies(tally: np.ndarray, count: int) -> np.ndarray:
    """Tally matrix to probability matrix; every column must sum to count."""
    tally = np.asarray(tally)
    if count <= 0:
        raise ValueError("tally count must be positive")
    sums = tally.sum(axis=0)
    if not np.all(sums == count):
        raise ValueError("tally columns do not sum to the draw count")
    return tally / float(count)


def summarize_decode(fit: FitResult) -> list[PosteriorSummary]:
    """PosteriorSummary per encounter from a frozen-globals sampling run."""
    out = []
    for i, eid in enumerate(fit.encounter_ids):
        probs = probs_from_tallies(fit.occupancy[i], fit.tally_count)
        cells = np.asarray(fit.impute_cells[i], dtype=np.int64)
        if fit.impute_draws is not None and cells.size:
            draws = np.asarray(fit.impute_draws[i])
            med = np.median(draws, axis=0)
            lo = np.quantile(draws, 0.025, axis=0)
            hi = np.quantile(draws, 0.975, axis=0)
        else:
            med = np.zeros(0)
            lo = np.zeros(0)
            hi = np.zeros(0)
            cells = np.zeros(0, dtype=np.int64)
        out.append(PosteriorSummary(eid, probs, cells, med, lo, hi))
    return out


def chain_interval_summary(chain: dict) -> dict:
    """Per-scalar (median, 2.5%, 97.5%) across recorded chain rows."""
    out = {}
    for key, rows in chain.items():
        if key == "iteration":
            continue
        arr = np.asarray(rows, dtype=float).reshape(len(rows), -1)
        out[key] = {
            "median": np.median(arr, axis=0),
            "lo": np.quantile(arr, 0.025, axis=0),
            "hi": np.quantile(arr, 0.975, axis=0),
        }
    return out


# ---------------------------------------------------------------------------
# ROC and threshold calibration

def _check_series(prob2: np.ndarray, truth: np.ndarray) -> tuple:
    prob2 = np.asarray(prob2, dtype=float).ravel()
    truth = np.asarray(truth).ravel().astype(bool)
    if prob2.shape[0] != truth.shape[0]:
        raise ValueError("probability and truth series differ in length")
    if truth.all():
        raise ValueError("degenerate truth: every time point is positive")
    if not truth.any():
        raise ValueError("degenerate truth: every time point is negative")
    return prob2, truth


def roc_and_threshold(prob2: np.ndarray,
                      truth: np.ndarray) -> tuple[np.ndarray, float, float]:
    """ROC table, FPR-TPR-minimizing cutoff, and trapezoidal AUC.

    A time point is called positive when its probability is >= the cutoff.
    Candidate cutoffs are the distinct probabilities plus 0 and 1; ties in
    the objective go to the largest cutoff. Returns (points, c_star, auc)
    with points rows (threshold, fpr, tpr) in ascending threshold order.
    """
    prob2, truth = _check_series(prob2, truth)
    pos = np.sort(prob2[truth])
    neg = np.sort(prob2[~truth])
    cands = np.unique(np.concatenate((prob2, [0.0, 1.0])))
    tpr = 1.0 - np.searchsorted(pos, cands, side="left") / pos.size
    fpr = 1.0 - np.searchsorted(neg, cands, side="left") / neg.size
    diff = fpr - tpr
    best = diff.size - 1 - int(np.argmin(diff[::-1]))
    order = np.lexsort((tpr, fpr))
    auc = float(np.trapezoid(tpr[order], fpr[order]))
    points = np.column_stack((cands, fpr, tpr))
    return points, float(cands[best]), auc


def sens_spec_at(prob2: np.ndarray, truth: np.ndarray,
                 c: float) -> tuple[float, float]:
    """Sensitivity and specificity of the call prob >= c."""
    if not 0.0 <= c <= 1.0:
        raise ValueError(f"threshold {c} outside [0, 1]")
    prob2, truth = _check_series(prob2, truth)
    called = prob2 >= c
    sens = float(called[truth].mean())
    spec = float((~called[~truth]).mean())
    return sens, spec


def modal_accuracy(probs, truth) -> float:
    """Fraction of time points whose argmax posterior state matches the
    1-based truth; argmax ties resolve to the lower state."""
    if isinstance(probs, np.ndarray):
        probs = [probs]
        truth = [truth]
    hits = total = 0
    for mat, bt in zip(probs, truth):
        modal = np.asarray(mat).argmax(axis=0) + 1
        bt = np.asarray(bt)
        hits += int((modal == bt).sum())
        total += bt.shape[0]
    if total == 0:
        raise ValueError("no time points supplied")
    return hits / total


def calibration_report(summaries: list[PosteriorSummary],
                       truth_paths: dict) -> dict:
    """Pooled calibration of P(state 2) against true paths.

    truth_paths maps encounter id to the 1-based true state sequence.
    """
    prob2 = np.concatenate([s.prob2 for s in summaries])
    paths = [np.asarray(truth_paths[s.encounter_id]) for s in summaries]
    truth2 = np.concatenate([p == 2 for p in paths])
    points, c_star, auc = roc_and_threshold(prob2, truth2)
    sens, spec = sens_spec_at(prob2, truth2, c_star)
    acc = modal_accuracy([s.probs for s in summaries], paths)
    return {
        "thresholds": points[:, 0].tolist(),
        "fpr": points[:, 1].tolist(),
        "tpr": points[:, 2].tolist(),
        "c_star": c_star,
        "auc": auc,
        "sensitivity": sens,
        "specificity": spec,
        "modal_accuracy": acc,
        "n_points": int(prob2.shape[0]),
        "n_positive": int(truth2.sum()),
    }


# ---------------------------------------------------------------------------
# sampler benchmark

@dataclass
class BenchConfig:
    """Fixture and budget for the block-sampler benchmark."""
    n_encounters: int = 10
    n_time: int = 96
    seed: int = 0
    iterations: int = 100
    budget_s: float = 150.0
    algorithms: tuple = ("alg1", "baseline_a", "baseline_b")
    p_values: tuple = (2, 4, 6)


_SWEEPS = {
    "alg1": sweep_states,
    "baseline_a": baseline_a_sweep,
    "baseline_b": baseline_b_sweep,
}


def _bench_instance(cfg: BenchConfig):
    """Complete-data encounters from the packaged truth, plus contexts."""
    truth = load_truth("full5")
    params = truth_global_params(truth)
    sim = simulate_dataset(SimConfig(
        mode="full5", n_encounters=cfg.n_encounters, seed=cfg.seed,
        n_min=cfg.n_time, n_max=cfg.n_time))
    factors = build_factors(params.a_diag(), params.R)
    log_pi = log_initial_distribution(params.pi_logit)
    n_hr = sim.encounters[0].hr_doses.shape[0]
    ctxs, true_paths, inits = [], [], []
    for enc, rec in zip(sim.encounters, sim.truth["encounters"]):
        y = np.asarray(rec["y_full"], dtype=float)
        n = y.shape[1]
        exog = np.zeros((4, n))
        exog[1] = params.omega[:n_hr] @ enc.hr_doses
        exog[2] = params.omega[n_hr:] @ enc.map_doses
        exog += np.outer(params.beta, enc.rbc_admin_cum)
        log_P = log_transition_table(params.zeta, enc.rbc_ordered)
        gamma = np.asarray(rec["gamma"], dtype=float)
        alpha_star = np.asarray(rec["alpha_star"], dtype=float)
        ctxs.append(make_ctx(y, gamma, exog, alpha_star, factors, log_P,
                             log_pi))
        true_paths.append(np.asarray(rec["b"], dtype=np.int64))
        inits.append(np.ones(n, dtype=np.int64))
    return ctxs, true_paths, inits


def bench_samplers(cfg: BenchConfig | None = None) -> dict:
    """Time each sampler/block-length pair on the frozen fixture.

    Rows report the median per-iteration wall time, total density
    evaluations per iteration, and the modal accuracy of the tallied
    states. Rows whose budget runs out stop early and are flagged partial.
    """
    from .kernels import make_streams

    cfg = cfg or BenchConfig()
    ctxs, true_paths, inits = _bench_instance(cfg)
    rows = []
    for algo in cfg.algorithms:
        if algo not in _SWEEPS:
            raise ValueError(f"unknown algorithm {algo!r}")
        sweep = _SWEEPS[algo]
        for p in cfg.p_values:
            streams = make_streams(cfg.seed, len(ctxs))
            bs = [init.copy() for init in inits]
            tallies = [np.zeros((N_STATES, b.shape[0]), dtype=np.int64)
                       for b in bs]
            times = []
            evals_per_iter = []
            start = time.perf_counter()
            done = 0
            for _ in range(cfg.iterations):
                t0 = time.perf_counter()
                ev = 0
                for i, ctx in enumerate(ctxs):
                    ev += sweep(ctx, bs[i], p, streams[i])[2]
                times.append(time.perf_counter() - t0)
                evals_per_iter.append(ev)
                for i, b in enumerate(bs):
                    tallies[i][b - 1, np.arange(b.shape[0])] += 1
                done += 1
                if time.perf_counter() - start > cfg.budget_s:
                    break
            acc = modal_accuracy([t.astype(float) for t in tallies],
                                 true_paths)
            rows.append({
                "algorithm": algo,
                "p": int(p),
                "iterations_done": done,
                "partial": done < cfg.iterations,
                "median_iter_s": float(np.median(times)),
                "total_s": float(sum(times)),
                "evals_per_iter": int(np.median(evals_per_iter)),
                "modal_accuracy": float(acc),
            })
    return {
        "config": {
            "n_encounters": cfg.n_encounters,
            "n_time": cfg.n_time,
            "seed": cfg.seed,
            "iterations": cfg.iterations,
            "budget_s": cfg.budget_s,
        },
        "rows": rows,
    }
