"""Gibbs samplers for the three-state toy study.

Two fits of the same data, differing in how time 1 is handled:

* model "a": no subject effects. The state-1 level is a shared intercept,
  occupancy counts start at time 1, and y_1 is treated like every other
  time point. Misspecified for data whose pre-admission history shifted
  the level before observation began.
* model "b": subject-level intercepts gamma_i with an N(y_1, G) prior,
  occupancy counts start at time 2, slopes alpha* shared. Matches the
  generating mechanism up to the unknown intercepts.

Both learn the initial distribution pi, the transition matrix P on the
3-state support, the slopes, and R. Slope columns carry the same sign
constraints as the clinical model (state 2 lowers hgb/MAP and raises
hr/lactate; state 3 the reverse), which removes the label-swapped mode.

Model "b" updates states under the gamma-marginalized response model:
with a per-subject free level, single block edits are otherwise vetoed
by a stale intercept even when they fix the occupancy staircase, and the
chain freezes in a blurred configuration. The marginal target lets the
level re-solve inside every acceptance ratio; gamma_i is then redrawn
from its exact conditional, so the composite kernel leaves the joint
posterior invariant. Proposals still come from the forward-block family
evaluated at the frozen current intercept, which is a valid proposal
parameter.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular
from scipy.stats import invwishart

from .diagram import ADJ_3
from .kernels import make_streams
from .model import EncounterData
from .sampler import (
    ModelCtx,
    build_factors,
    draw_block_length,
    fixed_log_transition_table,
    make_ctx,
    occupancy_matrix,
    propose_block_alg1,
    propose_full_alg2,
    propose_pair_alg3,
    sequence_logprior,
    sweep_states0,
)

# support of the 3-state transition matrix (row -> allowed columns, 0-based)
SUPPORT_3 = (np.array([0, 1]), np.array([1, 2]), np.array([0, 1, 2]))

# response signs of a state-2 occupancy step: (hgb, hr, MAP, lactate)
SIGN2 = np.array([-1.0, 1.0, -1.0, 1.0])

SLOPE_PRIOR_VAR = 1.0e4
SIGN_CAP = 100
PSI_R3 = 20.0 * np.eye(4)
NU_R3 = 10.0
PSI_G3 = 3.0 * np.diag([8.0, 32.0, 32.0, 8.0])
NU_G3 = 8.0


@dataclass
class SimpleFitResult:
    model: str
    alpha: np.ndarray          # posterior mean slopes, (4, 2) cols = states 2, 3
    alpha_draws: np.ndarray    # (n_kept, 8) retained vec draws
    P_mean: np.ndarray
    pi_mean: np.ndarray
    occupancy: list            # per-subject (3, n) post-burnin state tallies
    tally_count: int
    accept_rate: float


def _dirichlet_rows(tally: np.ndarray, gen: np.random.Generator) -> np.ndarray:
    """Row-wise Dirichlet(1 + tally) draw restricted to SUPPORT_3."""
    P = np.zeros((3, 3))
    for r, cols in enumerate(SUPPORT_3):
        g = gen.gamma(1.0 + tally[r, cols])
        P[r, cols] = g / g.sum()
    return P


def _precision_draw(lam: np.ndarray, v: np.ndarray,
                    gen: np.random.Generator) -> np.ndarray:
    L = np.linalg.cholesky(lam)
    mean = np.linalg.solve(lam, v)
    z = gen.standard_normal(lam.shape[0])
    return mean + solve_triangular(L.T, z, lower=False)


def constrained_slope_draw(lam: np.ndarray, v: np.ndarray,
                           current: np.ndarray,
                           gen: np.random.Generator) -> np.ndarray:
    """N(lam^-1 v, lam^-1) on vec(slopes), rejected until the sign pattern
    holds; keeps the current value if SIGN_CAP draws all miss."""
    L = np.linalg.cholesky(lam)
    mean = np.linalg.solve(lam, v)
    for _ in range(SIGN_CAP):
        d = mean + solve_triangular(L.T, gen.standard_normal(v.size),
                                    lower=False)
        m = d.reshape((4, 2), order="F")
        if np.all(m[:, 0] * SIGN2 > 0) and np.all(m[:, 1] * SIGN2 < 0):
            return m
    return current


def _legalize(lab: np.ndarray) -> np.ndarray:
    """Repair a 1-based label sequence so every transition is on the
    3-state support. A 1->3 jump passes through 2, a 2->1 drop through 3;
    both repairs are single-symbol and keep the surrounding shape."""
    b = lab.copy()
    for k in range(1, b.shape[0]):
        if b[k - 1] == 1 and b[k] == 3:
            b[k] = 2
        elif b[k - 1] == 2 and b[k] == 1:
            b[k] = 3
    return b


def increment_init(ys: list[np.ndarray]) -> tuple[np.ndarray, list[np.ndarray]]:
    """Slope and path initialization from first differences.

    A state-2 step moves all four responses by the column alpha*_2 and a
    state-3 step by alpha*_3 = -alpha*_2, so the signed contrast
    SIGN2 . dy separates the three step types. Centers come from a 1-d
    3-means pass, steps are labeled by the nearest center, and column
    means of the labeled differences give the starting slopes. Poorly
    separated data falls back to the unit sign pattern.
    """
    dys = [np.diff(y, axis=1) for y in ys]
    u = np.concatenate([SIGN2 @ d for d in dys])
    c = max(float(np.quantile(np.abs(u), 0.9)), 1e-6)
    centers = np.array([-c, 0.0, c])
    for _ in range(20):
        idx = np.abs(u[:, None] - centers[None, :]).argmin(axis=1)
        for j in range(3):
            if np.any(idx == j):
                centers[j] = u[idx == j].mean()
        centers.sort()
    # centers: most negative = state 3 steps, middle = 1, positive = 2
    lo, hi = (centers[0] + centers[1]) / 2, (centers[1] + centers[2]) / 2

    col2 = np.zeros(4)
    col3 = np.zeros(4)
    n2 = n3 = 0
    paths = []
    for d in dys:
        ui = SIGN2 @ d
        lab = np.ones(ui.shape[0] + 1, dtype=np.int64)
        lab[1:][ui > hi] = 2
        lab[1:][ui < lo] = 3
        paths.append(_legalize(lab))
        col2 += d[:, ui > hi].sum(axis=1)
        n2 += int((ui > hi).sum())
        col3 += d[:, ui < lo].sum(axis=1)
        n3 += int((ui < lo).sum())
    slopes = np.column_stack([col2 / max(n2, 1), col3 / max(n3, 1)])
    if not (np.all(slopes[:, 0] * SIGN2 > 0) and
            np.all(slopes[:, 1] * SIGN2 < 0)):
        slopes = np.column_stack([SIGN2, -SIGN2])
    return slopes, paths


def _marginal_sweep(ctx: ModelCtx, b: np.ndarray, p: int, y: np.ndarray,
                    slopes: np.ndarray, R_inv: np.ndarray, G_inv: np.ndarray,
                    lam_inv: np.ndarray, gen: np.random.Generator,
                    stream: np.ndarray) -> tuple[int, int]:
    """One state sweep accepted under the gamma-marginalized target.

    b is 1-based and updated in place. Returns (proposals, accepts).
    """
    n = b.shape[0]

    def score(b1: np.ndarray) -> float:
        r = y - slopes @ occupancy_matrix(b1 - 1, 3, 1)
        quad = float(np.einsum("ct,cd,dt->", r, R_inv, r))
        v = G_inv @ y[:, 0] + R_inv @ r.sum(axis=1)
        return -0.5 * (quad - float(v @ lam_inv @ v)) \
            + sequence_logprior(ctx, b1 - 1)

    cur = score(b)
    n_prop = n_acc = 0

    def consider(res) -> None:
        nonlocal cur, n_prop, n_acc
        n_prop += 1
        new = score(res.proposal)
        delta = new - cur + res.logq_rev - res.logq_fwd
        if np.log(gen.random()) < delta:
            b[:] = res.proposal
            cur = new
            n_acc += 1

    if p >= n:
        consider(propose_full_alg2(ctx, b, stream))
    elif p == 2:
        for k in range(1, n):
            consider(propose_pair_alg3(ctx, b, k, stream))
    else:
        k = 1
        while k <= n - 2:
            consider(propose_block_alg1(ctx, b, k, p, stream))
            k += p - 2
    return n_prop, n_acc


def fit_simple(encounters: list[EncounterData], model: str = "b",
               iterations: int = 10000, burnin: int = 5000,
               thin: int = 5, seed: int = 0) -> SimpleFitResult:
    if model not in ("a", "b"):
        raise ValueError(f"model must be 'a' or 'b', got {model!r}")
    if not encounters:
        raise ValueError("need at least one encounter")
    if burnin >= iterations:
        raise ValueError("burnin must be smaller than iterations")
    count_start = 0 if model == "a" else 1

    ys = [np.ascontiguousarray(e.y, dtype=float) for e in encounters]
    if any(np.isnan(y).any() for y in ys):
        raise ValueError("three-state fits do not handle missing values")
    ns = np.array([y.shape[1] for y in ys])
    N = len(ys)
    total_t = int(ns.sum())

    gen = np.random.default_rng(seed)
    streams = make_streams(seed, N)
    zeros_a = np.zeros((3, 4))

    # state of the chain
    P = np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5],
                  [1 / 3, 1 / 3, 1 / 3]])
    pi = np.full(3, 1 / 3)
    R = PSI_R3 / (NU_R3 + 5.0)
    G = PSI_G3 / (NU_G3 + 5.0)
    alpha1 = np.array([y[:, 0] for y in ys]).mean(axis=0)   # model-a intercept
    gammas = [y[:, 0].copy() for y in ys]                    # model-b intercepts
    slopes, bs1 = increment_init(ys)                         # 1-based paths

    occ = [np.zeros((3, n), dtype=np.int64) for n in ns]
    tally_count = 0
    kept: list[np.ndarray] = []
    P_sum = np.zeros((3, 3))
    pi_sum = np.zeros(3)
    prop = acc = 0

    for it in range(1, iterations + 1):
        factors = build_factors(zeros_a, R)
        R_inv = factors.R_inv
        log_pi = np.log(np.maximum(pi, 1e-300))
        G_inv = np.linalg.inv(G)

        p = draw_block_length(gen)
        for i, y in enumerate(ys):
            base = alpha1 if model == "a" else gammas[i]
            ctx = make_ctx(y, base, np.zeros_like(y), slopes.T, factors,
                           fixed_log_transition_table(P, ns[i]),
                           log_pi, adj=ADJ_3, count_start=count_start)
            if model == "a":
                b0 = bs1[i] - 1
                npr, nac, _ = sweep_states0(ctx, b0, p, streams[i])
                bs1[i] = b0 + 1
            else:
                lam_inv = np.linalg.inv(G_inv + ns[i] * R_inv)
                npr, nac = _marginal_sweep(ctx, bs1[i], p, y, slopes, R_inv,
                                           G_inv, lam_inv, gen, streams[i])
            prop += npr
            acc += nac
        Cs = [occupancy_matrix(b - 1, 3, count_start) for b in bs1]

        if model == "b":
            # refresh intercepts first: the marginal state update assumes
            # gamma is redrawn from its conditional before anything uses it
            for i, y in enumerate(ys):
                lam_g = G_inv + ns[i] * R_inv
                v_g = G_inv @ y[:, 0] + R_inv @ (y - slopes @ Cs[i]).sum(axis=1)
                gammas[i] = _precision_draw(lam_g, v_g, gen)

        lam = np.eye(8) / SLOPE_PRIOR_VAR
        v = np.zeros(8)
        for i, y in enumerate(ys):
            base = alpha1 if model == "a" else gammas[i]
            C = Cs[i]
            lam += np.kron(C @ C.T, R_inv)
            v += (R_inv @ (y - base[:, None]) @ C.T).reshape(8, order="F")
        slopes = constrained_slope_draw(lam, v, slopes, gen)

        if model == "a":
            lam1 = np.eye(4) / SLOPE_PRIOR_VAR + total_t * R_inv
            v1 = np.zeros(4)
            for i, y in enumerate(ys):
                v1 += R_inv @ (y - slopes @ Cs[i]).sum(axis=1)
            alpha1 = _precision_draw(lam1, v1, gen)
        else:
            scat = sum(np.outer(g - y[:, 0], g - y[:, 0])
                       for g, y in zip(gammas, ys))
            G = invwishart.rvs(df=NU_G3 + N, scale=PSI_G3 + scat,
                               random_state=gen)

        scat_r = np.zeros((4, 4))
        for i, y in enumerate(ys):
            base = alpha1 if model == "a" else gammas[i]
            e = y - base[:, None] - slopes @ Cs[i]
            scat_r += e @ e.T
        R = invwishart.rvs(df=NU_R3 + total_t, scale=PSI_R3 + scat_r,
                           random_state=gen)

        tally = np.zeros((3, 3))
        init = np.zeros(3)
        for b in bs1:
            np.add.at(tally, (b[:-1] - 1, b[1:] - 1), 1.0)
            init[b[0] - 1] += 1
        P = _dirichlet_rows(tally, gen)
        g = gen.gamma(1.0 + init)
        pi = g / g.sum()

        if it > burnin:
            tally_count += 1
            P_sum += P
            pi_sum += pi
            for i, b in enumerate(bs1):
                occ[i][b - 1, np.arange(ns[i])] += 1
            if it % thin == 0:
                kept.append(slopes.reshape(8, order="F").copy())

    kept_arr = np.array(kept) if kept else np.zeros((0, 8))
    alpha_mean = (kept_arr.mean(axis=0).reshape((4, 2), order="F")
                  if len(kept_arr) else slopes)
    denom = max(1, tally_count)
    return SimpleFitResult(
        model=model, alpha=alpha_mean, alpha_draws=kept_arr,
        P_mean=P_sum / denom, pi_mean=pi_sum / denom, occupancy=occ,
        tally_count=tally_count, accept_rate=acc / max(1, prop))
