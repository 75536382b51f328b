"""State-sequence sampling operations.

This layer owns the translation between the public 1-based state convention
and the 0-based kernel arrays, caches the bridge-set tables, and exposes the
individual proposal moves plus whole-sequence sweeps. The three forward
moves make up one sampler family (dispatched on the block length p); the
uniform-block and exact-conditional-block sweeps are reference baselines for
benchmarking against it.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .diagram import ADJ_5, adjacency
from .model import (LABEL_BLEED, LABEL_NO_BLEED, LABEL_RBC_RULE,
                    LABEL_UNLABELED, LOGIT_CLAMP, Label, GlobalParams,
                    stationary_covariance, transition_matrix)
from .paths import enumerate_paths, pair_tables

P_MIN, P_MAX = 2, 50


def draw_block_length(gen: np.random.Generator) -> int:
    """Block length p for one sweep, uniform on {2..50}."""
    return int(gen.integers(P_MIN, P_MAX + 1))


# ---------------------------------------------------------------------------
# bridge tables (0-based states; anchor index S means "free")

_PAIR_CACHE: dict[bytes, tuple] = {}
_TUPLE_CACHE: dict[tuple, tuple] = {}


def pair_tables0(adj: np.ndarray):
    """(pairs, offset, count) for two-step bridges, 0-based states."""
    key = adj.tobytes()
    hit = _PAIR_CACHE.get(key)
    if hit is None:
        pairs, off, cnt = pair_tables(adj)
        hit = (np.ascontiguousarray(pairs - 1), off, cnt)
        _PAIR_CACHE[key] = hit
    return hit


def tuple_tables0(p: int, adj: np.ndarray):
    """(tuples, offset, count) for anchored length-p bridges, 0-based.

    Row layout mirrors pair_tables0: anchors (l, r) in 0..S with S = free,
    tuples for (l, r) stored in rows offset[l, r] .. offset[l, r]+count[l, r].
    """
    key = (p, adj.tobytes())
    hit = _TUPLE_CACHE.get(key)
    if hit is not None:
        return hit
    S = adj.shape[0]
    off = np.zeros((S + 1, S + 1), dtype=np.int64)
    cnt = np.zeros((S + 1, S + 1), dtype=np.int64)
    blocks = []
    total = 0
    for l in range(S + 1):
        for r in range(S + 1):
            left = None if l == S else l + 1
            right = None if r == S else r + 1
            ps = enumerate_paths(p, left, right, adj)
            off[l, r] = total
            cnt[l, r] = ps.count
            total += ps.count
            if ps.count:
                blocks.append(ps.tuples - 1)
    if blocks:
        tuples = np.ascontiguousarray(np.concatenate(blocks, axis=0))
    else:
        tuples = np.zeros((0, p), dtype=np.int64)
    hit = (tuples, off, cnt)
    _TUPLE_CACHE[key] = hit
    return hit


# ---------------------------------------------------------------------------
# labels

def encode_label(label: Label, n: int) -> tuple[int, int]:
    """Map a label to the kernel encoding (constraint type, index limit)."""
    if label.kind == LABEL_UNLABELED:
        return 0, 0
    if label.kind == LABEL_RBC_RULE:
        limit = max(w[2] for w in label.windows)
        return 1, int(limit)
    if label.kind == LABEL_BLEED:
        return 1, n - 1
    if label.kind == LABEL_NO_BLEED:
        return 2, 0
    raise ValueError(f"unknown label kind {label.kind!r}")


def satisfies_label(b: np.ndarray, label: Label) -> bool:
    """True when the 1-based state sequence is consistent with the label."""
    b0 = np.asarray(b, dtype=np.int64) - 1
    ltype, limit = encode_label(label, b0.shape[0])
    return bool(kernels._label_ok(b0, ltype, limit))


def initial_states(n: int, label: Label) -> np.ndarray:
    """Feasible 1-based starting sequence for a chain: all-stable, with a
    short hemorrhage-plus-recovery prefix when the label demands state 2."""
    ltype, _ = encode_label(label, n)
    b = np.ones(n, dtype=np.int64)
    if ltype == 1:
        b[0] = 2
        if n > 1:
            b[1] = 3
    return b


# ---------------------------------------------------------------------------
# model context

@dataclass
class ModelCtx:
    """Everything a sweep kernel needs for one encounter, 0-based states."""
    y: np.ndarray
    gamma: np.ndarray
    exog: np.ndarray
    alphaT: np.ndarray
    A_diag: np.ndarray
    R_chol: np.ndarray
    R_ldet: float
    gam_chol: np.ndarray
    gam_ldet: np.ndarray
    log_P: np.ndarray
    log_pi: np.ndarray
    adj: np.ndarray
    count_start: int
    pairs: np.ndarray
    poff: np.ndarray
    pcnt: np.ndarray
    label_type: int
    label_limit: int

    @property
    def n(self) -> int:
        return self.y.shape[1]

    def _common(self):
        return (self.y, self.gamma, self.exog, self.alphaT, self.A_diag,
                self.R_chol, self.R_ldet, self.gam_chol, self.gam_ldet,
                self.log_P, self.log_pi, self.adj, self.count_start)


@dataclass
class FactorBundle:
    """Cholesky factors and inverses shared by every subject at fixed
    (A, R): the innovation covariance and the per-state time-1 covariance."""
    A_diag: np.ndarray
    R: np.ndarray
    R_chol: np.ndarray
    R_ldet: float
    R_inv: np.ndarray
    gam: np.ndarray
    gam_chol: np.ndarray
    gam_ldet: np.ndarray
    gam_inv: np.ndarray


def build_factors(A_diag: np.ndarray, R: np.ndarray) -> FactorBundle:
    S = A_diag.shape[0]
    R = np.asarray(R, dtype=float)
    R_chol = np.linalg.cholesky(R)
    R_ldet = float(np.log(np.diag(R_chol)).sum())
    R_inv = np.linalg.inv(R)
    gam = np.empty((S, 4, 4))
    gam_chol = np.empty((S, 4, 4))
    gam_ldet = np.empty(S)
    gam_inv = np.empty((S, 4, 4))
    for s in range(S):
        gam[s] = stationary_covariance(A_diag[s], R)
        gam_chol[s] = np.linalg.cholesky(gam[s])
        gam_ldet[s] = np.log(np.diag(gam_chol[s])).sum()
        gam_inv[s] = np.linalg.inv(gam[s])
    return FactorBundle(np.ascontiguousarray(A_diag, dtype=float), R, R_chol,
                        R_ldet, R_inv, gam, gam_chol, gam_ldet, gam_inv)


def log_transition_table(zeta: np.ndarray, rbc_ordered: np.ndarray,
                         S: int = 5) -> np.ndarray:
    """(n, S, S) table of log transition matrices; entry [t] applies to the
    step into time t and uses the RBC units ordered at t. Structural zeros
    are -inf. Row 0 is never read but kept for alignment."""
    z = np.asarray(rbc_ordered, dtype=float)
    n = z.shape[0]
    out = np.empty((n, S, S))
    cache: dict[float, np.ndarray] = {}
    for t in range(n):
        v = float(z[t])
        logP = cache.get(v)
        if logP is None:
            P = transition_matrix(zeta, v)
            logP = np.full((S, S), -np.inf)
            np.log(P, out=logP, where=P > 0)
            cache[v] = logP
        out[t] = logP
    return out


def fixed_log_transition_table(P: np.ndarray, n: int) -> np.ndarray:
    S = P.shape[0]
    logP = np.full((S, S), -np.inf)
    np.log(P, out=logP, where=np.asarray(P) > 0)
    return np.broadcast_to(logP, (n, S, S)).copy()


def log_initial_distribution(pi_logit: np.ndarray) -> np.ndarray:
    logits = np.concatenate(([0.0], np.clip(pi_logit, -LOGIT_CLAMP,
                                            LOGIT_CLAMP)))
    return logits - (logits.max() + np.log(np.exp(logits
                                                  - logits.max()).sum()))


def make_ctx(y: np.ndarray, gamma: np.ndarray, exog: np.ndarray,
             alpha_star: np.ndarray, factors: FactorBundle,
             log_P: np.ndarray, log_pi: np.ndarray,
             adj: np.ndarray | None = None, count_start: int = 1,
             label: Label | None = None) -> ModelCtx:
    """Assemble a kernel context. alpha_star is (S-1, 4) with rows in state
    order 2..S; label defaults to unlabeled."""
    if adj is None:
        adj = ADJ_5
    n = y.shape[1]
    if label is None:
        label = Label()
    ltype, limit = encode_label(label, n)
    pairs, poff, pcnt = pair_tables0(adj)
    return ModelCtx(
        y=np.ascontiguousarray(y, dtype=float),
        gamma=np.ascontiguousarray(gamma, dtype=float),
        exog=np.ascontiguousarray(exog, dtype=float),
        alphaT=np.ascontiguousarray(np.asarray(alpha_star, dtype=float).T),
        A_diag=factors.A_diag,
        R_chol=factors.R_chol, R_ldet=factors.R_ldet,
        gam_chol=factors.gam_chol, gam_ldet=factors.gam_ldet,
        log_P=np.ascontiguousarray(log_P),
        log_pi=np.ascontiguousarray(log_pi),
        adj=adj, count_start=int(count_start),
        pairs=pairs, poff=poff, pcnt=pcnt,
        label_type=ltype, label_limit=limit)


def occupancy_matrix(b0: np.ndarray, S: int, count_start: int) -> np.ndarray:
    """(S-1, n) cumulative occupancy counts of states 1..S-1 (0-based) over
    positions [count_start, t]."""
    n = b0.shape[0]
    oh = np.zeros((S - 1, n))
    for l in range(1, S):
        oh[l - 1] = b0 == l
    oh[:, :count_start] = 0.0
    return np.cumsum(oh, axis=1)


def sequence_loglik(ctx: ModelCtx, b0: np.ndarray) -> float:
    """Joint conditional log density of y under the 0-based path b0."""
    return float(kernels.seq_loglik(ctx.y, b0, ctx.gamma, ctx.exog,
                                    ctx.alphaT, ctx.A_diag, ctx.R_chol,
                                    ctx.R_ldet, ctx.gam_chol, ctx.gam_ldet,
                                    ctx.count_start))


def sequence_logprior(ctx: ModelCtx, b0: np.ndarray) -> float:
    """log pi(b_1) + sum of log transition terms for the 0-based path."""
    n = b0.shape[0]
    total = float(ctx.log_pi[b0[0]])
    if n > 1:
        total += float(ctx.log_P[np.arange(1, n), b0[:-1], b0[1:]].sum())
    return total


# ---------------------------------------------------------------------------
# individual proposal moves (public, 1-based sequences)

@dataclass
class ProposalResult:
    """One proposed state sequence and its Metropolis-Hastings bookkeeping.

    delta is the simplified log acceptance ratio (label constraints are
    applied separately at accept time); logq_fwd / logq_rev are the log
    proposal densities of the move and its reversal; evals counts response
    density evaluations charged to proposal construction.
    """
    proposal: np.ndarray
    delta: float
    logq_fwd: float
    logq_rev: float
    evals: int


def _wrap(raw) -> ProposalResult:
    bp, delta, qf, qr, ev = raw
    return ProposalResult(bp + 1, float(delta), float(qf), float(qr),
                          int(ev))


def propose_block_alg1(ctx: ModelCtx, b: np.ndarray, k: int, p: int,
                       rng: np.ndarray) -> ProposalResult:
    """Forward-block move starting at 1-based position k with block length
    p (3 <= p < n). Forward-samples the block interior and closes with a
    uniform bridge pair."""
    b0 = np.asarray(b, dtype=np.int64) - 1
    raw = kernels.propose_forward_block(b0, int(k) - 1, int(p),
                                        *ctx._common(), ctx.pairs, ctx.poff,
                                        ctx.pcnt, rng)
    return _wrap(raw)


def propose_full_alg2(ctx: ModelCtx, b: np.ndarray,
                      rng: np.ndarray) -> ProposalResult:
    """Whole-sequence forward move, used when p >= n."""
    b0 = np.asarray(b, dtype=np.int64) - 1
    raw = kernels.propose_forward_full(b0, *ctx._common(), rng)
    return _wrap(raw)


def propose_pair_alg3(ctx: ModelCtx, b: np.ndarray, k: int,
                      rng: np.ndarray) -> ProposalResult:
    """Uniform bridge redraw of the 1-based pair (k, k+1), used when p == 2."""
    b0 = np.asarray(b, dtype=np.int64) - 1
    raw = kernels.propose_pair(b0, int(k) - 1, *ctx._common(), ctx.pairs,
                               ctx.poff, ctx.pcnt, rng)
    return _wrap(raw)


def propose_uniform_block(ctx: ModelCtx, b: np.ndarray, k: int, p: int,
                          rng: np.ndarray) -> ProposalResult:
    """Symmetric uniform redraw of the anchored 1-based block [k, k+p-1]."""
    b0 = np.asarray(b, dtype=np.int64) - 1
    tuples, toff, tcnt = tuple_tables0(int(p), ctx.adj)
    raw = kernels.propose_uniform_block(b0, int(k) - 1, int(p),
                                        *ctx._common(), tuples, toff, tcnt,
                                        rng)
    return _wrap(raw)


def mh_accept_states(ctx: ModelCtx, b: np.ndarray, result: ProposalResult,
                     rng: np.ndarray) -> bool:
    """Apply the accept step for a proposed sequence; b (1-based) is updated
    in place on acceptance. Label constraints veto regardless of delta."""
    b0 = np.asarray(b, dtype=np.int64) - 1
    bp0 = np.asarray(result.proposal, dtype=np.int64) - 1
    took = kernels._accept(b0, bp0, result.delta, ctx.label_type,
                           ctx.label_limit, rng)
    if took:
        b[:] = b0 + 1
    return bool(took)


# ---------------------------------------------------------------------------
# sweeps

def sweep_states0(ctx: ModelCtx, b0: np.ndarray, p: int,
                  rng: np.ndarray) -> tuple[int, int, int]:
    """Forward-family sweep on a 0-based sequence (engine fast path)."""
    return kernels.sweep_forward(b0, int(p), *ctx._common(), ctx.pairs,
                                 ctx.poff, ctx.pcnt, ctx.label_type,
                                 ctx.label_limit, rng)


def sweep_states(ctx: ModelCtx, b: np.ndarray, p: int,
                 rng: np.ndarray) -> tuple[int, int, int]:
    """One sweep of the forward-proposal sampler over the 1-based sequence
    b (updated in place). Returns (proposals, accepts, density evals)."""
    b0 = np.asarray(b, dtype=np.int64) - 1
    out = sweep_states0(ctx, b0, p, rng)
    b[:] = b0 + 1
    return out


def baseline_a_sweep(ctx: ModelCtx, b: np.ndarray, p: int,
                     rng: np.ndarray) -> tuple[int, int, int]:
    """Uniform-block baseline sweep (1-based, in place)."""
    n = b.shape[0]
    if not 2 <= p <= n:
        raise ValueError(f"block length {p} invalid for sequence of {n}")
    b0 = np.asarray(b, dtype=np.int64) - 1
    tuples, toff, tcnt = tuple_tables0(int(p), ctx.adj)
    out = kernels.sweep_uniform(b0, int(p), *ctx._common(), tuples, toff,
                                tcnt, ctx.label_type, ctx.label_limit, rng)
    b[:] = b0 + 1
    return out


def baseline_b_sweep(ctx: ModelCtx, b: np.ndarray, p: int,
                     rng: np.ndarray) -> tuple[int, int, int]:
    """Exact-conditional-block baseline sweep (1-based, in place)."""
    n = b.shape[0]
    if not 2 <= p <= n:
        raise ValueError(f"block length {p} invalid for sequence of {n}")
    b0 = np.asarray(b, dtype=np.int64) - 1
    tuples, toff, tcnt = tuple_tables0(int(p), ctx.adj)
    out = kernels.sweep_gibbs(b0, int(p), *ctx._common(), tuples, toff,
                              tcnt, ctx.label_type, ctx.label_limit, rng)
    b[:] = b0 + 1
    return out


def impute_missing(ctx: ModelCtx, miss: np.ndarray, b0: np.ndarray,
                   factors: FactorBundle, G_inv: np.ndarray,
                   rng: np.ndarray) -> None:
    """Redraw masked cells of ctx.y in place (0-based path b0)."""
    kernels.impute_subject(ctx.y, miss, b0, ctx.gamma, ctx.exog, ctx.alphaT,
                           ctx.A_diag, factors.R_inv, G_inv, factors.gam_inv,
                           ctx.count_start, rng)
