"""Metropolis-within-Gibbs coordinator.

One iteration updates, in order: every subject's latent state sequence (one
shared block length p per iteration), missing response cells, the
per-subject coefficient blocks (gamma, alpha_star), the population blocks
(omega, beta, alpha_tilde, upsilon, G), the innovation covariance R through
an approximate-conjugate Metropolis step, and the non-conjugate logit blocks
(zeta, initial-state logits, per-state AR logits) through adaptive
random-walk Metropolis.

State sweeps and imputation consume per-subject counter-seeded streams
inside the compiled kernels; every other draw comes from one master
Generator. A chain is therefore a deterministic function of
(data, priors, config, seed), and a checkpoint restores it bit-exactly.
"""
from __future__ import annotations

import dataclasses
import os
import pickle
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular
from scipy.stats import invwishart

from . import kernels
from . import sampler as smp
from .model import (N_RESPONSES, N_STATES, GlobalParams, InvalidDataError,
                    Label, PriorConfig, transition_matrix)

CHECKPOINT_MAGIC = b"RSMCKPT1"

# fallback fill for responses with no observation to carry forward
FILL_VALUES = (10.0, 80.0, 80.0, 1.5)

MH_TARGET = 0.234       # random-walk acceptance rate the adaptation aims at
MH_DECAY = 0.6          # stochastic-approximation step = 1 / iteration**decay
EPS_JITTER = 1e-8
ALPHA_SIGN_CAP = 100    # rejection budget for the sign-constrained draw
_SIGN_ROW2 = np.array([-1.0, 1.0, -1.0, 1.0])
_LOG2PI = float(np.log(2.0 * np.pi))


class UpdateError(RuntimeError):
    """An MCMC update failed; the message names the iteration and block."""


# ---------------------------------------------------------------------------
# adaptive random-walk state

class AdaptiveBlock:
    """Random-walk Metropolis bookkeeping for one parameter block.

    Tracks the running mean/covariance of the chain values and a log step
    scale nudged toward a 0.234 acceptance rate. Until 2*dim+5 values have
    been seen the proposal covariance falls back to the identity. Adaptation
    only runs while the chain is inside its burnin window.
    """

    def __init__(self, dim: int):
        self.dim = dim
        self.mean = np.zeros(dim)
        self.sq = np.zeros((dim, dim))
        self.count = 0
        self.log_scale = float(np.log(2.38 ** 2 / dim))
        self.proposals = 0
        self.accepts = 0

    def covariance(self) -> np.ndarray:
        eye = np.eye(self.dim)
        if self.count >= 2 * self.dim + 5:
            emp = self.sq / (self.count - 1)
            emp = 0.5 * (emp + emp.T)
        else:
            emp = eye
        return np.exp(self.log_scale) * (emp + EPS_JITTER * eye)

    def propose(self, x: np.ndarray, gen: np.random.Generator) -> np.ndarray:
        cov = self.covariance()
        try:
            L = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            L = np.linalg.cholesky(cov + EPS_JITTER * np.eye(self.dim))
        return x + L @ gen.standard_normal(self.dim)

    def record(self, x: np.ndarray, acc_prob: float, accepted: bool,
               iteration: int, adapting: bool) -> None:
        self.proposals += 1
        self.accepts += int(accepted)
        if not adapting:
            return
        self.log_scale += (acc_prob - MH_TARGET) / iteration ** MH_DECAY
        self.count += 1
        d = x - self.mean
        self.mean += d / self.count
        self.sq += np.outer(d, x - self.mean)

    def state(self) -> dict:
        return {"mean": self.mean.copy(), "sq": self.sq.copy(),
                "count": self.count, "log_scale": self.log_scale,
                "proposals": self.proposals, "accepts": self.accepts}

    def restore(self, st: dict) -> None:
        self.mean = np.array(st["mean"], dtype=float)
        self.sq = np.array(st["sq"], dtype=float)
        self.count = int(st["count"])
        self.log_scale = float(st["log_scale"])
        self.proposals = int(st["proposals"])
        self.accepts = int(st["accepts"])


# ---------------------------------------------------------------------------
# linear-algebra helpers

def _chol_jitter(mat: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(mat)
    except np.linalg.LinAlgError:
        return np.linalg.cholesky(mat + EPS_JITTER * np.eye(mat.shape[0]))


def precision_draw(lam: np.ndarray, v: np.ndarray,
                   gen: np.random.Generator) -> np.ndarray:
    """Sample from N(lam^-1 v, lam^-1) via the Cholesky factor of lam."""
    L = _chol_jitter(lam)
    half = solve_triangular(L, v, lower=True)
    mean = solve_triangular(L.T, half, lower=False)
    z = gen.standard_normal(lam.shape[0])
    return mean + solve_triangular(L.T, z, lower=False)


def precision_moments(lam: np.ndarray,
                      v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(mean, covariance) of the N(lam^-1 v, lam^-1) conditional."""
    cov = np.linalg.inv(lam)
    return cov @ v, cov


def _invwishart_rvs(df: float, scale: np.ndarray,
                    gen: np.random.Generator) -> np.ndarray:
    return np.asarray(invwishart.rvs(df=float(df), scale=scale,
                                     random_state=gen))


def _invwishart_logpdf(x: np.ndarray, df: float, scale: np.ndarray) -> float:
    return float(invwishart.logpdf(x, df=float(df), scale=scale))


# ---------------------------------------------------------------------------
# conjugate-update sufficient statistics
#
# Shared conventions: y is the (4, n) response matrix, a the (4, n) AR
# coefficient sequence a[r, t] = A_diag[state at t, r], mean_excl the (4, n)
# mean process with the block being updated removed, prec0 the combined
# time-1 precision G^-1 + Gamma^-1 at the subject's first state. The
# coefficient vector of the state-effect block is stacked column-major:
# entry 4*c + l is the effect of state row l (states 2..5) on response c.

def _ar_residual(y: np.ndarray, a: np.ndarray,
                 mean_excl: np.ndarray) -> np.ndarray:
    r = y - mean_excl
    return r[:, 1:] - a[:, 1:] * r[:, :-1]


def alpha_star_suffstats(y: np.ndarray, C: np.ndarray, a: np.ndarray,
                         mean_excl: np.ndarray,
                         R_inv: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Likelihood precision/shift for one subject's 16 state-effect
    coefficients. C is the (4, n) occupancy-count matrix of states 2..5."""
    U = C[None, :, 1:] - a[:, None, 1:] * C[None, :, :-1]
    E = _ar_residual(y, a, mean_excl)
    RE = R_inv @ E
    quad = np.einsum("cit,djt->cidj", U, U)
    lam = (R_inv[:, None, :, None] * quad).reshape(16, 16)
    v = np.einsum("clt,ct->cl", U, RE).reshape(16)
    return lam, v


def gamma_suffstats(y: np.ndarray, a: np.ndarray, mean_excl: np.ndarray,
                    R_inv: np.ndarray,
                    prec0: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Full conditional precision/shift for one subject's baseline vector;
    prec0 carries both the baseline prior and the time-1 likelihood term."""
    m = 1.0 - a[:, 1:]
    E = _ar_residual(y, a, mean_excl)
    lam = prec0 + R_inv * (m @ m.T)
    v = prec0 @ (y[:, 0] - mean_excl[:, 0]) + (m * (R_inv @ E)).sum(axis=1)
    return lam, v


def beta_suffstats(y: np.ndarray, a: np.ndarray, mean_excl: np.ndarray,
                   x: np.ndarray, R_inv: np.ndarray,
                   prec0: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """One subject's likelihood contribution for the transfusion-response
    coefficients; x is the cumulative administered-unit sequence."""
    d = x[None, 1:] - a[:, 1:] * x[None, :-1]
    E = _ar_residual(y, a, mean_excl)
    lam = prec0 * (x[0] * x[0]) + R_inv * (d @ d.T)
    v = x[0] * (prec0 @ (y[:, 0] - mean_excl[:, 0]))
    v = v + (d * (R_inv @ E)).sum(axis=1)
    return lam, v


def omega_suffstats(y: np.ndarray, a: np.ndarray, mean_excl: np.ndarray,
                    hr: np.ndarray, mp: np.ndarray, R_inv: np.ndarray,
                    prec0: np.ndarray, lam: np.ndarray, v: np.ndarray,
                    hr_act: np.ndarray | None = None,
                    mp_act: np.ndarray | None = None) -> None:
    """Add one subject's likelihood contribution for the medication
    coefficients into (lam, v) in place. hr doses act on response 1 and mp
    doses on response 2; rows that are identically zero can be skipped by
    passing active-row index arrays."""
    n_hr = hr.shape[0]
    if hr_act is None:
        hr_act = np.arange(n_hr)
    if mp_act is None:
        mp_act = np.arange(mp.shape[0])
    E = _ar_residual(y, a, mean_excl)
    RE = R_inv @ E
    e0 = y[:, 0] - mean_excl[:, 0]
    p0 = prec0 @ e0
    hidx = hr_act
    midx = n_hr + mp_act
    Uh = Um = None
    if hr_act.size:
        h0 = hr[hr_act, 0]
        Uh = hr[hr_act, 1:] - a[1, 1:] * hr[hr_act, :-1]
        lam[np.ix_(hidx, hidx)] += (R_inv[1, 1] * (Uh @ Uh.T)
                                    + prec0[1, 1] * np.outer(h0, h0))
        v[hidx] += Uh @ RE[1] + p0[1] * h0
    if mp_act.size:
        m0 = mp[mp_act, 0]
        Um = mp[mp_act, 1:] - a[2, 1:] * mp[mp_act, :-1]
        lam[np.ix_(midx, midx)] += (R_inv[2, 2] * (Um @ Um.T)
                                    + prec0[2, 2] * np.outer(m0, m0))
        v[midx] += Um @ RE[2] + p0[2] * m0
    if hr_act.size and mp_act.size:
        cross = (R_inv[1, 2] * (Uh @ Um.T)
                 + prec0[1, 2] * np.outer(hr[hr_act, 0], mp[mp_act, 0]))
        lam[np.ix_(hidx, midx)] += cross
        lam[np.ix_(midx, hidx)] += cross.T


def r_proposal_scale(y: np.ndarray, a: np.ndarray, mean_full: np.ndarray,
                     B0: np.ndarray) -> np.ndarray:
    """One subject's contribution to the R proposal scale: the whitened
    time-1 residual outer product plus the AR innovation outer products."""
    E = _ar_residual(y, a, mean_full)
    r1 = B0 @ (y[:, 0] - mean_full[:, 0])
    return np.outer(r1, r1) + E @ E.T


def gaussian_loglik(y: np.ndarray, s0: int, a: np.ndarray,
                    mean_full: np.ndarray, f: smp.FactorBundle) -> float:
    """Joint response log density for one subject at a fixed state path
    (the path enters through s0 and the a sequence)."""
    r0 = y[:, 0] - mean_full[:, 0]
    half = solve_triangular(f.gam_chol[s0], r0, lower=True)
    tot = -0.5 * N_RESPONSES * _LOG2PI - f.gam_ldet[s0] - 0.5 * half @ half
    E = _ar_residual(y, a, mean_full)
    if E.shape[1]:
        H = solve_triangular(f.R_chol, E, lower=True)
        tot += E.shape[1] * (-0.5 * N_RESPONSES * _LOG2PI - f.R_ldet)
        tot -= 0.5 * np.sum(H * H)
    return float(tot)


# ---------------------------------------------------------------------------
# individual non-conjugate updates

def constrained_alpha_draw(lam: np.ndarray, v: np.ndarray,
                           current: np.ndarray, gen: np.random.Generator,
                           ) -> tuple[np.ndarray, bool]:
    """Draw the 16 state-effect coefficients under the sign pattern
    (-,+,-,+) for state row 2 and (+,-,+,-) for state row 3, by rejection.
    Returns (matrix, fell_back); keeps the current value after 100 misses."""
    L = _chol_jitter(lam)
    half = solve_triangular(L, v, lower=True)
    mean = solve_triangular(L.T, half, lower=False)
    for _ in range(ALPHA_SIGN_CAP):
        draw = mean + solve_triangular(L.T, gen.standard_normal(16),
                                       lower=False)
        mat = draw.reshape((4, 4), order="F")
        if (np.all(mat[0] * _SIGN_ROW2 > 0)
                and np.all(mat[1] * _SIGN_ROW2 < 0)):
            return np.ascontiguousarray(mat), False
    return current, True


def r_mh_step(R: np.ndarray, A_diag: np.ndarray, items: list, psi_R,
              nu_R: float, gen: np.random.Generator,
              ) -> tuple[np.ndarray, bool, float]:
    """One approximate-conjugate Metropolis step for the innovation
    covariance. items holds per-subject tuples (y, s0, a, mean_full). The
    proposal is inverse-Wishart with the time-1 residuals whitened through
    B = R^{1/2} Gamma^{-1/2}; the accept ratio uses the exact target plus
    the asymmetric proposal densities in both directions.

    Returns (R_new, accepted, log_acceptance). A proposal whose scale or
    draw cannot be factorized counts as rejected.
    """
    S = A_diag.shape[0]
    psi_R = np.asarray(psi_R, dtype=float)
    f_cur = smp.build_factors(A_diag, R)
    nu_q = float(nu_R) + sum(it[0].shape[1] for it in items)

    def prop_scale(f):
        B = np.stack([f.R_chol @ np.linalg.inv(f.gam_chol[s])
                      for s in range(S)])
        sc = psi_R.copy()
        for y, s0, a, mean_full in items:
            sc += r_proposal_scale(y, a, mean_full, B[s0])
        return sc

    try:
        scale_fwd = prop_scale(f_cur)
        R_star = _invwishart_rvs(nu_q, scale_fwd, gen)
        f_star = smp.build_factors(A_diag, R_star)
        scale_rev = prop_scale(f_star)
        q_rev = _invwishart_logpdf(R, nu_q, scale_rev)
        q_fwd = _invwishart_logpdf(R_star, nu_q, scale_fwd)
    except np.linalg.LinAlgError:
        return R, False, -np.inf
    ll_cur = sum(gaussian_loglik(y, s0, a, m, f_cur)
                 for y, s0, a, m in items)
    ll_star = sum(gaussian_loglik(y, s0, a, m, f_star)
                  for y, s0, a, m in items)
    lp_cur = _invwishart_logpdf(R, nu_R, psi_R)
    lp_star = _invwishart_logpdf(R_star, nu_R, psi_R)
    log_acc = (ll_star + lp_star + q_rev) - (ll_cur + lp_cur + q_fwd)
    if np.isfinite(log_acc) and np.log(gen.random()) < log_acc:
        return R_star, True, log_acc
    return R, False, log_acc


def zeta_log_target(zflat: np.ndarray, tallies: np.ndarray,
                    zvals: np.ndarray, mu: np.ndarray,
                    sigma_diag: np.ndarray) -> float:
    """Log posterior of the flattened transition coefficients given
    per-order-count transition tallies (one (S, S) count table per distinct
    covariate value)."""
    lp = -0.5 * float(np.sum((zflat - mu) ** 2 / sigma_diag))
    zeta = zflat.reshape(12, 2)
    for v in range(zvals.shape[0]):
        T = tallies[v]
        if not T.any():
            continue
        P = transition_matrix(zeta, float(zvals[v]))
        mask = T > 0
        lp += float(np.sum(T[mask] * np.log(P[mask])))
    return lp


def pi_log_target(logits: np.ndarray, counts: np.ndarray,
                  var: float) -> float:
    """Log posterior of the initial-state logits given first-state counts."""
    lp = -0.5 * float(logits @ logits) / var
    return lp + float(counts @ smp.log_initial_distribution(logits))


# ---------------------------------------------------------------------------
# chain configuration and state

@dataclass
class ChainConfig:
    """Run-length and bookkeeping knobs for one chain.

    tally_start defaults to burnin: occupancy tallies cover iterations
    strictly past it. workers is recorded for interface compatibility and
    logged by the CLI; subject updates run in-line in subject order, which
    the sufficient-statistic combination makes scheduling-independent.
    """
    iterations: int = 10000
    burnin: int = 5000
    thin: int = 5
    seed: int = 0
    workers: int = 1
    checkpoint_every: int = 0
    checkpoint_path: str | None = None
    update_globals: bool = True
    enforce_labels: bool = True
    tally_start: int | None = None
    keep_impute_draws: bool = False

    def resolved_tally_start(self) -> int:
        return self.burnin if self.tally_start is None else self.tally_start


@dataclass
class _Subject:
    """Mutable per-encounter chain state plus cached covariate views."""
    encounter_id: str
    y: np.ndarray            # (4, n); missing cells hold the current draw
    miss: np.ndarray         # (4, n) uint8
    b0: np.ndarray           # (n,) int64 states 0..4
    alpha_star: np.ndarray   # (4, 4) rows = states 2..5
    gamma: np.ndarray        # (4,)
    x: np.ndarray            # (n,) cumulative RBC units administered
    hr: np.ndarray           # (n_hr, n) heart-rate medication doses
    mp: np.ndarray           # (n_map, n) MAP medication doses
    hr_act: np.ndarray
    mp_act: np.ndarray
    rbc_ordered: np.ndarray  # (n,) units ordered at each time
    zidx: np.ndarray         # (n,) index into the chain's distinct counts
    label: Label
    med: np.ndarray          # (4, n) medication mean contribution
    rbc: np.ndarray          # (4, n) transfusion mean contribution
    exog: np.ndarray         # (4, n) med + rbc
    miss_flat: np.ndarray    # flat indices of missing cells in y.ravel()


@dataclass
class FitResult:
    """Outputs of one chain run."""
    chain: dict
    occupancy: list          # per subject (5, n) integer tallies
    tally_count: int
    params: GlobalParams
    stats: dict
    encounter_ids: list
    impute_cells: list       # per subject flat missing-cell indices
    impute_draws: list | None  # per subject (draws, cells) array, or None


def _fill_forward(y_raw: np.ndarray, miss: np.ndarray) -> np.ndarray:
    """Replace missing cells by the last observed value in the row, or the
    plausible midpoint when nothing has been observed yet."""
    y = np.array(y_raw, dtype=float, order="C")
    for r in range(N_RESPONSES):
        last = FILL_VALUES[r]
        for t in range(y.shape[1]):
            if miss[r, t]:
                y[r, t] = last
            else:
                last = y[r, t]
    return y


def initial_params(priors: PriorConfig) -> GlobalParams:
    """Deterministic starting point: prior centers for location blocks,
    prior-scale multiples for the covariance blocks."""
    return GlobalParams(
        zeta=np.array(priors.mu_zeta, dtype=float).reshape(12, 2),
        pi_logit=np.zeros(4),
        a_logit=np.zeros((N_STATES, 4)),
        omega=np.array(priors.omega0, dtype=float),
        beta=np.array(priors.beta0, dtype=float),
        R=priors.psi_R / (priors.nu_R + 5.0),
        G=priors.psi_G / (priors.nu_G + 5.0),
        alpha_tilde=np.array(priors.alpha_tilde0,
                             dtype=float).reshape((4, 4), order="F").copy(),
        upsilon=priors.psi_alpha / (priors.nu_alpha + 17.0),
    )


def priors_digest(pri: PriorConfig) -> str:
    import hashlib
    h = hashlib.sha256()
    for f in dataclasses.fields(pri):
        h.update(f.name.encode())
        h.update(np.ascontiguousarray(
            np.asarray(getattr(pri, f.name), dtype=float)).tobytes())
    return h.hexdigest()


def save_checkpoint(path: str, payload: dict) -> None:
    """Atomic write: temp file in the same directory, then rename."""
    blob = CHECKPOINT_MAGIC + pickle.dumps(payload, protocol=4)
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(blob)
    os.replace(tmp, path)


def load_checkpoint(path: str) -> dict:
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(CHECKPOINT_MAGIC):
        raise InvalidDataError(f"{path}: not a checkpoint file")
    return pickle.loads(blob[len(CHECKPOINT_MAGIC):])


# ---------------------------------------------------------------------------

class GibbsChain:
    """One posterior chain over a fixed encounter set."""

    def __init__(self, encounters, priors: PriorConfig | None = None,
                 config: ChainConfig | None = None,
                 params: GlobalParams | None = None):
        self.config = config if config is not None else ChainConfig()
        self.encounters = list(encounters)
        for enc in self.encounters:
            enc.validate(clinical_bounds=False)
        self.total_n = int(sum(e.n for e in self.encounters))
        if priors is None:
            priors = PriorConfig.default(self.total_n)
        priors.validate()
        self.priors = priors
        n_med = len(priors.omega0)
        for enc in self.encounters:
            got = enc.hr_doses.shape[0] + enc.map_doses.shape[0]
            if got != n_med:
                raise InvalidDataError(
                    f"{enc.encounter_id}: {got} dose rows, priors expect "
                    f"{n_med}")
        self.gen = np.random.default_rng(self.config.seed)
        self.streams = kernels.make_streams(self.config.seed,
                                            len(self.encounters))
        if self.encounters:
            self.zvals = np.unique(np.concatenate(
                [np.asarray(e.rbc_ordered, dtype=float)
                 for e in self.encounters]))
        else:
            self.zvals = np.array([0.0])
        self.subjects = [self._make_subject(e) for e in self.encounters]
        self.params = (params.copy() if params is not None
                       else initial_params(priors))
        self.blocks: dict[str, AdaptiveBlock] = {
            "zeta": AdaptiveBlock(24), "pi": AdaptiveBlock(4)}
        for s in range(N_STATES):
            self.blocks[f"a{s + 1}"] = AdaptiveBlock(4)
        self.iteration = 0
        self.occ = [np.zeros((N_STATES, e.n), dtype=np.int64)
                    for e in self.encounters]
        self.tally_count = 0
        self.records: list[dict] = []
        self.impute_draws: list[list] = [[] for _ in self.encounters]
        self.stats = {"state_proposals": 0, "state_accepts": 0,
                      "state_evals": 0, "alpha_sign_fallbacks": 0,
                      "r_proposals": 0, "r_accepts": 0}
        for w in self.subjects:
            self._refresh_med(w)
            self._refresh_rbc(w)

    # -- construction -------------------------------------------------------

    def _make_subject(self, enc) -> _Subject:
        n = enc.n
        miss = np.ascontiguousarray(enc.missing.astype(np.uint8))
        y = _fill_forward(enc.y, miss)
        label = enc.label if self.config.enforce_labels else Label()
        b0 = smp.initial_states(n, label) - 1
        hr = np.ascontiguousarray(enc.hr_doses, dtype=float)
        mp = np.ascontiguousarray(enc.map_doses, dtype=float)
        return _Subject(
            encounter_id=enc.encounter_id, y=y, miss=miss, b0=b0,
            alpha_star=np.array(self.priors.alpha_tilde0,
                                dtype=float).reshape((4, 4),
                                                     order="F").copy(),
            gamma=y[:, 0].copy(),
            x=np.ascontiguousarray(enc.rbc_admin_cum, dtype=float),
            hr=hr, mp=mp,
            hr_act=np.flatnonzero(hr.any(axis=1)),
            mp_act=np.flatnonzero(mp.any(axis=1)),
            rbc_ordered=np.ascontiguousarray(enc.rbc_ordered, dtype=float),
            zidx=np.searchsorted(self.zvals,
                                 np.asarray(enc.rbc_ordered, dtype=float)),
            label=label,
            med=np.zeros((N_RESPONSES, n)), rbc=np.zeros((N_RESPONSES, n)),
            exog=np.zeros((N_RESPONSES, n)),
            miss_flat=np.flatnonzero(miss.ravel()))

    def _refresh_med(self, w: _Subject) -> None:
        n_hr = w.hr.shape[0]
        w.med[:] = 0.0
        if w.hr_act.size:
            w.med[1] = self.params.omega[w.hr_act] @ w.hr[w.hr_act]
        if w.mp_act.size:
            w.med[2] = self.params.omega[n_hr + w.mp_act] @ w.mp[w.mp_act]
        w.exog[:] = w.med + w.rbc

    def _refresh_rbc(self, w: _Subject) -> None:
        w.rbc[:] = np.outer(self.params.beta, w.x)
        w.exog[:] = w.med + w.rbc

    def _log_transition_tables(self, zeta: np.ndarray) -> np.ndarray:
        out = np.empty((self.zvals.shape[0], N_STATES, N_STATES))
        for v in range(self.zvals.shape[0]):
            P = transition_matrix(zeta, float(self.zvals[v]))
            lp = np.full((N_STATES, N_STATES), -np.inf)
            np.log(P, out=lp, where=P > 0)
            out[v] = lp
        return out

    # -- one iteration ------------------------------------------------------

    def _iterate(self) -> None:
        cfg = self.config
        gen = self.gen
        pri = self.priors
        params = self.params
        it = self.iteration + 1
        adapting = it <= cfg.burnin
        step = "setup"
        try:
            factors = smp.build_factors(params.a_diag(), params.R)
            log_pi = smp.log_initial_distribution(params.pi_logit)
            log_Pv = self._log_transition_tables(params.zeta)
            G_inv = np.linalg.inv(params.G)
            R_inv = factors.R_inv
            ups_inv = np.linalg.inv(params.upsilon)

            step = "sweep_states"
            p = smp.draw_block_length(gen)
            ctxs = []
            for i, w in enumerate(self.subjects):
                ctx = smp.make_ctx(w.y, w.gamma, w.exog, w.alpha_star,
                                   factors, log_Pv[w.zidx], log_pi,
                                   label=w.label)
                nprop, nacc, nev = smp.sweep_states0(ctx, w.b0, p,
                                                     self.streams[i])
                self.stats["state_proposals"] += int(nprop)
                self.stats["state_accepts"] += int(nacc)
                self.stats["state_evals"] += int(nev)
                ctxs.append(ctx)

            step = "impute_missing"
            for i, w in enumerate(self.subjects):
                if w.miss_flat.size:
                    smp.impute_missing(ctxs[i], w.miss, w.b0, factors,
                                       G_inv, self.streams[i])

            occ = [smp.occupancy_matrix(w.b0, N_STATES, 1)
                   for w in self.subjects]
            aseq = [factors.A_diag[w.b0].T.copy() for w in self.subjects]
            prec0s = [G_inv + factors.gam_inv[w.b0[0]]
                      for w in self.subjects]

            step = "gibbs_gamma/alpha_star"
            vec_tilde = params.alpha_tilde.reshape(16, order="F")
            for i, w in enumerate(self.subjects):
                alpha_c = w.alpha_star.T @ occ[i]
                lam, v = gamma_suffstats(w.y, aseq[i], alpha_c + w.exog,
                                         R_inv, prec0s[i])
                w.gamma = precision_draw(lam, v, gen)
                lam, v = alpha_star_suffstats(
                    w.y, occ[i], aseq[i], w.gamma[:, None] + w.exog, R_inv)
                lam += ups_inv
                v = v + ups_inv @ vec_tilde
                w.alpha_star, fell_back = constrained_alpha_draw(
                    lam, v, w.alpha_star, gen)
                self.stats["alpha_sign_fallbacks"] += int(fell_back)

            if cfg.update_globals:
                step = "gibbs_omega"
                lam = np.diag(1.0 / pri.sigma_omega_diag)
                v = pri.omega0 / pri.sigma_omega_diag
                for i, w in enumerate(self.subjects):
                    mean_excl = (w.gamma[:, None] + w.alpha_star.T @ occ[i]
                                 + w.rbc)
                    omega_suffstats(w.y, aseq[i], mean_excl, w.hr, w.mp,
                                    R_inv, prec0s[i], lam, v, w.hr_act,
                                    w.mp_act)
                params.omega = precision_draw(lam, v, gen)
                for w in self.subjects:
                    self._refresh_med(w)

                step = "gibbs_beta"
                lam = np.diag(1.0 / pri.sigma_beta_diag)
                v = pri.beta0 / pri.sigma_beta_diag
                for i, w in enumerate(self.subjects):
                    mean_excl = (w.gamma[:, None] + w.alpha_star.T @ occ[i]
                                 + w.med)
                    l2, v2 = beta_suffstats(w.y, aseq[i], mean_excl, w.x,
                                            R_inv, prec0s[i])
                    lam += l2
                    v = v + v2
                params.beta = precision_draw(lam, v, gen)
                for w in self.subjects:
                    self._refresh_rbc(w)

                step = "gibbs_alpha_tilde"
                N = len(self.subjects)
                sig_inv = 1.0 / pri.sigma_alpha_diag
                lam = np.diag(sig_inv) + N * ups_inv
                vsum = np.zeros(16)
                for w in self.subjects:
                    vsum += w.alpha_star.reshape(16, order="F")
                v = sig_inv * pri.alpha_tilde0 + ups_inv @ vsum
                params.alpha_tilde = np.ascontiguousarray(
                    precision_draw(lam, v, gen).reshape((4, 4), order="F"))

                step = "gibbs_upsilon"
                vt = params.alpha_tilde.reshape(16, order="F")
                scale = np.array(pri.psi_alpha, dtype=float)
                for w in self.subjects:
                    d = w.alpha_star.reshape(16, order="F") - vt
                    scale += np.outer(d, d)
                params.upsilon = _invwishart_rvs(pri.nu_alpha + N, scale,
                                                 gen)

                step = "gibbs_G"
                scale = np.array(pri.psi_G, dtype=float)
                for w in self.subjects:
                    r = w.gamma - (w.y[:, 0] - w.exog[:, 0])
                    scale += np.outer(r, r)
                params.G = _invwishart_rvs(pri.nu_G + N, scale, gen)

                step = "mh_R"
                mean_full = [w.gamma[:, None] + w.alpha_star.T @ occ[i]
                             + w.exog
                             for i, w in enumerate(self.subjects)]
                items = [(w.y, int(w.b0[0]), aseq[i], mean_full[i])
                         for i, w in enumerate(self.subjects)]
                R_new, accepted, _ = r_mh_step(params.R, params.a_diag(),
                                               items, pri.psi_R, pri.nu_R,
                                               gen)
                self.stats["r_proposals"] += 1
                self.stats["r_accepts"] += int(accepted)
                params.R = R_new

                step = "mh_zeta"
                tallies = np.zeros((self.zvals.shape[0], N_STATES,
                                    N_STATES), dtype=np.int64)
                counts0 = np.zeros(N_STATES, dtype=np.int64)
                for w in self.subjects:
                    counts0[w.b0[0]] += 1
                    if w.b0.shape[0] > 1:
                        np.add.at(tallies,
                                  (w.zidx[1:], w.b0[:-1], w.b0[1:]), 1)
                newz, _ = self._mh_block(
                    "zeta", params.zeta.reshape(24).copy(),
                    lambda zf: zeta_log_target(zf, tallies, self.zvals,
                                               pri.mu_zeta,
                                               pri.sigma_zeta_diag),
                    it, adapting)
                params.zeta = newz.reshape(12, 2).copy()

                step = "mh_pi"
                newp, _ = self._mh_block(
                    "pi", params.pi_logit.copy(),
                    lambda lg: pi_log_target(lg, counts0,
                                             pri.pi_logit_var),
                    it, adapting)
                params.pi_logit = newp

                step = "mh_a"
                factors = smp.build_factors(params.a_diag(), params.R)
                ll_cur = sum(
                    gaussian_loglik(w.y, int(w.b0[0]), aseq[i],
                                    mean_full[i], factors)
                    for i, w in enumerate(self.subjects))
                for s in range(N_STATES):
                    block = self.blocks[f"a{s + 1}"]
                    cur = params.a_logit[s].copy()
                    prop = block.propose(cur, gen)
                    params.a_logit[s] = prop
                    f_star = smp.build_factors(params.a_diag(), params.R)
                    a_star = [f_star.A_diag[w.b0].T
                              for w in self.subjects]
                    ll_star = sum(
                        gaussian_loglik(w.y, int(w.b0[0]), a_star[i],
                                        mean_full[i], f_star)
                        for i, w in enumerate(self.subjects))
                    log_acc = (ll_star - ll_cur
                               - 0.5 * float(prop @ prop - cur @ cur)
                               / pri.a_logit_var)
                    acc_prob = (float(np.exp(min(0.0, log_acc)))
                                if np.isfinite(log_acc) else 0.0)
                    u = gen.random()
                    took = bool(np.isfinite(log_acc)
                                and np.log(u) < log_acc)
                    if took:
                        ll_cur = ll_star
                        factors = f_star
                        aseq = a_star
                    else:
                        params.a_logit[s] = cur
                    block.record(params.a_logit[s].copy(), acc_prob, took,
                                 it, adapting)
        except Exception as exc:
            raise UpdateError(
                f"iteration {it}, block {step}: {exc!r}") from exc

        self.iteration = it
        if it > cfg.resolved_tally_start():
            self.tally_count += 1
            for i, w in enumerate(self.subjects):
                self.occ[i][w.b0, np.arange(w.b0.shape[0])] += 1
            if cfg.keep_impute_draws and it % cfg.thin == 0:
                for i, w in enumerate(self.subjects):
                    if w.miss_flat.size:
                        self.impute_draws[i].append(
                            w.y.ravel()[w.miss_flat].copy())
        if it % cfg.thin == 0:
            self.records.append(self._snapshot_row(it))

    def _mh_block(self, name: str, x: np.ndarray, target, it: int,
                  adapting: bool) -> tuple[np.ndarray, bool]:
        block = self.blocks[name]
        gen = self.gen
        prop = block.propose(x, gen)
        log_acc = target(prop) - target(x)
        acc_prob = (float(np.exp(min(0.0, log_acc)))
                    if np.isfinite(log_acc) else 0.0)
        u = gen.random()
        took = bool(np.isfinite(log_acc) and np.log(u) < log_acc)
        new = prop if took else x
        block.record(new.copy(), acc_prob, took, it, adapting)
        return new, took

    def _snapshot_row(self, it: int) -> dict:
        p = self.params
        return {
            "iteration": it,
            "zeta": p.zeta.reshape(24).copy(),
            "pi": p.pi(),
            "a": p.a_diag().reshape(20).copy(),
            "omega": p.omega.copy(),
            "beta": p.beta.copy(),
            "alpha_tilde": p.alpha_tilde.reshape(16, order="F").copy(),
            "R": p.R.reshape(16).copy(),
            "G": p.G.reshape(16).copy(),
            "upsilon": p.upsilon.reshape(256).copy(),
        }

    # -- driving ------------------------------------------------------------

    def run(self, progress=None) -> "FitResult":
        cfg = self.config
        while self.iteration < cfg.iterations:
            self._iterate()
            if (cfg.checkpoint_every and cfg.checkpoint_path
                    and self.iteration % cfg.checkpoint_every == 0):
                self.save_checkpoint(cfg.checkpoint_path)
            if progress is not None:
                progress(self)
        if cfg.checkpoint_path and cfg.checkpoint_every:
            self.save_checkpoint(cfg.checkpoint_path)
        return self.result()

    def result(self) -> FitResult:
        if self.records:
            rows = self.records
        else:
            rows = []
        template = self._snapshot_row(0)
        chain: dict = {}
        for k, tv in template.items():
            if rows:
                vals = [r[k] for r in rows]
                chain[k] = (np.array(vals) if k == "iteration"
                            else np.stack(vals))
            else:
                shape = (0,) if k == "iteration" else (0,) + np.shape(tv)
                chain[k] = np.zeros(shape)
        stats = dict(self.stats)
        for name, b in self.blocks.items():
            stats[f"{name}_proposals"] = b.proposals
            stats[f"{name}_accepts"] = b.accepts
        draws = None
        if self.config.keep_impute_draws:
            draws = []
            for i, w in enumerate(self.subjects):
                if self.impute_draws[i]:
                    draws.append(np.array(self.impute_draws[i]))
                else:
                    draws.append(np.zeros((0, w.miss_flat.size)))
        return FitResult(
            chain=chain,
            occupancy=[o.copy() for o in self.occ],
            tally_count=self.tally_count,
            params=self.params.copy(),
            stats=stats,
            encounter_ids=[w.encounter_id for w in self.subjects],
            impute_cells=[w.miss_flat.copy() for w in self.subjects],
            impute_draws=draws)

    # -- checkpointing ------------------------------------------------------

    def checkpoint_payload(self) -> dict:
        return {
            "version": 1,
            "iteration": self.iteration,
            "params": dataclasses.asdict(self.params),
            "subjects": [{"y": w.y.copy(), "b0": w.b0.copy(),
                          "alpha_star": w.alpha_star.copy(),
                          "gamma": w.gamma.copy()}
                         for w in self.subjects],
            "streams": self.streams.copy(),
            "gen_state": self.gen.bit_generator.state,
            "blocks": {k: b.state() for k, b in self.blocks.items()},
            "occ": [o.copy() for o in self.occ],
            "tally_count": self.tally_count,
            "records": list(self.records),
            "impute_draws": [list(d) for d in self.impute_draws],
            "stats": dict(self.stats),
            "config": dataclasses.asdict(self.config),
            "priors_digest": priors_digest(self.priors),
        }

    def save_checkpoint(self, path: str) -> None:
        save_checkpoint(path, self.checkpoint_payload())

    @classmethod
    def resume(cls, path: str, encounters,
               priors: PriorConfig | None = None,
               config: ChainConfig | None = None) -> "GibbsChain":
        payload = load_checkpoint(path)
        cfg = config if config is not None else ChainConfig(
            **payload["config"])
        chain = cls(encounters, priors, cfg)
        if priors_digest(chain.priors) != payload["priors_digest"]:
            raise InvalidDataError(
                "checkpoint was written under different priors")
        chain.params = GlobalParams(**{k: np.asarray(v, dtype=float)
                                       for k, v
                                       in payload["params"].items()})
        if len(payload["subjects"]) != len(chain.subjects):
            raise InvalidDataError(
                "checkpoint subject count does not match the dataset")
        for w, st in zip(chain.subjects, payload["subjects"]):
            w.y[:] = st["y"]
            w.b0[:] = st["b0"]
            w.alpha_star = np.array(st["alpha_star"])
            w.gamma = np.array(st["gamma"])
        chain.streams = np.array(payload["streams"])
        chain.gen.bit_generator.state = payload["gen_state"]
        for k, b in chain.blocks.items():
            b.restore(payload["blocks"][k])
        chain.occ = [np.array(o) for o in payload["occ"]]
        chain.tally_count = int(payload["tally_count"])
        chain.records = list(payload["records"])
        chain.impute_draws = [list(d) for d in payload["impute_draws"]]
        chain.stats = dict(payload["stats"])
        chain.iteration = int(payload["iteration"])
        for w in chain.subjects:
            chain._refresh_med(w)
            chain._refresh_rbc(w)
        return chain


# ---------------------------------------------------------------------------
# posterior summaries and drivers

def chain_medians(chain: dict, start_iteration: int = 0) -> dict:
    """Element-wise medians of every recorded global over chain rows with
    iteration > start_iteration."""
    its = np.asarray(chain["iteration"])
    keep = its > start_iteration
    if not np.any(keep):
        raise ValueError(
            f"no chain rows past iteration {start_iteration}")
    out = {}
    for k, arr in chain.items():
        if k == "iteration":
            continue
        out[k] = np.median(np.asarray(arr)[keep], axis=0)
    return out


def _psd_clip(mat: np.ndarray, floor: float = 1e-10) -> np.ndarray:
    """Symmetrize; if not factorizable, clip eigenvalues up to floor."""
    mat = 0.5 * (mat + mat.T)
    try:
        np.linalg.cholesky(mat)
        return mat
    except np.linalg.LinAlgError:
        w, V = np.linalg.eigh(mat)
        return (V * np.maximum(w, floor)) @ V.T


def params_from_medians(med: dict) -> GlobalParams:
    """Rebuild a parameter set from element-wise chain medians. Probability
    and AR scales are mapped back through their logits; the covariance
    medians are eigenvalue-clipped when not positive definite."""
    pi = np.clip(np.asarray(med["pi"], dtype=float), 1e-12, None)
    a = np.clip(np.asarray(med["a"], dtype=float).reshape(N_STATES, 4),
                1e-12, 1.0 - 1e-12)
    return GlobalParams(
        zeta=np.asarray(med["zeta"], dtype=float).reshape(12, 2).copy(),
        pi_logit=np.log(pi[1:] / pi[0]),
        a_logit=np.log(a / (1.0 - a)),
        omega=np.asarray(med["omega"], dtype=float).copy(),
        beta=np.asarray(med["beta"], dtype=float).copy(),
        R=_psd_clip(np.asarray(med["R"], dtype=float).reshape(4, 4)),
        G=_psd_clip(np.asarray(med["G"], dtype=float).reshape(4, 4)),
        alpha_tilde=np.ascontiguousarray(
            np.asarray(med["alpha_tilde"],
                       dtype=float).reshape((4, 4), order="F")),
        upsilon=_psd_clip(np.asarray(med["upsilon"],
                                     dtype=float).reshape(16, 16)),
    )


def run_chain(encounters, priors: PriorConfig | None = None,
              config: ChainConfig | None = None,
              params: GlobalParams | None = None,
              progress=None) -> FitResult:
    """Fit a chain start to finish and return its outputs."""
    return GibbsChain(encounters, priors, config, params).run(progress)


def run_decode(encounters, params: GlobalParams,
               priors: PriorConfig | None = None, iterations: int = 2000,
               seed: int = 0, thin: int = 5, progress=None) -> FitResult:
    """Sample state sequences, subject coefficients, and imputations for
    the supplied encounters with every global frozen. Label constraints are
    disabled; occupancy tallies and imputation draws cover the last half of
    the iterations."""
    config = ChainConfig(iterations=iterations, burnin=iterations // 2,
                         thin=thin, seed=seed, update_globals=False,
                         enforce_labels=False, keep_impute_draws=True)
    return GibbsChain(encounters, priors, config, params).run(progress)
