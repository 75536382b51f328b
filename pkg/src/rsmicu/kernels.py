"""Hot loops for state sampling and imputation.

Everything in this module is written against plain float64/int64 arrays with
0-based states (0..S-1) so that the same source compiles under numba's njit;
the public layer in rsmicu.sampler translates from the 1-based API. Set
RSMICU_NO_NUMBA=1 to skip jitting and run the identical code as pure Python,
which is slow but dependency-free and handy for debugging.

Conventions shared by every kernel here:
  y        (4, n)   response matrix, fully populated (imputed values filled in)
  gamma    (4,)     subject intercept
  exog     (4, n)   medication plus transfusion mean terms (no intercept)
  alphaT   (4, S-1) state-slope matrix transposed: response x state-offset
  A_diag   (S, 4)   per-state AR coefficients (rows of zeros disable the AR)
  R_chol/R_ldet     Cholesky factor of R and sum(log diag)
  gam_chol/gam_ldet (S,4,4)/(S,) same for the time-1 covariance of each state
  log_P    (n, S, S) log transition matrix for the step into time t (t>=1)
  log_pi   (S,)     log initial distribution
  adj      (S, S)   0/1 allowed-transition matrix (self-loops included)
  count_start       first 0-based position included in occupancy counts
  pairs/poff/pcnt   flattened two-step bridge tables; anchor index S = free
  rng      (6,)     in-place combined multiple-recursive generator state

The occupancy vector c carried through the loops always holds the counts of
states 1..S-1 (0-based) over positions [count_start, t-1] or [count_start, t]
as noted; state 0 never contributes.
"""
from __future__ import annotations

import os

import numpy as np

NUMBA_DISABLED = os.environ.get("RSMICU_NO_NUMBA", "") == "1"
if not NUMBA_DISABLED:
    try:
        from numba import njit as _njit
    except ImportError:
        NUMBA_DISABLED = True

BACKEND = "numpy" if NUMBA_DISABLED else "numba"


def _maybe_jit(fn):
    if NUMBA_DISABLED:
        return fn
    return _njit(cache=True)(fn)


# ---------------------------------------------------------------------------
# random number generation: L'Ecuyer's combined multiple-recursive generator
# (MRG32k3a). All arithmetic stays below 2**53 so float64 is exact and the
# jitted and interpreted paths agree.

_M1 = 4294967087.0
_M2 = 4294944443.0
_A12 = 1403580.0
_A13N = 810728.0
_A21 = 527612.0
_A23N = 1370589.0
_NORM = 2.328306549295727688e-10
_TWO_PI = 6.283185307179586476925287


@_maybe_jit
def mrg_uniform(rng):
    p1 = _A12 * rng[1] - _A13N * rng[0]
    k = np.floor(p1 / _M1)
    p1 -= k * _M1
    if p1 < 0.0:
        p1 += _M1
    rng[0] = rng[1]
    rng[1] = rng[2]
    rng[2] = p1
    p2 = _A21 * rng[5] - _A23N * rng[3]
    k = np.floor(p2 / _M2)
    p2 -= k * _M2
    if p2 < 0.0:
        p2 += _M2
    rng[3] = rng[4]
    rng[4] = rng[5]
    rng[5] = p2
    if p1 <= p2:
        return (p1 - p2 + _M1) * _NORM
    return (p1 - p2) * _NORM


@_maybe_jit
def mrg_normal(rng):
    u1 = mrg_uniform(rng)
    u2 = mrg_uniform(rng)
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(_TWO_PI * u2)


def _splitmix64(state):
    state = (state + 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    return state, z ^ (z >> 31)


def seed_stream(seed: int) -> np.ndarray:
    """Expand one integer into a valid 6-word generator state."""
    s = int(seed) & 0xFFFFFFFFFFFFFFFF
    out = np.empty(6)
    for i in range(3):
        s, z = _splitmix64(s)
        out[i] = float(1 + z % (int(_M1) - 1))
    for i in range(3, 6):
        s, z = _splitmix64(s)
        out[i] = float(1 + z % (int(_M2) - 1))
    return out


def make_streams(master_seed: int, count: int) -> np.ndarray:
    """(count, 6) array of independent per-subject generator states."""
    s = (int(master_seed) ^ 0xD1B54A32D192ED03) & 0xFFFFFFFFFFFFFFFF
    out = np.empty((count, 6))
    for i in range(count):
        s, z = _splitmix64(s)
        out[i] = seed_stream(z)
    return out


# ---------------------------------------------------------------------------
# small dense linear algebra (d <= 4 everywhere below)

_LOG_2PI = 1.8378770664093454835607


@_maybe_jit
def _chol_small(A, L, d):
    """Lower Cholesky of A (d, d) into L. Returns 0 on success, 1 on a
    non-positive pivot."""
    for i in range(d):
        for j in range(i + 1):
            s = A[i, j]
            for k in range(j):
                s -= L[i, k] * L[j, k]
            if i == j:
                if s <= 0.0:
                    return 1
                L[i, i] = np.sqrt(s)
            else:
                L[i, j] = s / L[j, j]
        for j in range(i + 1, d):
            L[i, j] = 0.0
    return 0


@_maybe_jit
def _quad_logpdf(L, ldet, r, d):
    """Gaussian log density at residual r with covariance L L^T; ldet is
    sum(log(diag(L)))."""
    q = 0.0
    u = np.empty(d)
    for i in range(d):
        s = r[i]
        for k in range(i):
            s -= L[i, k] * u[k]
        u[i] = s / L[i, i]
        q += u[i] * u[i]
    return -0.5 * d * _LOG_2PI - ldet - 0.5 * q


@_maybe_jit
def _solve_spd(A, bvec, out, d):
    """out = A^{-1} bvec for symmetric positive definite A via Cholesky."""
    L = np.empty((d, d))
    _chol_small(A, L, d)
    u = np.empty(d)
    for i in range(d):
        s = bvec[i]
        for k in range(i):
            s -= L[i, k] * u[k]
        u[i] = s / L[i, i]
    for i in range(d - 1, -1, -1):
        s = u[i]
        for k in range(i + 1, d):
            s -= L[k, i] * out[k]
        out[i] = s / L[i, i]


# ---------------------------------------------------------------------------
# conditional response density

@_maybe_jit
def _nu_at(gamma, exog, alphaT, c, t, out):
    """Mean at time t given occupancy counts c through t."""
    Sm1 = alphaT.shape[1]
    for j in range(4):
        v = gamma[j] + exog[j, t]
        for l in range(Sm1):
            v += alphaT[j, l] * c[l]
        out[j] = v


@_maybe_jit
def _logf_at(y, gamma, exog, alphaT, A_diag, R_chol, R_ldet, gam_chol,
             gam_ldet, count_start, t, m, c_prev, nu_prev):
    """log f(y_t | state m at t, history). c_prev holds counts through t-1
    and nu_prev the mean at t-1 (ignored when t == 0)."""
    Sm1 = alphaT.shape[1]
    nu_t = np.empty(4)
    for j in range(4):
        v = gamma[j] + exog[j, t]
        for l in range(Sm1):
            v += alphaT[j, l] * c_prev[l]
        nu_t[j] = v
    if t >= count_start and m >= 1:
        for j in range(4):
            nu_t[j] += alphaT[j, m - 1]
    r = np.empty(4)
    if t == 0:
        for j in range(4):
            r[j] = y[j, 0] - nu_t[j]
        return _quad_logpdf(gam_chol[m], gam_ldet[m], r, 4)
    for j in range(4):
        pred = nu_t[j] + A_diag[m, j] * (y[j, t - 1] - nu_prev[j])
        r[j] = y[j, t] - pred
    return _quad_logpdf(R_chol, R_ldet, r, 4)


@_maybe_jit
def seq_loglik(y, b, gamma, exog, alphaT, A_diag, R_chol, R_ldet, gam_chol,
               gam_ldet, count_start):
    """Sum of the per-time conditional log densities for state path b."""
    n = y.shape[1]
    Sm1 = alphaT.shape[1]
    c = np.zeros(Sm1)
    nu_prev = np.empty(4)
    total = 0.0
    for t in range(n):
        total += _logf_at(y, gamma, exog, alphaT, A_diag, R_chol, R_ldet,
                          gam_chol, gam_ldet, count_start, t, b[t], c,
                          nu_prev)
        if t >= count_start and b[t] >= 1:
            c[b[t] - 1] += 1.0
        _nu_at(gamma, exog, alphaT, c, t, nu_prev)
    return total


@_maybe_jit
def _counts_before(b, count_start, k, c):
    """Occupancy counts over positions [count_start, k-1] into c."""
    Sm1 = c.shape[0]
    for l in range(Sm1):
        c[l] = 0.0
    for j in range(count_start, k):
        if b[j] >= 1:
            c[b[j] - 1] += 1.0


@_maybe_jit
def _label_ok(b, label_type, label_limit):
    """label_type 1 demands state 1 (0-based) somewhere in [0, limit];
    label_type 2 forbids states 1 and 2 everywhere; 0 accepts anything."""
    n = b.shape[0]
    if label_type == 1:
        top = label_limit if label_limit < n - 1 else n - 1
        for t in range(top + 1):
            if b[t] == 1:
                return True
        return False
    if label_type == 2:
        for t in range(n):
            if b[t] == 1 or b[t] == 2:
                return False
        return True
    return True


# ---------------------------------------------------------------------------
# forward proposal machinery

@_maybe_jit
def _forward_pass(b_arr, sample_mode, k0, t_end, y, gamma, exog, alphaT,
                  A_diag, R_chol, R_ldet, gam_chol, gam_ldet, log_P, log_pi,
                  adj, count_start, c, nu_prev, rng):
    """One-state-at-a-time pass over positions k0..t_end.

    In sample mode each position is drawn proportional to (transition
    probability) x (response density) and written into b_arr; otherwise the
    existing states are scored. c must enter holding counts through k0-1 and
    nu_prev the mean at k0-1; both leave updated through t_end. Returns
    (sum of log normalizers, sum of log normalized weights of the realized
    states, valid flag).
    """
    S = log_pi.shape[0]
    sum_logD = 0.0
    sum_lw = 0.0
    lw = np.empty(S)
    s_prev = b_arr[k0 - 1] if k0 > 0 else -1
    for t in range(k0, t_end + 1):
        hi = -np.inf
        for m in range(S):
            if t == 0:
                lp = log_pi[m]
            elif adj[s_prev, m] == 1:
                lp = log_P[t, s_prev, m]
            else:
                lw[m] = -np.inf
                continue
            lw[m] = lp + _logf_at(y, gamma, exog, alphaT, A_diag, R_chol,
                                  R_ldet, gam_chol, gam_ldet, count_start,
                                  t, m, c, nu_prev)
            if lw[m] > hi:
                hi = lw[m]
        tot = 0.0
        for m in range(S):
            if lw[m] > -np.inf:
                tot += np.exp(lw[m] - hi)
        logD = hi + np.log(tot)
        if sample_mode:
            u = mrg_uniform(rng) * tot
            acc = 0.0
            m_t = -1
            for m in range(S):
                if lw[m] > -np.inf:
                    acc += np.exp(lw[m] - hi)
                    m_t = m
                    if u <= acc:
                        break
            b_arr[t] = m_t
        else:
            m_t = b_arr[t]
            if not lw[m_t] > -np.inf:
                return sum_logD, sum_lw, False
        sum_logD += logD
        sum_lw += lw[m_t] - logD
        if t >= count_start and m_t >= 1:
            c[m_t - 1] += 1.0
        _nu_at(gamma, exog, alphaT, c, t, nu_prev)
        s_prev = m_t
    return sum_logD, sum_lw, True


@_maybe_jit
def _f_tail(b, bp, t_start, last_changed, c_c, c_p, nu_c, nu_p, y, gamma,
            exog, alphaT, A_diag, R_chol, R_ldet, gam_chol, gam_ldet,
            count_start):
    """Sum over t >= t_start of log f(bp) - log f(b). Stops once both paths
    agree beyond last_changed and carry identical occupancy counts, because
    every later term cancels exactly."""
    n = b.shape[0]
    Sm1 = c_c.shape[0]
    acc = 0.0
    for t in range(t_start, n):
        acc += _logf_at(y, gamma, exog, alphaT, A_diag, R_chol, R_ldet,
                        gam_chol, gam_ldet, count_start, t, bp[t], c_p, nu_p)
        acc -= _logf_at(y, gamma, exog, alphaT, A_diag, R_chol, R_ldet,
                        gam_chol, gam_ldet, count_start, t, b[t], c_c, nu_c)
        if t >= count_start:
            if bp[t] >= 1:
                c_p[bp[t] - 1] += 1.0
            if b[t] >= 1:
                c_c[b[t] - 1] += 1.0
        if t >= last_changed:
            same = True
            for l in range(Sm1):
                if c_p[l] != c_c[l]:
                    same = False
                    break
            if same:
                return acc
        if t + 1 < n:
            _nu_at(gamma, exog, alphaT, c_p, t, nu_p)
            _nu_at(gamma, exog, alphaT, c_c, t, nu_c)
    return acc


@_maybe_jit
def propose_forward_block(b, k0, p, y, gamma, exog, alphaT, A_diag, R_chol,
                          R_ldet, gam_chol, gam_ldet, log_P, log_pi, adj,
                          count_start, pairs, poff, pcnt, rng):
    """Block proposal: forward-sample positions k0..kmax-2, then draw the
    closing pair uniformly from the two-step bridge set. Returns
    (proposal, log accept ratio, log q(prop|cur), log q(cur|prop), evals)."""
    n = b.shape[0]
    S = log_pi.shape[0]
    Sm1 = S - 1
    kmax = k0 + p - 1
    if kmax > n - 1:
        kmax = n - 1
    bp = b.copy()

    c_p = np.empty(Sm1)
    _counts_before(b, count_start, k0, c_p)
    nu_p = np.empty(4)
    if k0 > 0:
        _nu_at(gamma, exog, alphaT, c_p, k0 - 1, nu_p)
    sumD_f, sumlw_f, _ = _forward_pass(
        bp, True, k0, kmax - 2, y, gamma, exog, alphaT, A_diag, R_chol,
        R_ldet, gam_chol, gam_ldet, log_P, log_pi, adj, count_start, c_p,
        nu_p, rng)

    r_idx = bp[kmax + 1] if kmax + 1 <= n - 1 else S
    left = bp[kmax - 2]
    cnt_f = pcnt[left, r_idx]
    u = mrg_uniform(rng)
    evals = S * (kmax - k0 - 1) + cnt_f
    if cnt_f == 0:
        return bp, -np.inf, 0.0, 0.0, evals
    idx = int(u * cnt_f)
    if idx >= cnt_f:
        idx = cnt_f - 1
    row = poff[left, r_idx] + idx
    bp[kmax - 1] = pairs[row, 0]
    bp[kmax] = pairs[row, 1]

    c_c = np.empty(Sm1)
    _counts_before(b, count_start, k0, c_c)
    nu_c = np.empty(4)
    if k0 > 0:
        _nu_at(gamma, exog, alphaT, c_c, k0 - 1, nu_c)
    sumD_r, sumlw_r, _ = _forward_pass(
        b, False, k0, kmax - 2, y, gamma, exog, alphaT, A_diag, R_chol,
        R_ldet, gam_chol, gam_ldet, log_P, log_pi, adj, count_start, c_c,
        nu_c, rng)
    cnt_r = pcnt[b[kmax - 2], r_idx]

    logq_fwd = sumlw_f - np.log(float(cnt_f))
    logq_rev = sumlw_r - np.log(float(cnt_r))
    delta = sumD_f - sumD_r + np.log(float(cnt_f)) - np.log(float(cnt_r))
    for tt in range(kmax - 1, kmax + 2):
        if tt > n - 1:
            break
        delta += log_P[tt, bp[tt - 1], bp[tt]] - log_P[tt, b[tt - 1], b[tt]]
    delta += _f_tail(b, bp, kmax - 1, kmax, c_c, c_p, nu_c, nu_p, y, gamma,
                     exog, alphaT, A_diag, R_chol, R_ldet, gam_chol,
                     gam_ldet, count_start)
    return bp, delta, logq_fwd, logq_rev, evals


@_maybe_jit
def propose_forward_full(b, y, gamma, exog, alphaT, A_diag, R_chol, R_ldet,
                         gam_chol, gam_ldet, log_P, log_pi, adj, count_start,
                         rng):
    """Whole-sequence forward proposal; the accept ratio reduces to the
    difference of the forward normalizers."""
    n = b.shape[0]
    S = log_pi.shape[0]
    Sm1 = S - 1
    bp = b.copy()
    c_p = np.zeros(Sm1)
    nu_p = np.empty(4)
    sumD_f, sumlw_f, _ = _forward_pass(
        bp, True, 0, n - 1, y, gamma, exog, alphaT, A_diag, R_chol, R_ldet,
        gam_chol, gam_ldet, log_P, log_pi, adj, count_start, c_p, nu_p, rng)
    c_c = np.zeros(Sm1)
    nu_c = np.empty(4)
    sumD_r, sumlw_r, _ = _forward_pass(
        b, False, 0, n - 1, y, gamma, exog, alphaT, A_diag, R_chol, R_ldet,
        gam_chol, gam_ldet, log_P, log_pi, adj, count_start, c_c, nu_c, rng)
    delta = sumD_f - sumD_r
    return bp, delta, sumlw_f, sumlw_r, S * n


@_maybe_jit
def propose_pair(b, k0, y, gamma, exog, alphaT, A_diag, R_chol, R_ldet,
                 gam_chol, gam_ldet, log_P, log_pi, adj, count_start, pairs,
                 poff, pcnt, rng):
    """Uniform redraw of the adjacent pair (k0, k0+1) from the bridge set
    anchored by its unchanged neighbors; the bridge cardinality cancels."""
    n = b.shape[0]
    S = log_pi.shape[0]
    Sm1 = S - 1
    bp = b.copy()
    l_idx = b[k0 - 1] if k0 > 0 else S
    r_idx = b[k0 + 2] if k0 + 2 <= n - 1 else S
    cnt = pcnt[l_idx, r_idx]
    u = mrg_uniform(rng)
    if cnt == 0:
        return bp, -np.inf, 0.0, 0.0, 0
    idx = int(u * cnt)
    if idx >= cnt:
        idx = cnt - 1
    row = poff[l_idx, r_idx] + idx
    bp[k0] = pairs[row, 0]
    bp[k0 + 1] = pairs[row, 1]

    delta = 0.0
    for tt in range(k0, k0 + 3):
        if tt > n - 1:
            break
        if tt == 0:
            delta += log_pi[bp[0]] - log_pi[b[0]]
        else:
            delta += log_P[tt, bp[tt - 1], bp[tt]] - log_P[tt, b[tt - 1],
                                                           b[tt]]
    c_p = np.empty(Sm1)
    _counts_before(b, count_start, k0, c_p)
    c_c = c_p.copy()
    nu_p = np.empty(4)
    nu_c = np.empty(4)
    if k0 > 0:
        _nu_at(gamma, exog, alphaT, c_p, k0 - 1, nu_p)
        _nu_at(gamma, exog, alphaT, c_c, k0 - 1, nu_c)
    delta += _f_tail(b, bp, k0, k0 + 1, c_c, c_p, nu_c, nu_p, y, gamma, exog,
                     alphaT, A_diag, R_chol, R_ldet, gam_chol, gam_ldet,
                     count_start)
    lq = -np.log(float(cnt))
    return bp, delta, lq, lq, cnt


@_maybe_jit
def propose_uniform_block(b, k0, p, y, gamma, exog, alphaT, A_diag, R_chol,
                          R_ldet, gam_chol, gam_ldet, log_P, log_pi, adj,
                          count_start, tuples, toff, tcnt, rng):
    """Symmetric proposal: replace positions k0..k0+p-1 with a uniform draw
    from the anchored length-p bridge set."""
    n = b.shape[0]
    S = log_pi.shape[0]
    Sm1 = S - 1
    bp = b.copy()
    l_idx = b[k0 - 1] if k0 > 0 else S
    r_idx = b[k0 + p] if k0 + p <= n - 1 else S
    cnt = tcnt[l_idx, r_idx]
    u = mrg_uniform(rng)
    if cnt == 0:
        return bp, -np.inf, 0.0, 0.0, 0
    idx = int(u * cnt)
    if idx >= cnt:
        idx = cnt - 1
    row = toff[l_idx, r_idx] + idx
    for j in range(p):
        bp[k0 + j] = tuples[row, j]

    delta = 0.0
    for tt in range(k0, k0 + p + 1):
        if tt > n - 1:
            break
        if tt == 0:
            delta += log_pi[bp[0]] - log_pi[b[0]]
        else:
            delta += log_P[tt, bp[tt - 1], bp[tt]] - log_P[tt, b[tt - 1],
                                                           b[tt]]
    c_p = np.empty(Sm1)
    _counts_before(b, count_start, k0, c_p)
    c_c = c_p.copy()
    nu_p = np.empty(4)
    nu_c = np.empty(4)
    if k0 > 0:
        _nu_at(gamma, exog, alphaT, c_p, k0 - 1, nu_p)
        _nu_at(gamma, exog, alphaT, c_c, k0 - 1, nu_c)
    delta += _f_tail(b, bp, k0, k0 + p - 1, c_c, c_p, nu_c, nu_p, y, gamma,
                     exog, alphaT, A_diag, R_chol, R_ldet, gam_chol,
                     gam_ldet, count_start)
    return bp, delta, 0.0, 0.0, 0


@_maybe_jit
def gibbs_block_draw(b, k0, p, y, gamma, exog, alphaT, A_diag, R_chol,
                     R_ldet, gam_chol, gam_ldet, log_P, log_pi, adj,
                     count_start, tuples, toff, tcnt, rng):
    """Exact conditional draw of positions k0..k0+p-1: every tuple in the
    anchored bridge set is scored with its transition terms plus the full
    response tail, then one is sampled. Cost is deliberately proportional to
    the bridge cardinality times the remaining sequence length."""
    n = b.shape[0]
    S = log_pi.shape[0]
    Sm1 = S - 1
    bp = b.copy()
    l_idx = b[k0 - 1] if k0 > 0 else S
    r_idx = b[k0 + p] if k0 + p <= n - 1 else S
    cnt = tcnt[l_idx, r_idx]
    base = toff[l_idx, r_idx]
    if cnt == 0:
        return bp, 0

    c0 = np.empty(Sm1)
    _counts_before(b, count_start, k0, c0)
    nu0 = np.empty(4)
    if k0 > 0:
        _nu_at(gamma, exog, alphaT, c0, k0 - 1, nu0)

    lw = np.empty(cnt)
    c = np.empty(Sm1)
    nu = np.empty(4)
    for j in range(cnt):
        for l in range(Sm1):
            c[l] = c0[l]
        for i in range(4):
            nu[i] = nu0[i]
        s_prev = b[k0 - 1] if k0 > 0 else -1
        w = 0.0
        for t in range(k0, n):
            s_t = tuples[base + j, t - k0] if t < k0 + p else b[t]
            if t <= k0 + p:
                if t == 0:
                    w += log_pi[s_t]
                else:
                    w += log_P[t, s_prev, s_t]
            w += _logf_at(y, gamma, exog, alphaT, A_diag, R_chol, R_ldet,
                          gam_chol, gam_ldet, count_start, t, s_t, c, nu)
            if t >= count_start and s_t >= 1:
                c[s_t - 1] += 1.0
            _nu_at(gamma, exog, alphaT, c, t, nu)
            s_prev = s_t
        lw[j] = w

    hi = lw[0]
    for j in range(1, cnt):
        if lw[j] > hi:
            hi = lw[j]
    tot = 0.0
    for j in range(cnt):
        tot += np.exp(lw[j] - hi)
    u = mrg_uniform(rng) * tot
    acc = 0.0
    pick = cnt - 1
    for j in range(cnt):
        acc += np.exp(lw[j] - hi)
        if u <= acc:
            pick = j
            break
    for j in range(p):
        bp[k0 + j] = tuples[base + pick, j]
    return bp, cnt


# ---------------------------------------------------------------------------
# sweep drivers

@_maybe_jit
def _accept(b, bp, delta, label_type, label_limit, rng):
    u = mrg_uniform(rng)
    if not _label_ok(bp, label_type, label_limit):
        return False
    if np.log(u) < delta:
        n = b.shape[0]
        for t in range(n):
            b[t] = bp[t]
        return True
    return False


@_maybe_jit
def sweep_forward(b, p, y, gamma, exog, alphaT, A_diag, R_chol, R_ldet,
                  gam_chol, gam_ldet, log_P, log_pi, adj, count_start, pairs,
                  poff, pcnt, label_type, label_limit, rng):
    """One sweep of the forward-proposal sampler, dispatching on the block
    length p: whole-sequence when p >= n, adjacent pairs when p == 2, and
    overlapping forward blocks otherwise. Returns (proposals, accepts,
    density evaluations)."""
    n = b.shape[0]
    n_prop = 0
    n_acc = 0
    evals = 0
    if p >= n:
        bp, delta, _, _, ev = propose_forward_full(
            b, y, gamma, exog, alphaT, A_diag, R_chol, R_ldet, gam_chol,
            gam_ldet, log_P, log_pi, adj, count_start, rng)
        n_prop += 1
        evals += ev
        if _accept(b, bp, delta, label_type, label_limit, rng):
            n_acc += 1
    elif p == 2:
        for k0 in range(n - 1):
            bp, delta, _, _, ev = propose_pair(
                b, k0, y, gamma, exog, alphaT, A_diag, R_chol, R_ldet,
                gam_chol, gam_ldet, log_P, log_pi, adj, count_start, pairs,
                poff, pcnt, rng)
            n_prop += 1
            evals += ev
            if _accept(b, bp, delta, label_type, label_limit, rng):
                n_acc += 1
    else:
        k0 = 0
        while k0 <= n - 3:
            bp, delta, _, _, ev = propose_forward_block(
                b, k0, p, y, gamma, exog, alphaT, A_diag, R_chol, R_ldet,
                gam_chol, gam_ldet, log_P, log_pi, adj, count_start, pairs,
                poff, pcnt, rng)
            n_prop += 1
            evals += ev
            if _accept(b, bp, delta, label_type, label_limit, rng):
                n_acc += 1
            k0 += p - 2
    return n_prop, n_acc, evals


@_maybe_jit
def sweep_uniform(b, p, y, gamma, exog, alphaT, A_diag, R_chol, R_ldet,
                  gam_chol, gam_ldet, log_P, log_pi, adj, count_start,
                  tuples, toff, tcnt, label_type, label_limit, rng):
    """Non-overlapping uniform block redraws covering the sequence; the last
    block is pulled back so it ends exactly at n-1."""
    n = b.shape[0]
    n_prop = 0
    n_acc = 0
    evals = 0
    k0 = 0
    while True:
        bp, delta, _, _, ev = propose_uniform_block(
            b, k0, p, y, gamma, exog, alphaT, A_diag, R_chol, R_ldet,
            gam_chol, gam_ldet, log_P, log_pi, adj, count_start, tuples,
            toff, tcnt, rng)
        n_prop += 1
        evals += ev
        if _accept(b, bp, delta, label_type, label_limit, rng):
            n_acc += 1
        if k0 + p >= n:
            break
        k0 = k0 + p if k0 + 2 * p <= n else n - p
    return n_prop, n_acc, evals


@_maybe_jit
def sweep_gibbs(b, p, y, gamma, exog, alphaT, A_diag, R_chol, R_ldet,
                gam_chol, gam_ldet, log_P, log_pi, adj, count_start, tuples,
                toff, tcnt, label_type, label_limit, rng):
    """Non-overlapping exact-conditional block draws with the same block
    layout as sweep_uniform. Draws that violate the label are discarded."""
    n = b.shape[0]
    n_prop = 0
    n_acc = 0
    evals = 0
    k0 = 0
    while True:
        bp, ev = gibbs_block_draw(
            b, k0, p, y, gamma, exog, alphaT, A_diag, R_chol, R_ldet,
            gam_chol, gam_ldet, log_P, log_pi, adj, count_start, tuples,
            toff, tcnt, rng)
        n_prop += 1
        evals += ev
        if ev > 0 and _label_ok(bp, label_type, label_limit):
            for t in range(n):
                b[t] = bp[t]
            n_acc += 1
        if k0 + p >= n:
            break
        k0 = k0 + p if k0 + 2 * p <= n else n - p
    return n_prop, n_acc, evals


# ---------------------------------------------------------------------------
# missing-data imputation

@_maybe_jit
def impute_subject(y, miss, b, gamma, exog, alphaT, A_diag, R_inv, G_inv,
                   gam_inv, count_start, rng):
    """Redraw every masked cell of y in time order from its Gaussian full
    conditional given the neighboring times, the states, and the observed
    coordinates at the same time. miss is (4, n) uint8; y is updated in
    place and later times see the new values."""
    n = y.shape[1]
    Sm1 = alphaT.shape[1]
    c_prev = np.zeros(Sm1)
    c_t = np.zeros(Sm1)
    nu_prev = np.empty(4)
    nu_t = np.empty(4)
    nu_next = np.empty(4)
    c_next = np.empty(Sm1)
    Lam = np.empty((4, 4))
    V = np.empty(4)
    mu = np.empty(4)
    for t in range(n):
        for l in range(Sm1):
            c_t[l] = c_prev[l]
        if t >= count_start and b[t] >= 1:
            c_t[b[t] - 1] += 1.0
        nmiss = 0
        for j in range(4):
            if miss[j, t] != 0:
                nmiss += 1
        if nmiss > 0:
            _nu_at(gamma, exog, alphaT, c_t, t, nu_t)
            if t == 0:
                s0 = b[0]
                for i in range(4):
                    V[i] = 0.0
                    for j in range(4):
                        Lam[i, j] = G_inv[i, j] + gam_inv[s0, i, j]
                for i in range(4):
                    for j in range(4):
                        V[i] += Lam[i, j] * nu_t[j]
                if n > 1:
                    for l in range(Sm1):
                        c_next[l] = c_t[l]
                    if 1 >= count_start and b[1] >= 1:
                        c_next[b[1] - 1] += 1.0
                    _nu_at(gamma, exog, alphaT, c_next, 1, nu_next)
                    for i in range(4):
                        for j in range(4):
                            Lam[i, j] += (A_diag[b[1], i] * R_inv[i, j]
                                          * A_diag[b[1], j])
                    for i in range(4):
                        s = 0.0
                        for j in range(4):
                            s += R_inv[i, j] * (y[j, 1] - nu_next[j]
                                                + A_diag[b[1], j] * nu_t[j])
                        V[i] += A_diag[b[1], i] * s
            else:
                at = A_diag[b[t]]
                if t < n - 1:
                    an = A_diag[b[t + 1]]
                    for l in range(Sm1):
                        c_next[l] = c_t[l]
                    if t + 1 >= count_start and b[t + 1] >= 1:
                        c_next[b[t + 1] - 1] += 1.0
                    _nu_at(gamma, exog, alphaT, c_next, t + 1, nu_next)
                    for i in range(4):
                        for j in range(4):
                            Lam[i, j] = R_inv[i, j] * (1.0 + an[i] * an[j])
                else:
                    for i in range(4):
                        for j in range(4):
                            Lam[i, j] = R_inv[i, j]
                for i in range(4):
                    s = 0.0
                    for j in range(4):
                        s += R_inv[i, j] * (at[j] * y[j, t - 1] + nu_t[j]
                                            - at[j] * nu_prev[j])
                    V[i] = s
                if t < n - 1:
                    an = A_diag[b[t + 1]]
                    for i in range(4):
                        s = 0.0
                        for j in range(4):
                            s += R_inv[i, j] * (y[j, t + 1] - nu_next[j]
                                                + an[j] * nu_t[j])
                        V[i] += an[i] * s
            _solve_spd(Lam, V, mu, 4)
            # conditional of the missing block given the observed block
            midx = np.empty(4, dtype=np.int64)
            oidx = np.empty(4, dtype=np.int64)
            no = 0
            nm = 0
            for j in range(4):
                if miss[j, t] != 0:
                    midx[nm] = j
                    nm += 1
                else:
                    oidx[no] = j
                    no += 1
            Lmm = np.empty((nm, nm))
            for a in range(nm):
                for bb in range(nm):
                    Lmm[a, bb] = Lam[midx[a], midx[bb]]
            rhs = np.empty(nm)
            for a in range(nm):
                s = 0.0
                for bb in range(no):
                    s += Lam[midx[a], oidx[bb]] * (y[oidx[bb], t]
                                                   - mu[oidx[bb]])
                rhs[a] = s
            Lc = np.empty((nm, nm))
            _chol_small(Lmm, Lc, nm)
            # mean shift: -Lmm^{-1} rhs via the factor
            shift = np.empty(nm)
            tmp = np.empty(nm)
            for a in range(nm):
                s = rhs[a]
                for k in range(a):
                    s -= Lc[a, k] * tmp[k]
                tmp[a] = s / Lc[a, a]
            for a in range(nm - 1, -1, -1):
                s = tmp[a]
                for k in range(a + 1, nm):
                    s -= Lc[k, a] * shift[k]
                shift[a] = s / Lc[a, a]
            z = np.empty(nm)
            for a in range(nm):
                z[a] = mrg_normal(rng)
            draw = np.empty(nm)
            for a in range(nm - 1, -1, -1):
                s = z[a]
                for k in range(a + 1, nm):
                    s -= Lc[k, a] * draw[k]
                draw[a] = s / Lc[a, a]
            for a in range(nm):
                y[midx[a], t] = mu[midx[a]] - shift[a] + draw[a]
        _nu_at(gamma, exog, alphaT, c_t, t, nu_prev)
        for l in range(Sm1):
            c_prev[l] = c_t[l]
    return


KERNEL_FUNCTIONS = (
    "mrg_uniform", "mrg_normal", "seq_loglik", "propose_forward_block",
    "propose_forward_full", "propose_pair", "propose_uniform_block",
    "gibbs_block_draw", "sweep_forward", "sweep_uniform", "sweep_gibbs",
    "impute_subject",
)
