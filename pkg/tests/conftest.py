"""Shared fixtures and independent reference implementations.

The reference functions here are written from the model equations with
plain numpy/scipy and no imports from the package's numerical kernels, so
they can serve as oracles for the fast paths.
"""

import itertools
from types import SimpleNamespace

import numpy as np
import pytest
from scipy.stats import multivariate_normal

from rsmicu.diagram import ADJ_5


def brute_force_tuples(p, left, right, adj):
    """All admissible 1-based state p-tuples by direct product filtering."""
    S = adj.shape[0]
    out = []
    for tup in itertools.product(range(1, S + 1), repeat=p):
        if left is not None and not adj[left - 1, tup[0] - 1]:
            continue
        if right is not None and not adj[tup[-1] - 1, right - 1]:
            continue
        if any(not adj[a - 1, b - 1] for a, b in zip(tup, tup[1:])):
            continue
        out.append(tup)
    return out


def valid_full_sequences(n, adj, log_pi):
    """All 1-based sequences with positive prior mass."""
    S = adj.shape[0]
    seqs = []
    for tup in itertools.product(range(1, S + 1), repeat=n):
        if log_pi[tup[0] - 1] == -np.inf:
            continue
        if any(not adj[a - 1, b - 1] for a, b in zip(tup, tup[1:])):
            continue
        seqs.append(tup)
    return seqs


def occupancy_reference(b1, S, count_start):
    """Cumulative occupancy counts, written independently of the package."""
    b1 = np.asarray(b1)
    n = b1.shape[0]
    C = np.zeros((S - 1, n))
    for t in range(n):
        for j in range(count_start, t + 1):
            if b1[j] >= 2:
                C[b1[j] - 2, t] += 1
    return C


def mean_table(b1, gamma, exog, alpha_star, count_start):
    """nu matrix (4, n) for a 1-based path."""
    S = alpha_star.shape[0] + 1
    C = occupancy_reference(b1, S, count_start)
    return gamma[:, None] + exog + alpha_star.T @ C


def path_logprior(b1, log_P, log_pi):
    """log pi(b_1) + transition terms, 1-based path."""
    b1 = np.asarray(b1)
    total = float(log_pi[b1[0] - 1])
    for t in range(1, b1.shape[0]):
        total += float(log_P[t, b1[t - 1] - 1, b1[t] - 1])
    return total


def response_loglik(y, b1, gamma, exog, alpha_star, a_diag, R, gam_by_state,
                    count_start=1):
    """log f(y | b) for a complete 1-based sequence.

    alpha_star is (S-1, 4); a_diag is (S, 4); gam_by_state is (S, 4, 4)
    time-1 covariances.
    """
    b1 = np.asarray(b1)
    n = y.shape[1]
    nu = mean_table(b1, gamma, exog, alpha_star, count_start)
    total = multivariate_normal.logpdf(y[:, 0], nu[:, 0],
                                       gam_by_state[b1[0] - 1])
    for t in range(1, n):
        mean = nu[:, t] + a_diag[b1[t] - 1] * (y[:, t - 1] - nu[:, t - 1])
        total += multivariate_normal.logpdf(y[:, t], mean, R)
    return float(total)


def joint_logdensity(y, b1, gamma, exog, alpha_star, a_diag, R, gam_by_state,
                     log_P, log_pi, count_start=1):
    """log pi(b) + log f(y | b); -inf when the path has no prior mass."""
    prior = path_logprior(b1, log_P, log_pi)
    if not np.isfinite(prior):
        return -np.inf
    return prior + response_loglik(y, b1, gamma, exog, alpha_star, a_diag, R,
                                   gam_by_state, count_start)


def random_valid_path(gen, n, log_P, log_pi, adj):
    """Draw a 1-based path from the Markov prior."""
    S = adj.shape[0]
    pi = np.exp(log_pi)
    b = [int(gen.choice(S, p=pi / pi.sum())) + 1]
    for t in range(1, n):
        w = np.exp(log_P[t, b[-1] - 1])
        w[~np.isfinite(log_P[t, b[-1] - 1])] = 0.0
        b.append(int(gen.choice(S, p=w / w.sum())) + 1)
    return np.array(b, dtype=np.int64)


def random_instance(gen, n=8, count_start=1, label=None, from_model=True):
    """One synthetic encounter-level sampling problem plus oracle pieces."""
    from rsmicu import sampler as smp
    from rsmicu.model import stationary_covariance

    S = 5
    A_diag = gen.uniform(0.05, 0.85, size=(S, 4))
    M = gen.normal(size=(4, 4)) * 0.4
    R = M @ M.T + np.diag(gen.uniform(0.5, 1.5, 4))
    gam = np.stack([stationary_covariance(A_diag[s], R) for s in range(S)])
    zeta = np.column_stack([gen.normal(-1.0, 0.8, 12),
                            gen.normal(0.0, 0.4, 12)])
    rbc_ordered = gen.integers(0, 3, size=n).astype(float)
    log_P = smp.log_transition_table(zeta, rbc_ordered)
    pi_logit = gen.normal(0.0, 0.7, size=4)
    log_pi = smp.log_initial_distribution(pi_logit)
    gamma = gen.normal(0.0, 2.0, size=4)
    exog = gen.normal(0.0, 0.5, size=(4, n))
    alpha_star = gen.normal(0.0, 0.8, size=(4, 4))

    b_true = random_valid_path(gen, n, log_P, log_pi, ADJ_5)
    if from_model:
        nu = mean_table(b_true, gamma, exog, alpha_star, count_start)
        y = np.empty((4, n))
        y[:, 0] = nu[:, 0] + np.linalg.cholesky(
            gam[b_true[0] - 1]) @ gen.standard_normal(4)
        Rc = np.linalg.cholesky(R)
        for t in range(1, n):
            y[:, t] = (nu[:, t]
                       + A_diag[b_true[t] - 1] * (y[:, t - 1] - nu[:, t - 1])
                       + Rc @ gen.standard_normal(4))
    else:
        y = gen.normal(0.0, 2.0, size=(4, n))

    factors = smp.build_factors(A_diag, R)
    ctx = smp.make_ctx(y, gamma, exog, alpha_star, factors, log_P, log_pi,
                       count_start=count_start, label=label)
    inst = SimpleNamespace(
        y=y, gamma=gamma, exog=exog, alpha_star=alpha_star, A_diag=A_diag,
        R=R, gam=gam, zeta=zeta, rbc_ordered=rbc_ordered, log_P=log_P,
        log_pi=log_pi, ctx=ctx, factors=factors, b_true=b_true, n=n,
        count_start=count_start)

    def loglik(b1):
        return response_loglik(y, b1, gamma, exog, alpha_star, A_diag, R,
                               gam, count_start)

    def joint(b1):
        return joint_logdensity(y, b1, gamma, exog, alpha_star, A_diag, R,
                                gam, log_P, log_pi, count_start)

    inst.loglik = loglik
    inst.joint = joint
    inst.logprior = lambda b1: path_logprior(b1, log_P, log_pi)
    return inst


@pytest.fixture(scope="session")
def adj5():
    return ADJ_5


@pytest.fixture(scope="session")
def full5_params():
    from rsmicu.simulate import load_truth, truth_global_params
    return truth_global_params(load_truth("full5"))
