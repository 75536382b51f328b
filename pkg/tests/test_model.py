"""Container validation, transition matrix, and mean-process identities."""

import numpy as np
import pytest

from rsmicu.diagram import EDGES_5
from rsmicu.model import (EncounterData, GlobalParams, InvalidDataError,
                          Label, PriorConfig, StateSequence, design_alpha,
                          occupancy_counts, stationary_covariance,
                          transition_matrix)
from conftest import occupancy_reference

EDGE_ORDER = ((1, 2), (1, 4), (2, 3), (2, 4), (3, 1), (3, 2), (3, 4),
              (4, 2), (4, 5), (5, 1), (5, 2), (5, 4))


def test_edge_order_frozen():
    assert tuple(map(tuple, EDGES_5)) == EDGE_ORDER


def test_transition_rows_stochastic_and_sparse(adj5):
    gen = np.random.default_rng(7)
    eye = np.eye(5, dtype=bool)
    for _ in range(1000):
        zeta = gen.normal(0.0, 4.0, size=(12, 2))
        z = float(gen.integers(0, 8))
        P = transition_matrix(zeta, z)
        assert np.all(np.abs(P.sum(axis=1) - 1.0) <= 1e-12)
        assert np.all(P >= 0.0)
        # exact zeros off the allowed pattern, strictly positive on it
        allowed = adj5.astype(bool) | eye
        assert np.all(P[~allowed] == 0.0)
        assert np.all(P[allowed] > 0.0)


def test_transition_edge_targets():
    # a huge logit on one edge sends nearly all mass from its source row
    for j, (a, b) in enumerate(EDGE_ORDER):
        zeta = np.full((12, 2), -40.0)
        zeta[:, 1] = 0.0
        zeta[j, 0] = 40.0
        P = transition_matrix(zeta, 0.0)
        assert P[a - 1, b - 1] > 1.0 - 1e-10
    # clamping keeps the rows finite and normalized
    P = transition_matrix(np.full((12, 2), 1e8), 1e8)
    assert np.all(np.isfinite(P))
    assert np.allclose(P.sum(axis=1), 1.0, atol=1e-12)


def test_transition_covariate_effect():
    zeta = np.zeros((12, 2))
    zeta[0] = (-2.0, 1.5)   # edge 1 -> 2
    lo = transition_matrix(zeta, 0.0)
    hi = transition_matrix(zeta, 3.0)
    assert hi[0, 1] > lo[0, 1]
    with pytest.raises(ValueError):
        transition_matrix(np.zeros((11, 2)), 0.0)


def test_stationary_covariance_identity():
    gen = np.random.default_rng(11)
    for _ in range(200):
        a = gen.uniform(0.0, 0.999, size=4)
        M = gen.normal(size=(4, 4))
        R = M @ M.T + 0.5 * np.eye(4)
        G = stationary_covariance(a, R)
        resid = G - (np.diag(a) @ G @ np.diag(a) + R)
        assert np.max(np.abs(resid)) < 1e-12 * max(1.0, np.max(np.abs(G)))
    assert np.allclose(stationary_covariance(np.zeros(4), R), R)
    with pytest.raises(ValueError):
        stationary_covariance(np.array([0.2, 1.0, 0.3, 0.4]), R)


def test_global_params_maps():
    p = GlobalParams(zeta=np.zeros((12, 2)), pi_logit=np.zeros(4),
                     a_logit=np.zeros((5, 4)), omega=np.zeros(84),
                     beta=np.zeros(4), R=np.eye(4), G=np.eye(4),
                     alpha_tilde=np.zeros((4, 4)), upsilon=np.eye(16))
    assert np.allclose(p.pi(), 0.2)
    assert np.allclose(p.a_diag(), 0.5)
    p.pi_logit = np.array([1e6, 0.0, 0.0, 0.0])
    pi = p.pi()
    assert np.isfinite(pi).all() and abs(pi.sum() - 1.0) < 1e-12
    q = p.copy()
    q.zeta[0, 0] = 99.0
    assert p.zeta[0, 0] == 0.0


def make_encounter(n=6, n_hr=2, n_map=3, eid="enc-test"):
    gen = np.random.default_rng(3)
    y = np.array([gen.uniform(5, 15, n), gen.uniform(60, 120, n),
                  gen.uniform(50, 110, n), gen.uniform(0.5, 4.0, n)])
    missing = np.zeros((4, n), dtype=bool)
    missing[0, 1] = True
    y[0, 1] = np.nan
    return EncounterData(
        encounter_id=eid, y=y, missing=missing,
        hr_doses=gen.uniform(0, 1, (n_hr, n)),
        map_doses=gen.uniform(0, 1, (n_map, n)),
        rbc_ordered=np.array([0, 2, 1, 0, 0, 0], dtype=float)[:n],
        rbc_admin_cum=np.array([0, 0, 1, 2, 3, 3], dtype=float)[:n])


def test_encounter_validation_accepts_good_data():
    make_encounter().validate()


@pytest.mark.parametrize("mutate,fragment", [
    (lambda e: e.y.__setitem__((1, 2), np.nan), "unmasked"),
    (lambda e: e.y.__setitem__((0, 0), 25.0), "hgb"),
    (lambda e: e.y.__setitem__((2, 3), 10.0), "map"),
    (lambda e: e.hr_doses.__setitem__((0, 0), -0.5), "hr_doses"),
    (lambda e: setattr(e, "rbc_admin_cum",
                       np.array([3., 2, 2, 2, 2, 2])), "nondecreasing"),
    (lambda e: setattr(e, "missing", np.zeros((4, 6))), "bool"),
    (lambda e: setattr(e, "rbc_ordered", np.zeros(5)), "rbc_ordered"),
])
def test_encounter_validation_rejects(mutate, fragment):
    enc = make_encounter()
    mutate(enc)
    with pytest.raises(InvalidDataError, match=fragment):
        enc.validate()


def test_label_validation():
    Label("rbc_rule", ((2, 10, 5),)).validate(20)
    with pytest.raises(InvalidDataError, match="48"):
        Label("rbc_rule", ((0, 60, 10),)).validate(100)
    with pytest.raises(InvalidDataError, match="out of range"):
        Label("rbc_rule", ((5, 25, 3),)).validate(26)
    with pytest.raises(InvalidDataError, match="window"):
        Label("unlabeled", ((0, 5, 2),)).validate(10)
    with pytest.raises(InvalidDataError, match="kind"):
        Label("mystery").validate(10)
    with pytest.raises(InvalidDataError):
        Label("rbc_rule", ()).validate(10)


def test_state_sequence_validation():
    StateSequence(np.array([1, 2, 3, 1, 4, 5])).validate()
    with pytest.raises(InvalidDataError, match="transition"):
        StateSequence(np.array([1, 3])).validate()
    with pytest.raises(InvalidDataError, match="1..5"):
        StateSequence(np.array([0, 1])).validate()
    with pytest.raises(InvalidDataError):
        StateSequence(np.array([], dtype=np.int64)).validate()


def test_priors_default_scaling():
    pri = PriorConfig.default(1234)
    assert pri.nu_R == 2468.0
    assert np.allclose(pri.psi_R, 2468.0 * np.diag([0.5, 1.5, 1.5, 0.5]))
    assert pri.omega0.shape == (84,)
    assert pri.sigma_omega_diag[5] == pytest.approx(1 / 625)
    assert pri.sigma_omega_diag[0] == pytest.approx(1 / 16)
    pri.validate()
    with pytest.raises(ValueError, match="84"):
        PriorConfig.default(10, n_hr=3, n_map=4)
    bad = PriorConfig.default(10)
    bad.nu_G = 4.0
    with pytest.raises(InvalidDataError, match="nu_G"):
        bad.validate()


def test_occupancy_counts_match_reference():
    gen = np.random.default_rng(5)
    steps = [np.array([1, 2, 3]), np.array([2, 3]), np.array([1, 2, 3]),
             np.array([2, 5]), np.array([1, 2, 4]), np.array([1, 2, 4])]
    b = [1]
    for _ in range(14):
        b.append(int(gen.choice(steps[b[-1] - 1])))
    b = np.array(b)
    C = occupancy_reference(b, 5, count_start=1)
    for k in range(1, b.size + 1):
        got = occupancy_counts(b, k)
        assert np.array_equal(got, C[:, k - 1])
    # design row recovers alpha contribution
    alpha = gen.normal(size=(4, 4))
    want = alpha.T @ C[:, 7]
    got = design_alpha(b, 8) @ alpha.reshape(-1, order="F")
    assert np.allclose(got, want, atol=1e-12)
