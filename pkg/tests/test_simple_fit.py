"""Three-state toy fitters: initialization, constraint handling, recovery.

increment_init is checked against simulated truth (the signed first
differences separate the step types cleanly at the packaged noise level),
_legalize as an exact transition-support property, and the full model-b
fit on a small dataset where the slope posterior should concentrate near
truth within a short chain.
"""

import numpy as np
import pytest

from rsmicu.simple_fit import (SIGN2, SUPPORT_3, constrained_slope_draw,
                               fit_simple, increment_init, _legalize)
from rsmicu.simulate import SimConfig, load_truth, simulate_dataset

ALLOWED_3 = {(r + 1, c + 1) for r, cols in enumerate(SUPPORT_3)
             for c in cols} | {(1, 1)}


def toy_dataset(n_encounters=6, seed=23, mean_len=60.0):
    cfg = SimConfig(mode="simple3", n_encounters=n_encounters, seed=seed,
                    n_poisson_mean=mean_len, m_max=10)
    sim = simulate_dataset(cfg)
    ys = [e.y for e in sim.encounters]
    bs = [np.asarray(r["b"], dtype=np.int64) for r in sim.truth["encounters"]]
    return sim, ys, bs


def test_increment_init_recovers_paths_and_slopes():
    _, ys, bs = toy_dataset()
    truth = load_truth("simple3")
    alpha = np.asarray(truth["alpha"])
    slopes, paths = increment_init(ys)
    assert np.all(slopes[:, 0] * SIGN2 > 0)
    assert np.all(slopes[:, 1] * SIGN2 < 0)
    assert np.allclose(slopes[:, 0], alpha[:, 1], atol=1.0)
    assert np.allclose(slopes[:, 1], alpha[:, 2], atol=1.0)
    hits = total = 0
    for lab, b in zip(paths, bs):
        assert lab.shape == b.shape
        assert set(zip(lab[:-1], lab[1:])) <= ALLOWED_3
        hits += int((lab[1:] == b[1:]).sum())
        total += b.shape[0] - 1
    assert hits / total >= 0.95


def test_increment_init_flat_data_falls_back():
    ys = [np.full((4, 30), 5.0) + 1e-9 * np.arange(30)]
    slopes, paths = increment_init(ys)
    assert np.array_equal(slopes, np.column_stack([SIGN2, -SIGN2]))
    assert np.all(paths[0] == 1)


def test_legalize_support_property():
    gen = np.random.default_rng(3)
    for _ in range(200):
        raw = gen.integers(1, 4, size=int(gen.integers(2, 50)))
        out = _legalize(raw)
        assert set(zip(out[:-1], out[1:])) <= ALLOWED_3
        assert np.array_equal(_legalize(out), out)
        # repairs touch only formerly-illegal positions
        same = out == raw
        for k in np.flatnonzero(~same):
            assert (raw[k - 1], raw[k]) not in ALLOWED_3 or not same[k - 1]


def test_constrained_slope_draw_signs_and_fallback():
    gen = np.random.default_rng(9)
    good = np.concatenate([SIGN2 * 2.0, -SIGN2 * 2.0])
    lam = np.eye(8) * 1e6
    v = lam @ good
    for _ in range(20):
        m = constrained_slope_draw(lam, v, np.zeros((4, 2)), gen)
        assert np.allclose(m.reshape(8, order="F"), good, atol=0.01)
        assert np.all(m[:, 0] * SIGN2 > 0) and np.all(m[:, 1] * SIGN2 < 0)
    # a tight wrong-signed conditional never satisfies the pattern
    cur = np.column_stack([SIGN2, -SIGN2])
    m = constrained_slope_draw(lam, lam @ (-good), cur, gen)
    assert m is cur


def test_fit_validation():
    _, ys, _ = toy_dataset(n_encounters=1, mean_len=20.0)
    sim, _, _ = toy_dataset(n_encounters=1, mean_len=20.0)
    enc = sim.encounters
    with pytest.raises(ValueError, match="model"):
        fit_simple(enc, model="c", iterations=10, burnin=5)
    with pytest.raises(ValueError, match="at least one"):
        fit_simple([], iterations=10, burnin=5)
    with pytest.raises(ValueError, match="burnin"):
        fit_simple(enc, iterations=10, burnin=10)
    bad = sim.encounters[0]
    bad.y[2, 4] = np.nan
    with pytest.raises(ValueError, match="missing"):
        fit_simple([bad], iterations=10, burnin=5)


def test_fit_deterministic_in_seed():
    sim, _, _ = toy_dataset(n_encounters=3, seed=40, mean_len=25.0)
    a = fit_simple(sim.encounters, model="b", iterations=40, burnin=20,
                   thin=2, seed=6)
    b = fit_simple(sim.encounters, model="b", iterations=40, burnin=20,
                   thin=2, seed=6)
    assert np.array_equal(a.alpha_draws, b.alpha_draws)
    assert np.array_equal(a.P_mean, b.P_mean)
    assert all(np.array_equal(x, y) for x, y in zip(a.occupancy, b.occupancy))
    c = fit_simple(sim.encounters, model="b", iterations=40, burnin=20,
                   thin=2, seed=7)
    assert not np.array_equal(a.alpha_draws, c.alpha_draws)


def test_model_b_small_fit_recovers_truth():
    sim, _, bs = toy_dataset(n_encounters=8, seed=51, mean_len=50.0)
    truth = np.asarray(load_truth("simple3")["alpha"])[:, 1:]
    res = fit_simple(sim.encounters, model="b", iterations=600, burnin=300,
                     thin=5, seed=2)
    assert res.tally_count == 300
    assert res.alpha_draws.shape == (60, 8)
    assert np.all(np.abs(res.alpha / truth - 1.0) < 0.15)
    hits = total = 0
    for tal, b in zip(res.occupancy, bs):
        assert np.all(tal.sum(axis=0) == res.tally_count)
        modal = tal.argmax(axis=0) + 1
        hits += int((modal == b).sum())
        total += b.size
    assert hits / total >= 0.85
    assert np.allclose(res.P_mean.sum(axis=1), 1.0, atol=1e-12)
    assert res.P_mean[0, 2] == 0.0 and res.P_mean[1, 0] == 0.0
    assert 0.0 < res.accept_rate < 1.0


def test_model_a_structure():
    sim, _, _ = toy_dataset(n_encounters=4, seed=62, mean_len=30.0)
    res = fit_simple(sim.encounters, model="a", iterations=100, burnin=50,
                     thin=5, seed=3)
    assert res.model == "a"
    assert res.tally_count == 50
    assert np.all(res.alpha[:, 0] * SIGN2 > 0)
    assert np.allclose(res.pi_mean.sum(), 1.0, atol=1e-12)
    for tal, enc in zip(res.occupancy, sim.encounters):
        assert tal.shape == (3, enc.n)
        assert np.all(tal.sum(axis=0) == res.tally_count)
