"""Proposal moves, sweep drivers, and their acceptance bookkeeping.

The central check: for every move family, the simplified log acceptance
ratio returned by the kernel must equal the textbook Metropolis-Hastings
ratio assembled from independently computed joint densities and the
returned proposal densities.
"""

import numpy as np
import pytest

from rsmicu import kernels
from rsmicu import sampler as smp
from rsmicu.diagram import ADJ_5
from rsmicu.model import (LABEL_BLEED, LABEL_NO_BLEED, LABEL_RBC_RULE,
                          Label)
from rsmicu.paths import count_paths, valid_sequence

from conftest import random_instance, random_valid_path

IDENT_TOL = 1e-10


def identity_gap(inst, b, res):
    """|delta - (log joint ratio + log q ratio)|, scaled."""
    lhs = res.delta
    rhs = (inst.joint(res.proposal) - inst.joint(b)
           + res.logq_rev - res.logq_fwd)
    return abs(lhs - rhs) / max(1.0, abs(lhs), abs(rhs))


def forward_layout(n, p):
    """Move list of one forward-family sweep."""
    if p >= n:
        return [("full", None)]
    if p == 2:
        return [("pair", k0) for k0 in range(n - 1)]
    moves, k0 = [], 0
    while k0 <= n - 3:
        moves.append(("block", k0))
        k0 += p - 2
    return moves


def tiling_layout(n, p):
    """Block starts of one baseline sweep (both baselines share it)."""
    starts, k0 = [], 0
    while True:
        starts.append(k0)
        if k0 + p >= n:
            return starts
        k0 = k0 + p if k0 + 2 * p <= n else n - p


# ---------------------------------------------------------------------------
# acceptance-ratio identities

def test_block_move_identity_and_evals():
    gen = np.random.default_rng(7)
    st = kernels.seed_stream(900)
    checked = 0
    worst = 0.0
    for trial in range(10):
        n = int(gen.integers(6, 11))
        cs = int(trial % 2)
        inst = random_instance(gen, n=n, count_start=cs,
                               from_model=bool(trial % 3))
        b = inst.b_true.copy()
        for p in (3, 4, 5, n - 1):
            for k0 in range(0, n - 2):
                res = smp.propose_block_alg1(inst.ctx, b, k0 + 1, p, st)
                kmax0 = min(k0 + p - 1, n - 1)
                left = int(res.proposal[kmax0 - 2])
                right = int(b[kmax0 + 1]) if kmax0 + 1 <= n - 1 else None
                want = 5 * (kmax0 - k0 - 1) + count_paths(2, left, right,
                                                          ADJ_5)
                assert res.evals == want
                assert inst.logprior(res.proposal) > -np.inf
                worst = max(worst, identity_gap(inst, b, res))
                checked += 1
                if smp.mh_accept_states(inst.ctx, b, res, st):
                    assert inst.logprior(b) > -np.inf
    assert checked >= 100
    assert worst <= IDENT_TOL


def test_full_move_identity_and_evals():
    gen = np.random.default_rng(11)
    st = kernels.seed_stream(901)
    worst = 0.0
    for trial in range(40):
        n = int(gen.integers(3, 9))
        inst = random_instance(gen, n=n, count_start=trial % 2)
        b = inst.b_true.copy()
        res = smp.propose_full_alg2(inst.ctx, b, st)
        assert res.evals == 5 * n
        assert inst.logprior(res.proposal) > -np.inf
        worst = max(worst, identity_gap(inst, b, res))
    assert worst <= IDENT_TOL


def test_pair_move_identity_and_evals():
    gen = np.random.default_rng(13)
    st = kernels.seed_stream(902)
    worst = 0.0
    checked = 0
    for trial in range(12):
        n = int(gen.integers(4, 9))
        inst = random_instance(gen, n=n, count_start=trial % 2)
        b = inst.b_true.copy()
        for k0 in range(n - 1):
            res = smp.propose_pair_alg3(inst.ctx, b, k0 + 1, st)
            left = int(b[k0 - 1]) if k0 > 0 else None
            right = int(b[k0 + 2]) if k0 + 2 <= n - 1 else None
            cnt = count_paths(2, left, right, ADJ_5)
            assert res.evals == cnt
            assert res.logq_fwd == pytest.approx(-np.log(cnt), rel=1e-12)
            assert res.logq_rev == res.logq_fwd
            worst = max(worst, identity_gap(inst, b, res))
            checked += 1
            smp.mh_accept_states(inst.ctx, b, res, st)
    assert checked >= 50
    assert worst <= IDENT_TOL


def test_uniform_block_identity_and_evals():
    gen = np.random.default_rng(17)
    st = kernels.seed_stream(903)
    worst = 0.0
    for trial in range(25):
        n = int(gen.integers(5, 10))
        inst = random_instance(gen, n=n, count_start=trial % 2)
        b = inst.b_true.copy()
        p = int(gen.integers(2, n + 1))
        k0 = int(gen.integers(0, n - p + 1))
        res = smp.propose_uniform_block(inst.ctx, b, k0 + 1, p, st)
        assert res.evals == 0
        assert res.logq_fwd == 0.0 and res.logq_rev == 0.0
        # symmetric move: delta is the bare log joint ratio
        gap = abs(res.delta - (inst.joint(res.proposal) - inst.joint(b)))
        worst = max(worst, gap / max(1.0, abs(res.delta)))
    assert worst <= IDENT_TOL


def test_exact_block_draw_counts_and_support():
    gen = np.random.default_rng(19)
    st = kernels.seed_stream(904)
    for trial in range(20):
        n = int(gen.integers(5, 9))
        inst = random_instance(gen, n=n)
        p = int(gen.integers(2, n + 1))
        k0 = int(gen.integers(0, n - p + 1))
        tuples, toff, tcnt = smp.tuple_tables0(p, inst.ctx.adj)
        b0 = inst.b_true.astype(np.int64) - 1
        bp0, ev = kernels.gibbs_block_draw(b0, k0, p, *inst.ctx._common(),
                                           tuples, toff, tcnt, st)
        left = int(b0[k0 - 1]) + 1 if k0 > 0 else None
        right = int(b0[k0 + p]) + 1 if k0 + p <= n - 1 else None
        assert ev == count_paths(p, left, right, ADJ_5)
        # untouched outside the block, admissible joint path after the draw
        assert np.array_equal(bp0[:k0], b0[:k0])
        assert np.array_equal(bp0[k0 + p:], b0[k0 + p:])
        assert valid_sequence(bp0 + 1, ADJ_5)


# ---------------------------------------------------------------------------
# sweep drivers replay their single moves exactly

@pytest.mark.parametrize("p", [2, 3, 4, 7, 9, 12])
def test_forward_sweep_replays_single_moves(p):
    gen = np.random.default_rng(100 + p)
    inst = random_instance(gen, n=9)
    st1 = kernels.seed_stream(500 + p)
    st2 = st1.copy()
    b_sweep = inst.b_true.copy()
    stats = smp.sweep_states(inst.ctx, b_sweep, p, st1)

    b_manual = inst.b_true.copy()
    props = acc = ev = 0
    for kind, k0 in forward_layout(inst.n, p):
        if kind == "full":
            res = smp.propose_full_alg2(inst.ctx, b_manual, st2)
        elif kind == "pair":
            res = smp.propose_pair_alg3(inst.ctx, b_manual, k0 + 1, st2)
        else:
            res = smp.propose_block_alg1(inst.ctx, b_manual, k0 + 1, p, st2)
        props += 1
        ev += res.evals
        if smp.mh_accept_states(inst.ctx, b_manual, res, st2):
            acc += 1
    assert tuple(int(x) for x in stats) == (props, acc, ev)
    assert np.array_equal(b_sweep, b_manual)
    assert np.array_equal(st1, st2)


@pytest.mark.parametrize("p", [2, 3, 4, 6, 9])
def test_uniform_sweep_replays_single_moves(p):
    gen = np.random.default_rng(200 + p)
    inst = random_instance(gen, n=9)
    st1 = kernels.seed_stream(600 + p)
    st2 = st1.copy()
    b_sweep = inst.b_true.copy()
    stats = smp.baseline_a_sweep(inst.ctx, b_sweep, p, st1)

    b_manual = inst.b_true.copy()
    props = acc = ev = 0
    for k0 in tiling_layout(inst.n, p):
        res = smp.propose_uniform_block(inst.ctx, b_manual, k0 + 1, p, st2)
        props += 1
        ev += res.evals
        if smp.mh_accept_states(inst.ctx, b_manual, res, st2):
            acc += 1
    assert tuple(int(x) for x in stats) == (props, acc, ev)
    assert np.array_equal(b_sweep, b_manual)
    assert np.array_equal(st1, st2)


@pytest.mark.parametrize("p", [2, 3, 4, 6, 9])
def test_exact_block_sweep_replays_single_draws(p):
    gen = np.random.default_rng(300 + p)
    inst = random_instance(gen, n=9)
    st1 = kernels.seed_stream(700 + p)
    st2 = st1.copy()
    b_sweep = inst.b_true.copy()
    stats = smp.baseline_b_sweep(inst.ctx, b_sweep, p, st1)

    tuples, toff, tcnt = smp.tuple_tables0(p, inst.ctx.adj)
    b0 = inst.b_true.astype(np.int64) - 1
    props = acc = ev = 0
    for k0 in tiling_layout(inst.n, p):
        bp0, cnt = kernels.gibbs_block_draw(b0, k0, p, *inst.ctx._common(),
                                            tuples, toff, tcnt, st2)
        props += 1
        ev += cnt
        if cnt > 0 and kernels._label_ok(bp0, inst.ctx.label_type,
                                         inst.ctx.label_limit):
            b0 = bp0.copy()
            acc += 1
    assert tuple(int(x) for x in stats) == (props, acc, ev)
    assert np.array_equal(b_sweep, b0 + 1)
    assert np.array_equal(st1, st2)


def test_baseline_tilings_cover_sequence():
    for n in (4, 7, 9, 12, 16):
        for p in range(2, n + 1):
            covered = np.zeros(n, dtype=bool)
            for k0 in tiling_layout(n, p):
                assert 0 <= k0 and k0 + p <= n
                covered[k0:k0 + p] = True
            assert covered.all()


def test_baseline_sweeps_reject_bad_block_length():
    gen = np.random.default_rng(23)
    inst = random_instance(gen, n=6)
    st = kernels.seed_stream(905)
    b = inst.b_true.copy()
    for bad in (1, 7):
        with pytest.raises(ValueError):
            smp.baseline_a_sweep(inst.ctx, b, bad, st)
        with pytest.raises(ValueError):
            smp.baseline_b_sweep(inst.ctx, b, bad, st)


def test_sweeps_are_stream_deterministic():
    gen = np.random.default_rng(29)
    inst = random_instance(gen, n=8)
    for sweep in (smp.sweep_states, smp.baseline_a_sweep,
                  smp.baseline_b_sweep):
        b1 = inst.b_true.copy()
        b2 = inst.b_true.copy()
        s1 = sweep(inst.ctx, b1, 4, kernels.seed_stream(77))
        s2 = sweep(inst.ctx, b2, 4, kernels.seed_stream(77))
        assert np.array_equal(b1, b2)
        assert tuple(s1) == tuple(s2)


# ---------------------------------------------------------------------------
# label constraints

def test_accept_step_vetoes_label_violation():
    gen = np.random.default_rng(31)
    label = Label(kind=LABEL_BLEED)
    inst = random_instance(gen, n=6, label=label)
    b = smp.initial_states(6, label)
    bad = smp.ProposalResult(proposal=np.ones(6, dtype=np.int64),
                             delta=1e6, logq_fwd=0.0, logq_rev=0.0, evals=0)
    st = kernels.seed_stream(906)
    probe = st.copy()
    kernels.mrg_uniform(probe)
    took = smp.mh_accept_states(inst.ctx, b, bad, st)
    assert not took
    assert np.array_equal(b, smp.initial_states(6, label))
    # the veto still consumes exactly one accept draw
    assert np.array_equal(st, probe)


@pytest.mark.parametrize("label", [
    Label(kind=LABEL_BLEED),
    Label(kind=LABEL_NO_BLEED),
    Label(kind=LABEL_RBC_RULE, windows=((0, 4, 3),)),
])
def test_sweeps_preserve_label_constraint(label):
    gen = np.random.default_rng(37)
    n = 10
    inst = random_instance(gen, n=n, label=label)
    st = kernels.seed_stream(907)
    b = smp.initial_states(n, label)
    assert smp.satisfies_label(b, label)
    for rep in range(30):
        p = (2, 3, 5, 10)[rep % 4]
        smp.sweep_states(inst.ctx, b, p, st)
        assert smp.satisfies_label(b, label)
        smp.baseline_a_sweep(inst.ctx, b, p, st)
        assert smp.satisfies_label(b, label)
        smp.baseline_b_sweep(inst.ctx, b, p, st)
        assert smp.satisfies_label(b, label)


def test_initial_states_feasible_for_every_label():
    labels = [Label(), Label(kind=LABEL_BLEED), Label(kind=LABEL_NO_BLEED),
              Label(kind=LABEL_RBC_RULE, windows=((2, 6, 5),))]
    for label in labels:
        for n in (1, 2, 8):
            b = smp.initial_states(n, label)
            assert b.shape == (n,)
            assert smp.satisfies_label(b, label)
            assert valid_sequence(b, ADJ_5)


def test_unlabeled_initial_states_all_stable():
    assert np.array_equal(smp.initial_states(5, Label()), np.ones(5))


# ---------------------------------------------------------------------------
# odds and ends

def test_draw_block_length_range():
    gen = np.random.default_rng(41)
    draws = np.array([smp.draw_block_length(gen) for _ in range(2000)])
    assert draws.min() >= 2 and draws.max() <= 50
    assert len(np.unique(draws)) > 40


def test_occupancy_matrix_matches_reference():
    from conftest import occupancy_reference
    gen = np.random.default_rng(43)
    inst = random_instance(gen, n=12)
    for cs in (0, 1, 3):
        got = smp.occupancy_matrix(inst.b_true - 1, 5, cs)
        want = occupancy_reference(inst.b_true, 5, cs)
        assert np.array_equal(got, want)
