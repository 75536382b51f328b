"""Path-set enumeration against a direct product-filter oracle.

The frozen cardinalities below were computed once with the oracle in
conftest and cross-checked by hand for small p; they pin the enumeration
for good.
"""

import numpy as np
import pytest

from rsmicu.paths import (ENUMERATION_MAX_P, count_paths, enumerate_paths,
                          pair_tables, valid_sequence)
from conftest import brute_force_tuples

# |B^(p)_{left,right}| for the three endpoint pairs at p = 1,2,4,6,8,10
FROZEN_COUNTS = {
    (1, 1): {1: 1, 2: 3, 4: 37, 6: 395, 8: 4221, 10: 45123},
    (2, 3): {1: 2, 2: 5, 4: 48, 6: 509, 8: 5436, 10: 58105},
    (5, 4): {1: 4, 2: 13, 4: 137, 6: 1465, 8: 15661, 10: 167413},
}


@pytest.mark.parametrize("left,right", sorted(FROZEN_COUNTS))
@pytest.mark.parametrize("p", [1, 2, 4, 6, 8, 10])
def test_frozen_cardinalities(left, right, p):
    expect = FROZEN_COUNTS[(left, right)][p]
    assert count_paths(p, left, right) == expect
    if p <= 6:
        ps = enumerate_paths(p, left, right)
        assert ps.count == expect


@pytest.mark.parametrize("p", [1, 2, 3, 4])
@pytest.mark.parametrize("left", [None, 1, 2, 3, 4, 5])
@pytest.mark.parametrize("right", [None, 1, 2, 3, 4, 5])
def test_enumeration_matches_oracle(p, left, right, adj5):
    want = brute_force_tuples(p, left, right, adj5)
    ps = enumerate_paths(p, left, right)
    got = [tuple(row) for row in ps.tuples]
    assert got == sorted(want)
    assert count_paths(p, left, right) == len(want)


def test_worked_singleton():
    ps = enumerate_paths(1, 1, 3)
    assert [tuple(r) for r in ps.tuples] == [(2,)]


def test_worked_pairs():
    ps = enumerate_paths(2, 1, 3)
    assert [tuple(r) for r in ps.tuples] == [(1, 2), (2, 2), (2, 3), (4, 2)]


def test_lexicographic_order():
    ps = enumerate_paths(5, 2, 4)
    rows = [tuple(r) for r in ps.tuples]
    assert rows == sorted(rows)
    assert len(set(rows)) == len(rows)


def test_interior_transitions_admissible(adj5):
    ps = enumerate_paths(6, 5, 4)
    for row in ps.tuples:
        assert adj5[4, row[0] - 1]
        assert adj5[row[-1] - 1, 3]
        for a, b in zip(row, row[1:]):
            assert adj5[a - 1, b - 1]


def test_enumeration_guard():
    with pytest.raises(ValueError):
        enumerate_paths(ENUMERATION_MAX_P + 1, 1, 1)
    # counting stays available past the guard
    assert count_paths(ENUMERATION_MAX_P + 1, 1, 1) > 0


def test_free_endpoints(adj5):
    # no endpoint constraints: every admissible tuple
    assert count_paths(3, None, None) == len(
        brute_force_tuples(3, None, None, adj5))


def test_valid_sequence():
    assert valid_sequence(np.array([1, 2, 3, 1]))
    assert valid_sequence(np.array([5, 1, 4, 5, 4, 2]))
    assert not valid_sequence(np.array([1, 3]))
    assert not valid_sequence(np.array([2, 1]))
    assert not valid_sequence(np.array([1, 5]))


def test_pair_tables_consistency(adj5):
    pairs, offset, count = pair_tables(adj5)
    S = adj5.shape[0]
    for li in range(S + 1):
        left = li + 1 if li < S else None
        for ri in range(S + 1):
            right = ri + 1 if ri < S else None
            want = brute_force_tuples(2, left, right, adj5)
            lo = offset[li, ri]
            got = [tuple(r) for r in pairs[lo:lo + count[li, ri]]]
            assert got == sorted(want)
