"""Enumeration of admissible latent-state tuples between boundary states.

B(p, left, right) is the set of length-p state tuples (t_1, ..., t_p) such
that left -> t_1, every t_i -> t_{i+1}, and t_p -> right are allowed edges of
the diagram. Either boundary may be free (None), dropping that constraint.
These sets back the pair-swap and block-Gibbs samplers; their cardinality
grows fast with p, so enumeration is guarded and a matrix-power counter is
provided for sizes only.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .diagram import ADJ_5

ENUMERATION_MAX_P = 12


@dataclass(frozen=True)
class PathSet:
    """All admissible tuples for one (p, left, right) boundary condition.

    tuples is an int64 array of shape (count, p) holding 1-based states in
    lexicographic order; left/right are 1-based states or None for a free
    boundary.
    """
    p: int
    left: int | None
    right: int | None
    tuples: np.ndarray = field(repr=False)

    @property
    def count(self) -> int:
        return self.tuples.shape[0]


def enumerate_paths(p: int, left: int | None, right: int | None,
                    adj: np.ndarray | None = None) -> PathSet:
    """Enumerate B(p, left, right) in lexicographic order.

    p must be in 1..ENUMERATION_MAX_P; larger blocks are refused because the
    set size grows geometrically (use count_paths for sizes).
    """
    if adj is None:
        adj = ADJ_5
    S = adj.shape[0]
    if not 1 <= p <= ENUMERATION_MAX_P:
        raise ValueError(
            f"p={p} outside 1..{ENUMERATION_MAX_P}; enumeration refused")
    for name, b in (("left", left), ("right", right)):
        if b is not None and not 1 <= b <= S:
            raise ValueError(f"{name} boundary {b} not a state in 1..{S}")

    succ = [np.nonzero(adj[s])[0] + 1 for s in range(S)]
    first = succ[left - 1] if left is not None else np.arange(1, S + 1)
    out = []
    stack = [(int(f),) for f in first[::-1]]
    # depth-first with reversed push order keeps lexicographic output
    while stack:
        tup = stack.pop()
        if len(tup) == p:
            if right is None or adj[tup[-1] - 1, right - 1]:
                out.append(tup)
            continue
        for nxt in succ[tup[-1] - 1][::-1]:
            stack.append(tup + (int(nxt),))
    # DFS with reversed pushes emits in lexicographic order already, but be
    # explicit: sorted() on tuples is cheap next to the enumeration itself.
    out.sort()
    arr = np.array(out, dtype=np.int64).reshape(len(out), p)
    return PathSet(p=p, left=left, right=right, tuples=arr)


def count_paths(p: int, left: int | None, right: int | None,
                adj: np.ndarray | None = None) -> int:
    """|B(p, left, right)| by iterated matrix-vector products (no tuple
    materialization, so any p)."""
    if adj is None:
        adj = ADJ_5
    S = adj.shape[0]
    if p < 1:
        raise ValueError(f"p={p} must be >= 1")
    A = adj.astype(object)  # python ints: exact for any p
    v = A[left - 1].copy() if left is not None else np.ones(S, dtype=object)
    for _ in range(p - 1):
        v = v @ A
    if right is not None:
        return int(v @ A[:, right - 1])
    return int(v.sum())


def pair_tables(adj: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Flattened B(2, left, right) lookup for every boundary combination.

    Returns (pairs, offset, count): pairs is (total, 2) int64 of 1-based
    states; for boundary indices li, ri in 0..S (S meaning free),
    offset[li, ri] is the start row and count[li, ri] the number of pairs.
    """
    S = adj.shape[0]
    pairs = []
    offset = np.zeros((S + 1, S + 1), dtype=np.int64)
    count = np.zeros((S + 1, S + 1), dtype=np.int64)
    for li in range(S + 1):
        left = li + 1 if li < S else None
        for ri in range(S + 1):
            right = ri + 1 if ri < S else None
            ps = enumerate_paths(2, left, right, adj)
            offset[li, ri] = len(pairs)
            count[li, ri] = ps.count
            pairs.extend(map(tuple, ps.tuples))
    return np.array(pairs, dtype=np.int64), offset, count


def valid_sequence(b: np.ndarray, adj: np.ndarray | None = None) -> bool:
    """True when every consecutive transition in the 1-based sequence b is an
    allowed edge."""
    if adj is None:
        adj = ADJ_5
    b = np.asarray(b, dtype=np.int64)
    if b.size == 0:
        return True
    if b.min() < 1 or b.max() > adj.shape[0]:
        return False
    return bool(np.all(adj[b[:-1] - 1, b[1:] - 1] == 1))
