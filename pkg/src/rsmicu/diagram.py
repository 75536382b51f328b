"""State diagrams for the latent Markov process.

A diagram is the set of allowed one-step transitions between latent states.
States are numbered from 1 in the public API; every state has a self-loop.
"""
from __future__ import annotations

import numpy as np

# 5-state clinical diagram. States: 1 stable, 2 hemorrhage, 3 recovery from
# hemorrhage, 4 non-bleeding event, 5 recovery from non-bleeding event.
# Directed edges that carry a transition logit, in fixed order. Self-loops are
# the reference category of each row and carry no parameter.
EDGES_5 = (
    (1, 2), (1, 4),
    (2, 3), (2, 4),
    (3, 1), (3, 2), (3, 4),
    (4, 2), (4, 5),
    (5, 1), (5, 2), (5, 4),
)

# 3-state diagram used by the small longitudinal study: 1 baseline, 2 rising,
# 3 falling (recovery may re-enter either trend or settle).
EDGES_3 = (
    (1, 2),
    (2, 3),
    (3, 1), (3, 2),
)


def adjacency(n_states: int, edges=None) -> np.ndarray:
    """0/1 matrix of allowed transitions (1-based states on axes 0..n-1),
    self-loops included."""
    if edges is None:
        if n_states == 5:
            edges = EDGES_5
        elif n_states == 3:
            edges = EDGES_3
        else:
            raise ValueError(f"no default edge set for {n_states} states")
    A = np.eye(n_states, dtype=np.int64)
    for a, b in edges:
        A[a - 1, b - 1] = 1
    return A


ADJ_5 = adjacency(5)
ADJ_3 = adjacency(3)

# Structural zeros of the 5-state transition matrix, 1-based (row, col).
STRUCTURAL_ZEROS_5 = (
    (1, 3), (1, 5), (2, 1), (2, 5), (3, 5), (4, 1), (4, 3), (5, 3),
)
