"""Minimum spanning trees and weighted lifetime sums.

The total-lifetime statistic used here is the sum of MST edge lengths
raised to a power alpha; it coincides with the degree-0 persistence
lifetime sum of the point set, so no filtration machinery is needed.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError
from .geometry import DistanceMatrix


@dataclass
class EdgeList:
    """MST edges as (i, j, length) with i < j, sorted by (i, j)."""

    edges: list[tuple[int, int, float]] = field(default_factory=list)

    @property
    def count(self) -> int:
        return len(self.edges)

    def total_length(self) -> float:
        return float(sum(e[2] for e in self.edges))

    def lengths(self) -> np.ndarray:
        return np.array([e[2] for e in self.edges], dtype=np.float64)


def minimum_spanning_tree(dist: DistanceMatrix) -> EdgeList:
    """Dense Prim scan, O(m^2) time and O(m) extra space.

    Equal-length candidates are resolved toward the lexicographically
    smallest normalized (i, j) pair, so the returned edge list is a
    deterministic function of the input.
    """
    d = dist.values
    m = d.shape[0]
    if m == 1:
        return EdgeList([])

    in_tree = np.zeros(m, dtype=bool)
    in_tree[0] = True
    best = d[0].copy()
    parent = np.zeros(m, dtype=np.int64)
    best[0] = np.inf

    idx = np.arange(m)
    edges: list[tuple[int, int, float]] = []
    for _ in range(m - 1):
        masked = np.where(in_tree, np.inf, best)
        w = float(masked.min())
        candidates = np.flatnonzero(masked == w)
        # break ties toward the smallest normalized (i, j) pair
        lo = np.minimum(parent[candidates], candidates)
        hi = np.maximum(parent[candidates], candidates)
        order = np.lexsort((hi, lo))
        v = int(candidates[order[0]])

        a, b = int(parent[v]), v
        edges.append((min(a, b), max(a, b), float(d[a, b])))
        in_tree[v] = True
        best[v] = np.inf

        dv = d[v]
        out = ~in_tree
        closer = out & (dv < best)
        best[closer] = dv[closer]
        parent[closer] = v
        tied = out & (dv == best) & ~closer
        if tied.any():
            t = idx[tied]
            new_lo, new_hi = np.minimum(v, t), np.maximum(v, t)
            old_lo, old_hi = np.minimum(parent[t], t), np.maximum(parent[t], t)
            swap = (new_lo < old_lo) | ((new_lo == old_lo) & (new_hi < old_hi))
            parent[t[swap]] = v

    edges.sort(key=lambda e: (e[0], e[1]))
    return EdgeList(edges)


def alpha_weighted_lifetime_sum(dist: DistanceMatrix, alpha: float) -> float:
    """Sum over MST edges of length**alpha; zero for a single point."""
    if alpha < 0:
        raise InvalidInputError(f"alpha must be >= 0, got {alpha}")
    if alpha > 1:
        warnings.warn(
            "alpha > 1 is outside the range covered by the lifetime-sum "
            "generalization bound (alpha in (0, 1]); the statistic itself is "
            "still well defined",
            stacklevel=2,
        )
    tree = minimum_spanning_tree(dist)
    if tree.count == 0:
        return 0.0
    return float(np.sum(tree.lengths() ** alpha))
