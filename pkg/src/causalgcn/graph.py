"""Dependency trees and the normalized adjacency fed to the GCN layers."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

ROOT = -1


class TreeError(ValueError):
    pass


class HeadRangeError(TreeError):
    pass


class CycleError(TreeError):
    pass


class RootError(TreeError):
    pass


@dataclass(frozen=True)
class DepTree:
    heads: tuple

    @property
    def n(self) -> int:
        return len(self.heads)

    def edges(self):
        return [(i, h) for i, h in enumerate(self.heads) if h != ROOT]


@dataclass(frozen=True)
class AdjMatrix:
    a_tilde: np.ndarray
    degrees: np.ndarray

    @property
    def n(self) -> int:
        return self.a_tilde.shape[0]

    def normalized(self) -> np.ndarray:
        """Row i of the self-looped adjacency divided by d_i."""
        return self.a_tilde / self.degrees[:, None]


def validate_tree(heads: Sequence[int]) -> DepTree:
    """Check that 0-based ``heads`` (``ROOT`` for the root token) form a tree."""
    heads = tuple(int(h) for h in heads)
    n = len(heads)
    if n == 0:
        raise TreeError("empty head list")
    for i, h in enumerate(heads):
        if h != ROOT and not 0 <= h < n:
            raise HeadRangeError(f"token {i}: head {h} out of range for {n} tokens")
        if h == i:
            raise CycleError(f"token {i} is its own head")
    # following heads from any token must reach ROOT within n steps
    state = [0] * n  # 0 unvisited, 1 on current path, 2 reaches root
    for start in range(n):
        path = []
        node = start
        while node != ROOT and state[node] == 0:
            state[node] = 1
            path.append(node)
            node = heads[node]
        if node != ROOT and state[node] == 1:
            raise CycleError(f"cycle through token {node}")
        for p in path:
            state[p] = 2
    n_roots = sum(1 for h in heads if h == ROOT)
    if n_roots != 1:
        raise RootError(f"expected exactly one ROOT, found {n_roots}")
    return DepTree(heads)


def build_adjacency(tree: DepTree) -> AdjMatrix:
    n = tree.n
    a = np.eye(n)
    for i, h in tree.edges():
        a[i, h] = a[h, i] = 1.0
    a.setflags(write=False)
    deg = a.sum(axis=1)
    deg.setflags(write=False)
    return AdjMatrix(a, deg)


def tree_distances(tree: DepTree) -> np.ndarray:
    """All-pairs hop counts over the undirected tree (used by locality checks)."""
    n = tree.n
    adj = [[] for _ in range(n)]
    for i, h in tree.edges():
        adj[i].append(h)
        adj[h].append(i)
    dist = np.full((n, n), -1, dtype=np.int64)
    for s in range(n):
        dist[s, s] = 0
        frontier = [s]
        while frontier:
            nxt = []
            for u in frontier:
                for v in adj[u]:
                    if dist[s, v] < 0:
                        dist[s, v] = dist[s, u] + 1
                        nxt.append(v)
            frontier = nxt
    return dist
