"""Independent reference implementations used as test oracles."""

from __future__ import annotations

import numpy as np


class UnionFind:
    """Classic union-find with path compression."""

    def __init__(self, items):
        self.parent = {x: x for x in items}

    def find(self, x):
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[ra] = rb


def components_by_unionfind(vertices, edges) -> dict[int, tuple[int, ...]]:
    """Connected components as {min member: sorted members}."""
    uf = UnionFind(vertices)
    for u, v in edges:
        uf.union(u, v)
    groups: dict[int, list[int]] = {}
    for v in vertices:
        groups.setdefault(uf.find(v), []).append(v)
    out = {}
    for members in groups.values():
        members.sort()
        out[members[0]] = tuple(members)
    return out


def brute_directed_chamfer(a: np.ndarray, b: np.ndarray) -> float:
    """Mean over a of the min squared distance to b, O(|a||b|)."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 3)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 3)
    mins = np.empty(a.shape[0])
    chunk = 512
    for i in range(0, a.shape[0], chunk):
        block = a[i : i + chunk]
        d2 = np.sum((block[:, None, :] - b[None, :, :]) ** 2, axis=2)
        mins[i : i + chunk] = d2.min(axis=1)
    return float(np.mean(mins))


def brute_symmetric_chamfer(a: np.ndarray, b: np.ndarray) -> float:
    """Sum-form symmetric chamfer: both directed sums of squared NN distances."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 3)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 3)
    total = 0.0
    for src, dst in ((a, b), (b, a)):
        for i in range(0, src.shape[0], 512):
            block = src[i : i + 512]
            d2 = np.sum((block[:, None, :] - dst[None, :, :]) ** 2, axis=2)
            total += float(d2.min(axis=1).sum())
    return total


def random_graph(rng: np.random.Generator, n: int, p: float):
    """Erdos-Renyi style random graph on packed-looking vertex ids."""
    vertices = list(range(1, n + 1))
    edges = []
    if n >= 2:
        iu, ju = np.triu_indices(n, k=1)
        draw = rng.random(iu.size) < p
        edges = [(int(iu[k]) + 1, int(ju[k]) + 1)
                 for k in np.nonzero(draw)[0]]
    return vertices, edges
