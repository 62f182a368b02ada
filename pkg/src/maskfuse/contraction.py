"""Randomized star contraction.

Connected components are found by repeated star rounds. In a round every
vertex draws a uniform label in [0, 1); a vertex is a center when its
(label, id) pair is lexicographically minimal over its closed neighborhood,
and every non-center merges into the neighbor minimizing (label, id). Merge
pointers strictly decrease (label, id), so they form a forest and resolve by
pointer jumping. Rounds repeat on the contracted graph with fresh labels
until no edges remain; the resulting supervertices are exactly the connected
components of the input graph.

Labels are counter-based hashes of (seed, vertex id), so the whole procedure
is a pure function of (graph, seed): no RNG state, no iteration-order or
thread-count dependence.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EngineError, InternalError
from .graph import MaskGraph, Partition
from .seeding import derive_seed, uniform_unit

_MAX_ROUNDS = 200
_MAX_JUMPS = 128


@dataclass(frozen=True, eq=False)
class LabelAssignment:
    """Immutable per-vertex labels in [0, 1), keyed on (seed, vertex id)."""

    ids: np.ndarray
    values: np.ndarray
    seed: int | None

    def __post_init__(self) -> None:
        ids = np.asarray(self.ids, dtype=np.int64)
        values = np.asarray(self.values, dtype=np.float64)
        if ids.ndim != 1 or values.shape != ids.shape:
            raise EngineError("label assignment arrays must be parallel 1D")
        if ids.size and np.any(np.diff(ids) <= 0):
            raise EngineError("label assignment ids must be strictly increasing")
        if values.size and (values.min() < 0.0 or values.max() >= 1.0):
            raise EngineError("labels must lie in [0, 1)")
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "values", values)

    @classmethod
    def generate(cls, vertices, seed: int) -> "LabelAssignment":
        ids = np.asarray(sorted(int(v) for v in vertices), dtype=np.int64)
        return cls(ids, uniform_unit(seed, ids.astype(np.uint64)), seed)

    @classmethod
    def from_mapping(cls, mapping: dict[int, float]) -> "LabelAssignment":
        ids = np.asarray(sorted(mapping), dtype=np.int64)
        values = np.asarray([mapping[int(i)] for i in ids], dtype=np.float64)
        return cls(ids, values, None)

    def values_for(self, ids: np.ndarray) -> np.ndarray:
        pos = np.searchsorted(self.ids, ids)
        if np.any(pos >= self.ids.size) or np.any(self.ids[pos] != ids):
            raise EngineError("label assignment does not cover all vertices")
        return self.values[pos]

    def __getitem__(self, vid: int) -> float:
        return float(self.values_for(np.asarray([vid], dtype=np.int64))[0])


def assign_labels(vertices, seed: int) -> LabelAssignment:
    """Labels for a vertex set; a pure function of (seed, vertex id)."""
    return LabelAssignment.generate(vertices, seed)


def star_round(
    graph: MaskGraph, labels: LabelAssignment
) -> tuple[dict[int, int], MaskGraph]:
    """One star round.

    Returns (merge, contracted): `merge` maps every vertex to the id of the
    star center absorbing it (centers map to themselves), and `contracted`
    is the graph induced on centers with self loops removed and parallel
    edges collapsed.
    """
    ids = graph.vertex_array()
    if ids.size == 0:
        return {}, graph
    lab = labels.values_for(ids)
    edges = graph.edge_array()
    e0 = np.searchsorted(ids, edges[:, 0])
    e1 = np.searchsorted(ids, edges[:, 1])

    # closed-neighborhood minimum label
    min_lab = lab.copy()
    np.minimum.at(min_lab, e0, lab[e1])
    np.minimum.at(min_lab, e1, lab[e0])

    # among label minimizers, the smallest id wins
    big = np.iinfo(np.int64).max
    min_id = np.where(lab == min_lab, ids, big)
    hit = lab[e1] == min_lab[e0]
    np.minimum.at(min_id, e0[hit], edges[hit, 1])
    hit = lab[e0] == min_lab[e1]
    np.minimum.at(min_id, e1[hit], edges[hit, 0])

    # pointers strictly decrease (label, id), so jumping terminates
    ptr = np.searchsorted(ids, min_id)
    for _ in range(_MAX_JUMPS):
        nxt = ptr[ptr]
        if np.array_equal(nxt, ptr):
            break
        ptr = nxt
    else:
        raise InternalError("star pointers did not resolve; cycle in merge forest")

    roots = ids[ptr]
    merge = {int(v): int(r) for v, r in zip(ids.tolist(), roots.tolist())}

    ra, rb = roots[e0], roots[e1]
    keep = ra != rb
    if np.any(keep):
        pairs = np.sort(np.stack([ra[keep], rb[keep]], axis=1), axis=1)
        pairs = np.unique(pairs, axis=0)
        new_edges = tuple((int(u), int(v)) for u, v in pairs)
    else:
        new_edges = ()
    new_vertices = tuple(int(v) for v in np.unique(roots))
    return merge, MaskGraph(new_vertices, new_edges)


def contract(graph: MaskGraph, seed: int) -> Partition:
    """Contract a graph to its connected components.

    Deterministic in (graph, seed); the fixed point is independent of the
    label draws, which only affect how fast rounds converge.
    """
    orig = graph.vertex_array()
    cur = orig.copy()
    g = graph
    round_idx = 0
    while g.n_edges:
        if round_idx >= _MAX_ROUNDS:
            raise InternalError(
                f"contraction did not terminate after {_MAX_ROUNDS} rounds")
        labels = assign_labels(g.vertices, derive_seed(seed, "round", round_idx))
        merge, g = star_round(g, labels)
        prev = np.asarray(sorted(merge), dtype=np.int64)
        lookup = np.asarray([merge[int(v)] for v in prev], dtype=np.int64)
        cur = lookup[np.searchsorted(prev, cur)]
        round_idx += 1

    # root ids are members of their groups but not necessarily minimal;
    # re-canonicalize so each supervertex id is its minimum member
    reps: dict[int, int] = {}
    for oid, r in zip(orig.tolist(), cur.tolist()):
        reps.setdefault(r, oid)
    return Partition({int(o): reps[int(r)] for o, r in zip(orig.tolist(),
                                                           cur.tolist())})


def compose(first: Partition, second: Partition) -> Partition:
    """Compose partitions: `second` groups the supervertices of `first`."""
    if set(second.assignment) != set(first.members):
        raise EngineError(
            "composition mismatch: second partition must cover exactly the "
            "supervertices of the first")
    return Partition({v: second.assignment[s]
                      for v, s in first.assignment.items()})
