"""Undirected mask graphs and partitions over packed vertex ids.

A vertex is one mask, encoded as a single integer:
    vid = image_index * 65536 + local_id
so that ordering vids lexicographically orders (image, mask) pairs, and the
minimum vid of a group identifies its canonical representative.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import EngineError, InternalError
from .scene.types import MaskRef

_SHIFT = 16
_LOCAL_MASK = 0xFFFF


def pack_vertex(image_index: int, local_id: int) -> int:
    """Encode (image index, local mask id) as one vertex id."""
    if not (0 <= image_index <= 0xFFFF):
        raise EngineError(f"image index {image_index} out of range")
    if not (0 < local_id <= _LOCAL_MASK):
        raise EngineError(f"local mask id {local_id} out of range")
    return (image_index << _SHIFT) | local_id


def unpack_vertex(vid: int) -> MaskRef:
    """Decode a vertex id back to its MaskRef."""
    return MaskRef(int(vid) >> _SHIFT, int(vid) & _LOCAL_MASK)


@dataclass(frozen=True, eq=True)
class MaskGraph:
    """Immutable undirected graph with canonical vertex/edge ordering.

    Vertices are sorted ascending; edges are stored as (u, v) with u < v,
    sorted, deduplicated. Self loops are rejected.
    """

    vertices: tuple[int, ...]
    edges: tuple[tuple[int, int], ...]

    def __post_init__(self) -> None:
        verts = tuple(sorted(set(int(v) for v in self.vertices)))
        vset = set(verts)
        canon = set()
        for u, v in self.edges:
            u, v = int(u), int(v)
            if u == v:
                raise EngineError(f"self loop on vertex {u}")
            if u not in vset or v not in vset:
                raise EngineError(f"edge ({u}, {v}) references unknown vertex")
            canon.add((u, v) if u < v else (v, u))
        object.__setattr__(self, "vertices", verts)
        object.__setattr__(self, "edges", tuple(sorted(canon)))

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def vertex_array(self) -> np.ndarray:
        return np.asarray(self.vertices, dtype=np.int64)

    def edge_array(self) -> np.ndarray:
        if not self.edges:
            return np.empty((0, 2), dtype=np.int64)
        return np.asarray(self.edges, dtype=np.int64)


@dataclass(frozen=True)
class Partition:
    """Grouping of vertices into supervertices.

    Each supervertex is identified by the minimum vertex id among its
    members, so ids are stable and self-describing.
    """

    assignment: dict[int, int]
    members: dict[int, tuple[int, ...]] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        groups: dict[int, list[int]] = {}
        for v, s in self.assignment.items():
            groups.setdefault(int(s), []).append(int(v))
        members = {}
        for s, vs in groups.items():
            vs.sort()
            if s != vs[0]:
                raise InternalError(
                    f"supervertex id {s} is not the minimum of its members")
            members[s] = tuple(vs)
        object.__setattr__(self, "assignment",
                           {int(v): int(s) for v, s in self.assignment.items()})
        object.__setattr__(self, "members",
                           dict(sorted(members.items())))

    @classmethod
    def from_groups(cls, groups: list[list[int]]) -> "Partition":
        assignment = {}
        for g in groups:
            rep = min(g)
            for v in g:
                assignment[v] = rep
        return cls(assignment)

    @classmethod
    def identity(cls, vertices) -> "Partition":
        return cls({int(v): int(v) for v in vertices})

    @property
    def n_vertices(self) -> int:
        return len(self.assignment)

    @property
    def n_supervertices(self) -> int:
        return len(self.members)

    def supervertex_of(self, vid: int) -> int:
        try:
            return self.assignment[int(vid)]
        except KeyError:
            raise EngineError(f"vertex {vid} not in partition") from None

    def to_json_dict(self) -> dict:
        return {"supervertices": {str(s): list(vs)
                                  for s, vs in self.members.items()}}

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json_dict(cls, doc: dict) -> "Partition":
        try:
            groups = doc["supervertices"]
        except (TypeError, KeyError):
            raise EngineError("partition JSON must contain 'supervertices'")
        assignment = {}
        for s, vs in groups.items():
            for v in vs:
                assignment[int(v)] = int(s)
        return cls(assignment)
