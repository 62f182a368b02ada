"""3D structural graph over supervertices.

Each supervertex lifts to the point cloud of its member masks' confident
pixels. Two supervertices connect when the directed chamfer distance (mean
of squared nearest-neighbor distances) is within tau_3d in either
direction. Nearest neighbors are exact (KD tree); an axis-aligned bbox gap
bound prunes pairs that cannot possibly connect before any query runs.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Mapping

import numpy as np
from scipy.spatial import cKDTree

from .config import PipelineConfig
from .contraction import compose, contract
from .errors import ConfigError, EngineError
from .graph import MaskGraph, Partition, unpack_vertex
from .scene.types import LabelMap, Scene
from .seeding import derive_seed, rng_for

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class SuperVertexCloud:
    """Lifted points of one supervertex with per-point provenance."""

    svid: int
    points: np.ndarray   # (n, 3) float64, world meters
    sources: np.ndarray  # (n,) int32 image index
    pixels: np.ndarray   # (n, 2) int32 pixel (x, y)

    def __post_init__(self) -> None:
        p = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        s = np.asarray(self.sources, dtype=np.int32).reshape(-1)
        px = np.asarray(self.pixels, dtype=np.int32).reshape(-1, 2)
        if s.shape[0] != p.shape[0] or px.shape[0] != p.shape[0]:
            raise EngineError("cloud arrays have mismatched lengths")
        object.__setattr__(self, "points", p)
        object.__setattr__(self, "sources", s)
        object.__setattr__(self, "pixels", px)

    @property
    def n_points(self) -> int:
        return int(self.points.shape[0])

    @property
    def is_empty(self) -> bool:
        return self.points.shape[0] == 0


class NeighborIndex:
    """Exact nearest-neighbor queries over a fixed point set."""

    def __init__(self, points: np.ndarray):
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        if points.shape[0] == 0:
            raise EngineError("cannot index an empty point set")
        self._tree = cKDTree(points)

    def nearest_sq(self, queries: np.ndarray, workers: int = 1) -> np.ndarray:
        """Squared distance from each query to its exact nearest neighbor."""
        d, _ = self._tree.query(np.asarray(queries, dtype=np.float64),
                                k=1, workers=workers)
        return np.asarray(d, dtype=np.float64) ** 2


def supervertex_cloud(
    partition: Partition,
    scene: Scene,
    min_point_confidence: float,
    label_maps: Mapping[int, LabelMap] | None = None,
) -> dict[int, SuperVertexCloud]:
    """Lift every supervertex to its labeled 3D points.

    Pixels below the confidence floor are dropped; a supervertex whose
    member pixels all fail the floor yields an empty, flagged cloud.
    Point order is canonical: members by vertex id, pixels row-major.
    """
    if not 0.0 <= min_point_confidence <= 1.0:
        raise ConfigError("min_point_confidence must lie in [0, 1]")
    if label_maps is None:
        label_maps = {im.meta.index: im.label_map for im in scene.images}
    clouds: dict[int, SuperVertexCloud] = {}
    for svid, members in partition.members.items():
        pts, srcs, pixs = [], [], []
        for vid in members:
            img_idx, local_id = unpack_vertex(vid)
            lm = label_maps[img_idx]
            pm = scene.image(img_idx).point_map
            ys, xs = np.nonzero(lm.labels == local_id)
            ok = pm.confidence[ys, xs] >= min_point_confidence
            ys, xs = ys[ok], xs[ok]
            if ys.size:
                pts.append(pm.points[ys, xs].astype(np.float64))
                srcs.append(np.full(ys.size, img_idx, dtype=np.int32))
                pixs.append(np.stack([xs, ys], axis=1).astype(np.int32))
        if pts:
            cloud = SuperVertexCloud(svid, np.concatenate(pts),
                                     np.concatenate(srcs), np.concatenate(pixs))
        else:
            cloud = SuperVertexCloud(
                svid, np.empty((0, 3)), np.empty(0, np.int32),
                np.empty((0, 2), np.int32))
        clouds[svid] = cloud
    return clouds


def directed_chamfer(from_points: np.ndarray, to_points: np.ndarray) -> float:
    """Mean squared distance from each source point to its nearest target."""
    from_points = np.asarray(from_points, dtype=np.float64).reshape(-1, 3)
    to_points = np.asarray(to_points, dtype=np.float64).reshape(-1, 3)
    if from_points.shape[0] == 0 or to_points.shape[0] == 0:
        raise EngineError("directed chamfer requires non-empty point sets")
    return float(np.mean(NeighborIndex(to_points).nearest_sq(from_points)))


def _bbox_gap_sq(lo_a, hi_a, lo_b, hi_b) -> float:
    gap = np.maximum(0.0, np.maximum(lo_b - hi_a, lo_a - hi_b))
    return float(np.sum(gap * gap))


def build_3d_graph(
    clouds: Mapping[int, SuperVertexCloud],
    tau_3d: float,
    *,
    threads: int = 1,
    max_points: int | None = None,
    seed: int = 0,
) -> MaskGraph:
    """Connect supervertices whose clouds sit within tau_3d of each other.

    Vertices are the supervertices with non-empty clouds. Clouds larger
    than max_points are subsampled (seeded, deterministic) before
    indexing. An edge appears when the directed chamfer is <= tau_3d in
    either direction. The candidate pair list is pruned with a
    conservative bbox gap bound: if the squared gap already exceeds
    tau_3d, neither directed mean can be within it.

    Results do not depend on `threads`.
    """
    if tau_3d <= 0.0:
        raise ConfigError("tau_3d must be positive")
    svids = sorted(s for s, c in clouds.items() if not c.is_empty)
    dropped = len(clouds) - len(svids)
    if dropped:
        logger.info("3D graph: %d supervertices have empty clouds", dropped)

    samples: dict[int, np.ndarray] = {}
    for s in svids:
        pts = clouds[s].points
        if max_points is not None and pts.shape[0] > max_points:
            idx = rng_for(seed, "cloudcap", s).choice(
                pts.shape[0], size=max_points, replace=False)
            idx.sort()
            pts = pts[idx]
        samples[s] = pts

    trees = {s: NeighborIndex(samples[s]) for s in svids}
    los = {s: samples[s].min(axis=0) for s in svids}
    his = {s: samples[s].max(axis=0) for s in svids}

    pairs = []
    for i, u in enumerate(svids):
        for v in svids[i + 1:]:
            if _bbox_gap_sq(los[u], his[u], los[v], his[v]) <= tau_3d:
                pairs.append((u, v))

    def connected(pair: tuple[int, int]) -> bool:
        u, v = pair
        if float(np.mean(trees[v].nearest_sq(samples[u]))) <= tau_3d:
            return True
        return float(np.mean(trees[u].nearest_sq(samples[v]))) <= tau_3d

    if threads > 1 and len(pairs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            flags = list(pool.map(connected, pairs))
    else:
        flags = [connected(p) for p in pairs]

    edges = tuple(p for p, f in zip(pairs, flags) if f)
    return MaskGraph(tuple(svids), edges)


def refine(
    partition: Partition,
    scene: Scene,
    config: PipelineConfig,
    label_maps: Mapping[int, LabelMap] | None = None,
) -> Partition:
    """Merge 2D supervertices that coincide structurally in 3D.

    Builds the 3D graph over the partition's supervertex clouds, contracts
    it, and composes the result onto the input partition. Supervertices
    with empty clouds stay as they are.
    """
    if config.tau3d <= 0.0:
        raise ConfigError("refine requires tau3d > 0")
    clouds = supervertex_cloud(partition, scene, config.min_point_confidence,
                               label_maps)
    nonempty = {s: c for s, c in clouds.items() if not c.is_empty}
    graph = build_3d_graph(
        nonempty, config.tau3d,
        threads=config.resolved_threads,
        max_points=config.max_cloud_points,
        seed=config.seed,
    )
    grouping = contract(graph, derive_seed(config.seed, "contract3d"))
    extended = dict(grouping.assignment)
    for s in partition.members:
        extended.setdefault(s, s)
    return compose(partition, Partition(extended))
