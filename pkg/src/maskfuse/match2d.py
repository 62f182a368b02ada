"""2D correspondence graph over masks.

Two masks in different images are connected when enough pixel matches land
in both: with h the number of distinct matched pixel pairs and g1, g2 the
mask areas, the overlap ratio is h / min(g1, g2), and an edge appears when
the ratio reaches a threshold. The threshold is either a fixed override or
a nearest-rank percentile of all observed ratios across candidate image
pairs.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .config import PairPolicy, PipelineConfig
from .errors import ConfigError, EngineError
from .graph import MaskGraph, pack_vertex
from .scene.types import CameraPose, CorrespondenceSet, LabelMap, Scene
from .seeding import derive_seed

logger = logging.getLogger(__name__)


def filter_confident(
    cs: CorrespondenceSet, min_confidence: float
) -> CorrespondenceSet:
    """Matches with confidence >= min_confidence, order preserved."""
    if not 0.0 <= min_confidence <= 1.0:
        raise ConfigError("min_confidence must lie in [0, 1]")
    keep = np.nonzero(cs.confidence >= min_confidence)[0]
    return cs.take(keep)


def subsample_matches(
    cs: CorrespondenceSet, max_n: int, seed: int
) -> CorrespondenceSet:
    """Uniform sample without replacement down to max_n matches.

    Deterministic given the seed; original match order is preserved. Sets
    already within the budget pass through unchanged.
    """
    if max_n < 1:
        raise ConfigError("max_n must be at least 1")
    if len(cs) <= max_n:
        return cs
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(cs), size=max_n, replace=False)
    idx.sort()
    return cs.take(idx)


def candidate_pairs(
    poses: Sequence[CameraPose], policy: PairPolicy
) -> list[tuple[int, int]]:
    """Image pairs worth matching, as sorted position pairs (i, j), i < j.

    Hard gates on relative rotation angle and camera distance, then each
    image keeps its k_nearest lowest-scored partners; the result is the
    union over images.
    """
    n = len(poses)
    if n < 2:
        return []
    rot = np.stack([p.rotation for p in poses]).reshape(n, 9)
    trans = np.stack([p.translation for p in poses])
    # trace(Ra^T Rb) is the elementwise dot of the two matrices
    trace = rot @ rot.T
    cos = np.clip((trace - 1.0) / 2.0, -1.0, 1.0)
    angle = np.degrees(np.arccos(cos))
    dist = np.linalg.norm(trans[:, None, :] - trans[None, :, :], axis=2)

    allowed = (angle <= policy.max_angle_deg) & (dist <= policy.max_translation_m)
    np.fill_diagonal(allowed, False)
    score = angle / policy.max_angle_deg + dist / policy.max_translation_m

    pairs: set[tuple[int, int]] = set()
    for i in range(n):
        partners = np.nonzero(allowed[i])[0]
        ranked = sorted(partners.tolist(), key=lambda j: (score[i, j], j))
        for j in ranked[: policy.k_nearest]:
            pairs.add((i, j) if i < j else (j, i))
    return sorted(pairs)


@dataclass(frozen=True)
class MatchCountTable:
    """Distinct matched pixel-pair counts per (vertex, vertex) pair.

    Keys are packed vertex ids ordered so the lower image index comes
    first; lookups are symmetric.
    """

    counts: dict[tuple[int, int], int]

    def get(self, v1: int, v2: int) -> int:
        return self.counts.get((v1, v2), self.counts.get((v2, v1), 0))

    def items_sorted(self) -> list[tuple[tuple[int, int], int]]:
        return sorted(self.counts.items())

    def __len__(self) -> int:
        return len(self.counts)


def match_counts(
    label_maps: Mapping[int, LabelMap],
    correspondences: Iterable[CorrespondenceSet],
) -> MatchCountTable:
    """Count distinct matched pixel pairs between masks.

    Duplicate pixel pairs within an image pair count once (sets for the
    same image pair are merged first). Matches touching unlabeled pixels
    are ignored.
    """
    by_pair: dict[tuple[int, int], list[CorrespondenceSet]] = {}
    for cs in correspondences:
        for idx in (cs.image_a, cs.image_b):
            if idx not in label_maps:
                raise EngineError(
                    f"correspondence set references image {idx} with no label map")
        by_pair.setdefault((cs.image_a, cs.image_b), []).append(cs)

    counts: dict[tuple[int, int], int] = {}
    for (a, b), sets in sorted(by_pair.items()):
        quads = np.concatenate([
            np.stack([cs.xa, cs.ya, cs.xb, cs.yb], axis=1).astype(np.int64)
            for cs in sets
        ])
        if quads.size == 0:
            continue
        quads = np.unique(quads, axis=0)
        lm_a, lm_b = label_maps[a], label_maps[b]
        if (quads[:, 0].max() >= lm_a.width or quads[:, 1].max() >= lm_a.height
                or quads[:, 2].max() >= lm_b.width
                or quads[:, 3].max() >= lm_b.height):
            raise EngineError(
                f"correspondence set ({a}, {b}) has out-of-bounds pixels")
        la = lm_a.labels[quads[:, 1], quads[:, 0]].astype(np.int64)
        lb = lm_b.labels[quads[:, 3], quads[:, 2]].astype(np.int64)
        valid = (la > 0) & (lb > 0)
        if not np.any(valid):
            continue
        va = (a << 16) | la[valid]
        vb = (b << 16) | lb[valid]
        keys, key_counts = np.unique(np.stack([va, vb], axis=1), axis=0,
                                     return_counts=True)
        for (u, v), c in zip(keys.tolist(), key_counts.tolist()):
            counts[(int(u), int(v))] = counts.get((int(u), int(v)), 0) + int(c)
    return MatchCountTable(counts)


def overlap_ratio(h: int, g1: int, g2: int) -> float:
    """h / min(g1, g2), clamped into [0, 1] with a warning when h exceeds
    the smaller area (duplicate-free h can still exceed it when one pixel
    matches several)."""
    if g1 <= 0 or g2 <= 0:
        raise EngineError(f"zero-area mask in overlap ratio (areas {g1}, {g2})")
    if h < 0:
        raise EngineError("negative match count")
    r = h / min(g1, g2)
    if r > 1.0:
        logger.warning(
            "overlap ratio %.3f exceeds 1 (h=%d, min area %d); clamping",
            r, h, min(g1, g2))
        return 1.0
    return r


def percentile_threshold(ratios: Sequence[float], percentile: float) -> float:
    """Nearest-rank percentile of a ratio multiset."""
    if not 0.0 < percentile <= 100.0:
        raise ConfigError("percentile must be in (0, 100]")
    arr = np.sort(np.asarray(list(ratios), dtype=np.float64))
    if arr.size == 0:
        raise EngineError("cannot take a percentile of an empty ratio set")
    rank = math.ceil(percentile * arr.size / 100.0)
    return float(arr[max(rank - 1, 0)])


def build_2d_graph(
    scene: Scene,
    config: PipelineConfig,
    label_maps: Mapping[int, LabelMap] | None = None,
) -> MaskGraph:
    """Build the 2D correspondence graph for a scene.

    Vertices are all masks across all images (isolated vertices included).
    Correspondence sets outside the candidate image pairs are skipped;
    per-pair sets are confidence-filtered and subsampled before counting.
    With no ratios and no override the graph is edgeless.

    `label_maps` substitutes per-image label maps (e.g. after background
    removal) without touching the rest of the scene.
    """
    if label_maps is None:
        label_maps = {im.meta.index: im.label_map for im in scene.images}
    indices = sorted(label_maps)

    vertices = []
    areas: dict[int, int] = {}
    for idx in indices:
        for lid, area in label_maps[idx].areas().items():
            vid = pack_vertex(idx, lid)
            vertices.append(vid)
            areas[vid] = area

    poses = [scene.image(idx).meta.pose for idx in indices]
    wanted = {(indices[i], indices[j])
              for i, j in candidate_pairs(poses, config.pair_policy)}

    prepared: list[CorrespondenceSet] = []
    skipped = 0
    by_pair: dict[tuple[int, int], list[CorrespondenceSet]] = {}
    for cs in scene.correspondences:
        if (cs.image_a, cs.image_b) not in wanted:
            skipped += 1
            continue
        by_pair.setdefault((cs.image_a, cs.image_b), []).append(cs)
    if skipped:
        logger.info("skipped %d correspondence sets outside candidate pairs",
                    skipped)
    for (a, b), sets in sorted(by_pair.items()):
        if len(sets) == 1:
            cs = sets[0]
        else:
            cs = CorrespondenceSet(
                a, b,
                np.concatenate([s.xa for s in sets]),
                np.concatenate([s.ya for s in sets]),
                np.concatenate([s.xb for s in sets]),
                np.concatenate([s.yb for s in sets]),
                np.concatenate([s.confidence for s in sets]),
            )
        cs = filter_confident(cs, config.min_match_confidence)
        cs = subsample_matches(cs, config.max_matches_per_pair,
                               derive_seed(config.seed, "subsample", a, b))
        prepared.append(cs)

    table = match_counts(label_maps, prepared)
    entries = table.items_sorted()
    ratios = [overlap_ratio(h, areas[va], areas[vb]) for (va, vb), h in entries]

    if config.tau2d_override is not None:
        tau = config.tau2d_override
    elif ratios:
        tau = percentile_threshold(ratios, config.tau2d_percentile)
    else:
        tau = None

    edges = []
    if tau is not None:
        edges = [pair for pair, r in zip((e[0] for e in entries), ratios)
                 if r >= tau]
    return MaskGraph(tuple(vertices), tuple(edges))
