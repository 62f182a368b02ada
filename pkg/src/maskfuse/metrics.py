"""Evaluation: IoU, F1, symmetric Chamfer, object matching, pixel utility.

Pixel scores compare 2D sets (pixels packed with their image index);
Chamfer compares the lifted 3D clouds. Each ground-truth object is matched
twice: once to the predicted class with the highest IoU (reported as iou,
f1, precision) and once to the class with the lowest symmetric Chamfer
distance (reported as d_chamfer, iou_sel). The background class is never
a candidate.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import EvalError
from .lift3d import NeighborIndex
from .pipeline import SegmentationResult
from .scene.types import Scene
from .seeding import rng_for


def _as_elements(x) -> np.ndarray:
    """Normalize a set-like input to a sorted unique 1D array."""
    if isinstance(x, np.ndarray):
        return np.unique(x.ravel())
    return np.unique(np.asarray(list(x)))


def _intersection(a: np.ndarray, b: np.ndarray) -> int:
    return int(np.intersect1d(a, b, assume_unique=True).size)


def iou(a, b) -> float:
    """|A n B| / |A u B| over scalar element sets."""
    a, b = _as_elements(a), _as_elements(b)
    if a.size == 0 and b.size == 0:
        raise EvalError("IoU is undefined for two empty sets")
    inter = _intersection(a, b)
    return inter / (a.size + b.size - inter)


def f1(a, b) -> float:
    """2 |A n B| / (|A| + |B|)."""
    a, b = _as_elements(a), _as_elements(b)
    if a.size == 0 and b.size == 0:
        raise EvalError("F1 is undefined for two empty sets")
    return 2.0 * _intersection(a, b) / (a.size + b.size)


def precision(pred, gt) -> float:
    """|pred n gt| / |pred|."""
    pred, gt = _as_elements(pred), _as_elements(gt)
    if pred.size == 0:
        raise EvalError("precision is undefined for an empty prediction")
    return _intersection(pred, gt) / pred.size


def symmetric_chamfer(s, s_prime) -> float:
    """Sum over both directions of squared nearest-neighbor distances.

    Unnormalized sums: equals |S| * D(S, S') + |S'| * D(S', S) with D the
    mean-normalized directed distance, which this implementation uses
    literally so the identity is exact in floating point.
    """
    s = np.asarray(s, dtype=np.float64).reshape(-1, 3)
    sp = np.asarray(s_prime, dtype=np.float64).reshape(-1, 3)
    if s.shape[0] == 0 or sp.shape[0] == 0:
        raise EvalError("symmetric Chamfer requires non-empty point sets")
    d_fwd = float(np.mean(NeighborIndex(sp).nearest_sq(s)))
    d_bwd = float(np.mean(NeighborIndex(s).nearest_sq(sp)))
    return s.shape[0] * d_fwd + sp.shape[0] * d_bwd


def _pack_pixels(image_index: int, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    # image < 2^16, y and x < 2^20 each: fits an int64 without collisions
    return ((np.int64(image_index) << 40)
            | (ys.astype(np.int64) << 20) | xs.astype(np.int64))


def _subsample(points: np.ndarray, cap: int | None, rng_key) -> np.ndarray:
    if cap is None or points.shape[0] <= cap:
        return points
    idx = rng_for(*rng_key).choice(points.shape[0], size=cap, replace=False)
    idx.sort()
    return points[idx]


@dataclass(frozen=True)
class ObjectReport:
    """Scores for one ground-truth object."""

    gt_id: int
    n_pixels: int
    class_by_iou: int | None
    iou: float
    f1: float
    precision: float
    class_by_chamfer: int | None
    d_chamfer: float | None
    iou_sel: float | None

    def to_json_dict(self) -> dict:
        return {
            "gt_id": self.gt_id,
            "n_pixels": self.n_pixels,
            "class_by_iou": self.class_by_iou,
            "iou": self.iou,
            "f1": self.f1,
            "precision": self.precision,
            "class_by_chamfer": self.class_by_chamfer,
            "d_chamfer": self.d_chamfer,
            "iou_sel": self.iou_sel,
        }


@dataclass(frozen=True)
class MetricsReport:
    """Full evaluation of one segmentation result against ground truth."""

    per_object: tuple[ObjectReport, ...]
    means: dict
    pixel_utility: float
    diagnostics: tuple[str, ...] = ()

    def to_json_dict(self) -> dict:
        return {
            "per_object": [r.to_json_dict() for r in self.per_object],
            "means": dict(self.means),
            "pixel_utility": {"mean": self.pixel_utility,
                              "median": self.pixel_utility},
            "diagnostics": list(self.diagnostics),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2, sort_keys=True) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())


def pixel_utility(
    result: SegmentationResult, gt_maps: dict
) -> tuple[float, list[str]]:
    """Foreground pixels predicted / foreground pixels in ground truth.

    Raw ratio, deliberately unclamped: a value above 1 means the
    prediction labeled ground-truth background as foreground, and is
    flagged in the returned diagnostics.
    """
    n_pred = sum(int(np.sum(m > 0)) for m in result.class_maps.values())
    n_gt = sum(int(np.sum(gt_maps[i].labels > 0)) for i in gt_maps)
    if n_gt == 0:
        raise EvalError("ground truth has no foreground pixels")
    value = n_pred / n_gt
    notes = []
    if value > 1.0:
        notes.append(
            f"pixel utility {value:.6g} exceeds 1: prediction labels "
            f"ground-truth background as foreground")
    return value, notes


def match_objects(
    result: SegmentationResult,
    scene: Scene,
    *,
    with_chamfer: bool = True,
    chamfer_max_points: int | None = None,
    seed: int = 0,
    expected_ids=None,
) -> tuple[list[ObjectReport], list[str]]:
    """Match every visible ground-truth object to predicted classes.

    expected_ids optionally names the full object universe; expected
    objects visible in no view are skipped with a diagnostic rather than
    scored as zero.
    """
    gt_maps = scene.ground_truth
    if not gt_maps:
        raise EvalError("scene carries no ground-truth label maps")

    class_ids = sorted(c for c in result.class_members if c != 0)
    class_pixels: dict[int, np.ndarray] = {c: [] for c in class_ids}
    for idx, cmap in sorted(result.class_maps.items()):
        present = np.unique(cmap)
        for cid in present[present != 0].tolist():
            ys, xs = np.nonzero(cmap == cid)
            class_pixels[cid].append(_pack_pixels(idx, ys, xs))
    class_pixels = {
        c: (np.concatenate(v) if v else np.empty(0, dtype=np.int64))
        for c, v in class_pixels.items()
    }

    gt_ids = sorted({int(g) for lm in gt_maps.values()
                     for g in lm.mask_ids().tolist()})
    if expected_ids is not None:
        gt_ids = sorted(set(gt_ids) | {int(g) for g in expected_ids})

    class_clouds: dict[int, np.ndarray] = {}
    class_trees: dict[int, NeighborIndex] = {}
    class_boxes: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    if with_chamfer and class_ids:
        for cid in class_ids:
            pts = result.cloud_points[result.cloud_classes == cid]
            pts = _subsample(pts.astype(np.float64), chamfer_max_points,
                             (seed, "evalcap", cid))
            class_clouds[cid] = pts
            class_trees[cid] = NeighborIndex(pts)
            class_boxes[cid] = (pts.min(axis=0), pts.max(axis=0))

    reports: list[ObjectReport] = []
    diagnostics: list[str] = []

    for gid in gt_ids:
        pixel_parts, point_parts = [], []
        for idx in scene.indices:
            gt = gt_maps.get(idx)
            if gt is None:
                continue
            ys, xs = np.nonzero(gt.labels == gid)
            if ys.size == 0:
                continue
            pixel_parts.append(_pack_pixels(idx, ys, xs))
            point_parts.append(scene.image(idx).point_map.points[ys, xs])
        if not pixel_parts:
            diagnostics.append(
                f"ground-truth object {gid} is never visible; skipped")
            continue
        gt_pixels = np.concatenate(pixel_parts)
        n_pixels = int(gt_pixels.size)

        if not class_ids:
            diagnostics.append(
                f"no foreground classes predicted; object {gid} scored 0")
            reports.append(ObjectReport(
                gid, n_pixels, None, 0.0, 0.0, 0.0, None, None,
                0.0 if with_chamfer else None))
            continue

        best_iou, best_cid = -1.0, None
        for cid in class_ids:
            v = iou(class_pixels[cid], gt_pixels)
            if v > best_iou:
                best_iou, best_cid = v, cid
        obj_f1 = f1(class_pixels[best_cid], gt_pixels)
        obj_prec = precision(class_pixels[best_cid], gt_pixels)

        cham_cid = cham_val = iou_sel = None
        if with_chamfer:
            gt_points = np.concatenate(point_parts).astype(np.float64)
            gt_points = _subsample(gt_points, chamfer_max_points,
                                   (seed, "evalcap", "gt", gid))
            gt_tree = NeighborIndex(gt_points)
            lo, hi = gt_points.min(axis=0), gt_points.max(axis=0)
            n_gt = gt_points.shape[0]
            # visit candidates in bounding-box gap order so the running
            # best prunes most exact evaluations
            gaps = []
            for cid in class_ids:
                clo, chi = class_boxes[cid]
                gap = np.maximum(np.maximum(clo - hi, lo - chi), 0.0)
                gaps.append((float(gap @ gap), cid))
            gaps.sort()
            best = np.inf
            for gap_sq, cid in gaps:
                pts = class_clouds[cid]
                # cloud sizes vary, so the bound is not monotone in gap
                lower = (n_gt + pts.shape[0]) * gap_sq
                if lower >= best:
                    continue
                val = (n_gt * float(np.mean(class_trees[cid].nearest_sq(gt_points)))
                       + pts.shape[0] * float(np.mean(gt_tree.nearest_sq(pts))))
                if val < best or (val == best and cid < cham_cid):
                    best, cham_cid = val, cid
            cham_val = float(best)
            iou_sel = iou(class_pixels[cham_cid], gt_pixels)

        reports.append(ObjectReport(
            gid, n_pixels, best_cid, best_iou, obj_f1, obj_prec,
            cham_cid, cham_val, iou_sel))

    return reports, diagnostics


def evaluate(
    result: SegmentationResult,
    scene: Scene,
    *,
    with_chamfer: bool = True,
    chamfer_max_points: int | None = None,
    seed: int = 0,
    expected_ids=None,
) -> MetricsReport:
    """Score a segmentation result against the scene's ground truth."""
    if not scene.ground_truth:
        raise EvalError("scene carries no ground-truth label maps")
    reports, diagnostics = match_objects(
        result, scene, with_chamfer=with_chamfer,
        chamfer_max_points=chamfer_max_points, seed=seed,
        expected_ids=expected_ids)
    utility, notes = pixel_utility(result, scene.ground_truth)
    diagnostics.extend(notes)

    def mean_of(values):
        values = [v for v in values if v is not None]
        return float(np.mean(values)) if values else None

    means = {
        "iou": mean_of(r.iou for r in reports),
        "f1": mean_of(r.f1 for r in reports),
        "d_chamfer": mean_of(r.d_chamfer for r in reports),
        "iou_sel": mean_of(r.iou_sel for r in reports),
        "precision": mean_of(r.precision for r in reports),
    }
    return MetricsReport(tuple(reports), means, utility, tuple(diagnostics))
