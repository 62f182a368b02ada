"""End-to-end segmentation: background split, 2D stage, 3D stage, assembly.

run() produces a SegmentationResult: a registry of global classes (class 0
is background), per-image global label maps, and a merged labeled point
cloud. Everything is deterministic in (scene, config, seed) and
independent of thread count.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import PipelineConfig
from .contraction import contract
from .errors import EngineError, FormatError, InternalError
from .graph import unpack_vertex
from .lift3d import refine
from .match2d import build_2d_graph
from .scene.formats import read_cloud_ply, read_labelmap, write_cloud_ply, write_labelmap
from .scene.types import LabelMap, MaskRef, Scene
from .seeding import derive_seed

CLASSES_NAME = "classes.json"
CLOUD_NAME = "cloud.ply"
DEBUG_NAME = "partition_debug.json"
_CLASS_MAP_RE = re.compile(r"mhat_(\d+)\.pgm$")


def extract_background(
    scene: Scene, config: PipelineConfig
) -> dict[int, np.ndarray]:
    """Boolean background mask per image.

    A pixel is background iff its stored 3D point lies farther than
    reach_radius from the workspace origin, or it is marked in a
    caller-supplied background mask, or its input label is 0. The origin
    defaults to the first camera's position.
    """
    if config.workspace_origin is not None:
        origin = np.asarray(config.workspace_origin, dtype=np.float64)
    else:
        origin = scene.images[0].meta.pose.translation
    marked: dict[int, np.ndarray] = {}
    if config.background_mask_paths:
        for idx, path in config.background_mask_paths.items():
            if idx not in scene.by_index:
                raise EngineError(
                    f"background mask supplied for unknown image {idx}")
            lm = read_labelmap(path)
            meta = scene.image(idx).meta
            if (lm.height, lm.width) != (meta.height, meta.width):
                raise EngineError(
                    f"background mask for image {idx} is "
                    f"{lm.width}x{lm.height}, image is "
                    f"{meta.width}x{meta.height}")
            marked[idx] = lm.labels > 0
    out: dict[int, np.ndarray] = {}
    for im in scene.images:
        pts = im.point_map.points.astype(np.float64)
        far = np.linalg.norm(pts - origin, axis=-1) > config.reach_radius
        bg = far | (im.label_map.labels == 0)
        if im.meta.index in marked:
            bg |= marked[im.meta.index]
        out[im.meta.index] = bg
    return out


@dataclass(frozen=True)
class ObjectCloud:
    """Points of one extracted object (empty when the mask was background)."""

    class_id: int
    is_background: bool
    points: np.ndarray
    sources: np.ndarray
    confidence: np.ndarray


@dataclass(frozen=True)
class SegmentationResult:
    """Output of run(): class registry, global label maps, merged cloud.

    class_members maps global class id to the MaskRefs it absorbed; id 0 is
    background and holds the masks background filtering consumed entirely.
    class_maps hold each image's per-pixel global class ids. The cloud is
    ordered by (class, source image, row-major pixel). Confidence is kept
    in memory only; the on-disk cloud format does not carry it, so loaded
    results have all-zero confidence.
    """

    class_members: dict[int, tuple[MaskRef, ...]]
    class_maps: dict[int, np.ndarray]
    cloud_points: np.ndarray
    cloud_classes: np.ndarray
    cloud_sources: np.ndarray
    cloud_confidence: np.ndarray
    config_echo: dict
    seed: int
    stage_partitions: dict | None = None
    _class_of: dict[MaskRef, int] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        lookup: dict[MaskRef, int] = {}
        for cid, refs in self.class_members.items():
            for ref in refs:
                lookup[ref] = cid
        object.__setattr__(self, "_class_of", lookup)

    @property
    def n_foreground_classes(self) -> int:
        return len(self.class_members) - 1

    def class_of(self, image_index: int, local_id: int) -> int:
        ref = MaskRef(int(image_index), int(local_id))
        try:
            return self._class_of[ref]
        except KeyError:
            raise EngineError(
                f"no mask with local id {ref.local_id} in image "
                f"{ref.image_index}") from None

    def save(self, out_dir: str | Path) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        doc = {
            "classes": {
                str(cid): [[r.image_index, r.local_id] for r in refs]
                for cid, refs in sorted(self.class_members.items())
            },
            "config": self.config_echo,
            "seed": self.seed,
        }
        (out / CLASSES_NAME).write_text(
            json.dumps(doc, indent=2, sort_keys=True) + "\n")
        for idx, arr in sorted(self.class_maps.items()):
            write_labelmap(LabelMap(arr), out / f"mhat_{idx:03d}.pgm")
        write_cloud_ply(out / CLOUD_NAME, self.cloud_points,
                        self.cloud_classes, self.cloud_sources)
        if self.stage_partitions is not None:
            (out / DEBUG_NAME).write_text(
                json.dumps(self.stage_partitions, indent=2, sort_keys=True)
                + "\n")
        return out / CLASSES_NAME

    @classmethod
    def load(cls, out_dir: str | Path) -> "SegmentationResult":
        out = Path(out_dir)
        classes_path = out / CLASSES_NAME
        if not classes_path.is_file():
            raise EngineError(f"no result at {classes_path}")
        try:
            doc = json.loads(classes_path.read_text())
        except json.JSONDecodeError as e:
            raise FormatError(f"{classes_path}: invalid JSON: {e}") from e
        try:
            members = {
                int(cid): tuple(MaskRef(int(a), int(b)) for a, b in refs)
                for cid, refs in doc["classes"].items()
            }
            echo = doc["config"]
            seed = int(doc["seed"])
        except (KeyError, TypeError, ValueError) as e:
            raise FormatError(f"{classes_path}: malformed registry: {e}") from e
        class_maps = {}
        for path in sorted(out.glob("mhat_*.pgm")):
            m = _CLASS_MAP_RE.search(path.name)
            if m:
                class_maps[int(m.group(1))] = read_labelmap(path).labels
        points, cids, sources = read_cloud_ply(out / CLOUD_NAME)
        debug_path = out / DEBUG_NAME
        stages = json.loads(debug_path.read_text()) if debug_path.is_file() else None
        return cls(members, class_maps, points, cids, sources,
                   np.zeros(points.shape[0], dtype=np.float32), echo, seed,
                   stages)


def _background_only(
    scene: Scene, config: PipelineConfig, consumed: list[MaskRef],
    stages: dict | None,
) -> SegmentationResult:
    maps = {
        im.meta.index: np.zeros((im.meta.height, im.meta.width), dtype=np.uint16)
        for im in scene.images
    }
    return SegmentationResult(
        {0: tuple(sorted(consumed))}, maps,
        np.empty((0, 3), dtype=np.float32), np.empty(0, dtype=np.uint16),
        np.empty(0, dtype=np.uint16), np.empty(0, dtype=np.float32),
        config.echo_dict(), config.seed, stages)


def run(scene: Scene, config: PipelineConfig | None = None) -> SegmentationResult:
    """Segment a scene into globally consistent object classes."""
    config = config or PipelineConfig()
    background = extract_background(scene, config)

    fg_maps: dict[int, LabelMap] = {}
    consumed: list[MaskRef] = []
    for im in scene.images:
        labels = im.label_map.labels.copy()
        labels[background[im.meta.index]] = 0
        fg = LabelMap(labels)
        fg_maps[im.meta.index] = fg
        kept = set(fg.mask_ids().tolist())
        consumed.extend(
            MaskRef(im.meta.index, int(lid))
            for lid in im.label_map.mask_ids().tolist() if lid not in kept)

    stages: dict | None = {} if config.debug_partitions else None
    if all(lm.mask_ids().size == 0 for lm in fg_maps.values()):
        return _background_only(scene, config, consumed, stages)

    graph = build_2d_graph(scene, config, label_maps=fg_maps)
    part = contract(graph, derive_seed(config.seed, "contract2d"))
    if stages is not None:
        stages["after_2d"] = part.to_json_dict()
    if config.tau3d > 0.0:
        part = refine(part, scene, config, label_maps=fg_maps)
        if stages is not None:
            stages["after_3d"] = part.to_json_dict()

    if len(part.members) > 0xFFFF:
        raise InternalError("class id space exhausted (more than 65535 classes)")

    class_members: dict[int, tuple[MaskRef, ...]] = {0: tuple(sorted(consumed))}
    luts = {
        im.meta.index: np.zeros(
            int(im.label_map.labels.max(initial=0)) + 1, dtype=np.uint16)
        for im in scene.images
    }
    for cid, svid in enumerate(sorted(part.members), start=1):
        refs = tuple(unpack_vertex(v) for v in part.members[svid])
        class_members[cid] = refs
        for ref in refs:
            luts[ref.image_index][ref.local_id] = cid

    class_maps = {
        idx: luts[idx][fg_maps[idx].labels] for idx in scene.indices
    }

    pts_parts, cls_parts, src_parts, conf_parts = [], [], [], []
    for cid in range(1, len(class_members)):
        for ref in class_members[cid]:
            im = scene.image(ref.image_index)
            ys, xs = np.nonzero(fg_maps[ref.image_index].labels == ref.local_id)
            pts_parts.append(im.point_map.points[ys, xs])
            conf_parts.append(im.point_map.confidence[ys, xs])
            cls_parts.append(np.full(ys.size, cid, dtype=np.uint16))
            src_parts.append(np.full(ys.size, ref.image_index, dtype=np.uint16))
    if pts_parts:
        cloud_points = np.concatenate(pts_parts)
        cloud_classes = np.concatenate(cls_parts)
        cloud_sources = np.concatenate(src_parts)
        cloud_confidence = np.concatenate(conf_parts)
    else:
        cloud_points = np.empty((0, 3), dtype=np.float32)
        cloud_classes = np.empty(0, dtype=np.uint16)
        cloud_sources = np.empty(0, dtype=np.uint16)
        cloud_confidence = np.empty(0, dtype=np.float32)

    return SegmentationResult(
        class_members, class_maps, cloud_points, cloud_classes,
        cloud_sources, cloud_confidence, config.echo_dict(), config.seed,
        stages)


def extract_object(
    result: SegmentationResult, image_index: int, local_id: int
) -> ObjectCloud:
    """All merged-cloud points of the class containing the given mask.

    Any two masks of the same class yield the identical cloud. A mask that
    background filtering consumed entirely yields an empty background
    indicator instead.
    """
    cid = result.class_of(image_index, local_id)
    if cid == 0:
        return ObjectCloud(
            0, True, np.empty((0, 3), dtype=np.float32),
            np.empty(0, dtype=np.uint16), np.empty(0, dtype=np.float32))
    sel = result.cloud_classes == cid
    return ObjectCloud(
        cid, False, result.cloud_points[sel], result.cloud_sources[sel],
        result.cloud_confidence[sel])
