"""Scene manifest: a JSON file tying together label maps, point maps, poses,
correspondence files, and optional ground truth.

Schema (paths are relative to the manifest's directory):

    {
      "images": [
        {"index": 0, "width": 640, "height": 480,
         "labelmap": "labels_000.pgm", "pointmap": "points_000.pmap",
         "pose": [16 row-major floats, camera-to-world]},
        ...
      ],
      "correspondences": ["corr_000_001.corr", ...],
      "ground_truth": ["gt_000.pgm", ...]          // optional, one per image
    }
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..errors import SceneError
from . import formats
from .types import CameraPose, ImageMeta, LabelMap, Scene, SceneImage

MANIFEST_NAME = "manifest.json"


def _require(entry: dict, key: str, where: str):
    if key not in entry:
        raise SceneError(f"manifest {where} is missing key '{key}'")
    return entry[key]


def load_scene(manifest_path: str | Path) -> Scene:
    """Load and cross-validate a scene from its manifest."""
    manifest_path = Path(manifest_path)
    if not manifest_path.is_file():
        raise SceneError(f"manifest not found: {manifest_path}")
    try:
        doc = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as e:
        raise SceneError(f"{manifest_path}: invalid JSON ({e})") from e
    if not isinstance(doc, dict):
        raise SceneError(f"{manifest_path}: manifest must be a JSON object")
    root = manifest_path.parent

    entries = doc.get("images")
    if not isinstance(entries, list) or not entries:
        raise SceneError(f"{manifest_path}: manifest lists no images")

    images = []
    for i, entry in enumerate(entries):
        where = f"images[{i}]"
        if not isinstance(entry, dict):
            raise SceneError(f"manifest {where} must be an object")
        index = int(_require(entry, "index", where))
        pose_vals = _require(entry, "pose", where)
        if not isinstance(pose_vals, list) or len(pose_vals) != 16:
            raise SceneError(f"manifest {where}: pose must be 16 floats")
        pose = CameraPose.from_matrix(
            np.array(pose_vals, dtype=np.float64).reshape(4, 4))
        labelmap_path = root / str(_require(entry, "labelmap", where))
        pointmap_path = root / str(_require(entry, "pointmap", where))
        for p in (labelmap_path, pointmap_path):
            if not p.is_file():
                raise SceneError(f"image {index}: file not found: {p}")
        meta = ImageMeta(
            index=index,
            width=int(_require(entry, "width", where)),
            height=int(_require(entry, "height", where)),
            pose=pose,
            labelmap_path=labelmap_path,
            pointmap_path=pointmap_path,
        )
        label_map = formats.read_labelmap(labelmap_path)
        point_map = formats.read_pointmap(pointmap_path)
        images.append(SceneImage(meta, label_map, point_map))

    correspondences = []
    for rel in doc.get("correspondences", []):
        p = root / str(rel)
        if not p.is_file():
            raise SceneError(f"correspondence file not found: {p}")
        cs = formats.read_correspondences(p)
        if cs is not None:
            correspondences.append(cs)

    ground_truth = None
    gt_entries = doc.get("ground_truth")
    if gt_entries is not None:
        if not isinstance(gt_entries, list) or len(gt_entries) != len(images):
            raise SceneError(
                f"{manifest_path}: ground_truth must list one map per image")
        ground_truth = {}
        for im, rel in zip(images, gt_entries):
            p = root / str(rel)
            if not p.is_file():
                raise SceneError(f"ground truth file not found: {p}")
            ground_truth[im.meta.index] = formats.read_labelmap(p)

    return Scene(tuple(images), tuple(correspondences), ground_truth)


def save_scene(scene: Scene, out_dir: str | Path) -> Path:
    """Write a scene directory (maps, correspondences, optional ground truth,
    manifest); returns the manifest path. Serialization is canonical, so
    saving a loaded scene reproduces the directory byte for byte."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    image_entries = []
    gt_paths: list[str] = []
    for im in scene.images:
        idx = im.meta.index
        label_name = f"labels_{idx:03d}.pgm"
        point_name = f"points_{idx:03d}.pmap"
        formats.write_labelmap(im.label_map, out_dir / label_name)
        formats.write_pointmap(im.point_map, out_dir / point_name)
        image_entries.append({
            "index": idx,
            "width": im.meta.width,
            "height": im.meta.height,
            "labelmap": label_name,
            "pointmap": point_name,
            "pose": [float(v) for v in im.meta.pose.to_matrix().reshape(16)],
        })
        if scene.ground_truth is not None:
            gt_name = f"gt_{idx:03d}.pgm"
            formats.write_labelmap(scene.ground_truth[idx], out_dir / gt_name)
            gt_paths.append(gt_name)

    corr_names = []
    seen: dict[tuple[int, int], int] = {}
    for cs in scene.correspondences:
        pair = (cs.image_a, cs.image_b)
        nth = seen.get(pair, 0)
        seen[pair] = nth + 1
        suffix = "" if nth == 0 else f"_{nth}"
        name = f"corr_{cs.image_a:03d}_{cs.image_b:03d}{suffix}.corr"
        formats.write_correspondences(cs, out_dir / name)
        corr_names.append(name)

    doc: dict = {"images": image_entries, "correspondences": corr_names}
    if scene.ground_truth is not None:
        doc["ground_truth"] = gt_paths
    manifest_path = out_dir / MANIFEST_NAME
    manifest_path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return manifest_path
