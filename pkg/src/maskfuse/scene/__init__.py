"""Scene data model and interchange formats."""

from .formats import (
    PALETTE,
    class_colors,
    read_cloud_ply,
    read_correspondences,
    read_labelmap,
    read_pointmap,
    write_cloud_ply,
    write_correspondences,
    write_labelmap,
    write_pointmap,
)
from .manifest import MANIFEST_NAME, load_scene, save_scene
from .types import (
    CameraPose,
    CorrespondenceSet,
    ImageMeta,
    LabelMap,
    MaskRef,
    PixelMatch,
    PointMap,
    Scene,
    SceneImage,
    pixel_to_point,
)

__all__ = [
    "CameraPose", "CorrespondenceSet", "ImageMeta", "LabelMap", "MaskRef",
    "PixelMatch", "PointMap", "Scene", "SceneImage", "pixel_to_point",
    "load_scene", "save_scene", "MANIFEST_NAME", "PALETTE", "class_colors",
    "read_labelmap", "write_labelmap", "read_pointmap", "write_pointmap",
    "read_correspondences", "write_correspondences",
    "read_cloud_ply", "write_cloud_ply",
]
