"""Scene data model: label maps, poses, point maps, matches, and the Scene bundle.

Conventions used throughout the engine:
  - pixels are (x, y) with x the column and y the row; arrays index [y, x]
  - label 0 means "no mask"; mask ids are per-image and need not be contiguous
  - camera poses are camera-to-world; camera axes are x right, y down, z forward
  - point maps store per-pixel 3D points in world meters as float32, with a
    confidence in [0, 1]; confidence 0 marks an invalid pixel
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, NamedTuple

import numpy as np

from ..errors import SceneError


class MaskRef(NamedTuple):
    """Reference to one mask: (image index, local mask id)."""

    image_index: int
    local_id: int


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class LabelMap:
    """Per-pixel mask labels for one image, uint16, 0 = unassigned."""

    labels: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.labels)
        if arr.ndim != 2:
            raise SceneError(f"label map must be 2D, got shape {arr.shape}")
        if arr.dtype != np.uint16:
            if not np.issubdtype(arr.dtype, np.integer):
                raise SceneError(f"label map must be integer, got {arr.dtype}")
            if arr.size and (arr.min() < 0 or arr.max() > 0xFFFF):
                raise SceneError("label ids out of uint16 range")
            arr = arr.astype(np.uint16)
        object.__setattr__(self, "labels", _readonly(np.ascontiguousarray(arr)))

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    def mask_ids(self) -> np.ndarray:
        """Sorted array of distinct nonzero ids present."""
        ids = np.unique(self.labels)
        return ids[ids != 0]

    def areas(self) -> dict[int, int]:
        """Pixel count per nonzero id."""
        ids, counts = np.unique(self.labels, return_counts=True)
        return {int(i): int(c) for i, c in zip(ids, counts) if i != 0}

    def mask_pixels(self, local_id: int) -> set[tuple[int, int]]:
        """Set of (x, y) pixels carrying the given nonzero id."""
        if local_id <= 0:
            raise SceneError(f"mask id must be positive, got {local_id}")
        ys, xs = np.nonzero(self.labels == local_id)
        return {(int(x), int(y)) for x, y in zip(xs, ys)}


@dataclass(frozen=True, eq=False)
class CameraPose:
    """Camera-to-world rigid transform."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self) -> None:
        r = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64)
        if r.shape != (3, 3):
            raise SceneError(f"rotation must be 3x3, got {r.shape}")
        if t.shape != (3,):
            raise SceneError(f"translation must have 3 entries, got {t.shape}")
        if not np.all(np.isfinite(r)) or not np.all(np.isfinite(t)):
            raise SceneError("pose contains non-finite values")
        err = np.abs(r.T @ r - np.eye(3)).max()
        if err > 1e-6:
            raise SceneError(f"rotation is not orthonormal (deviation {err:.2e})")
        if abs(np.linalg.det(r) - 1.0) > 1e-6:
            raise SceneError("rotation determinant is not +1")
        object.__setattr__(self, "rotation", _readonly(r))
        object.__setattr__(self, "translation", _readonly(t))

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "CameraPose":
        m = np.asarray(m, dtype=np.float64)
        if m.shape != (4, 4):
            raise SceneError(f"pose matrix must be 4x4, got {m.shape}")
        if np.abs(m[3] - np.array([0.0, 0.0, 0.0, 1.0])).max() > 1e-9:
            raise SceneError("pose matrix bottom row must be [0, 0, 0, 1]")
        return cls(rotation=m[:3, :3], translation=m[:3, 3])

    def to_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m


@dataclass(frozen=True, eq=False)
class PointMap:
    """Per-pixel 3D points (world meters, float32) plus confidence in [0, 1]."""

    points: np.ndarray
    confidence: np.ndarray

    def __post_init__(self) -> None:
        p = np.asarray(self.points, dtype=np.float32)
        c = np.asarray(self.confidence, dtype=np.float32)
        if p.ndim != 3 or p.shape[2] != 3:
            raise SceneError(f"point map must be (H, W, 3), got {p.shape}")
        if c.shape != p.shape[:2]:
            raise SceneError(
                f"confidence shape {c.shape} does not match points {p.shape[:2]}"
            )
        if not np.all(np.isfinite(p)):
            raise SceneError("point map contains non-finite values")
        if c.size and (c.min() < 0.0 or c.max() > 1.0):
            raise SceneError("confidence values must lie in [0, 1]")
        object.__setattr__(self, "points", _readonly(np.ascontiguousarray(p)))
        object.__setattr__(self, "confidence", _readonly(np.ascontiguousarray(c)))

    @property
    def height(self) -> int:
        return self.points.shape[0]

    @property
    def width(self) -> int:
        return self.points.shape[1]


@dataclass(frozen=True)
class ImageMeta:
    """Descriptor for one image: index, size, file paths, pose."""

    index: int
    width: int
    height: int
    pose: CameraPose
    labelmap_path: Path | None = None
    pointmap_path: Path | None = None

    def __post_init__(self) -> None:
        if self.index < 0 or self.index > 0xFFFF:
            raise SceneError(f"image index must be in [0, 65535], got {self.index}")
        if self.width <= 0 or self.height <= 0:
            raise SceneError("image dimensions must be positive")


class PixelMatch(NamedTuple):
    """One 2D correspondence between a pixel pair, with confidence in [0, 1]."""

    xa: int
    ya: int
    xb: int
    yb: int
    confidence: float


_MATCH_FIELDS = (("xa", np.uint16), ("ya", np.uint16), ("xb", np.uint16), ("yb", np.uint16))


@dataclass(frozen=True, eq=False)
class CorrespondenceSet:
    """Pixel matches between an ordered image pair (image_a < image_b).

    Stored as parallel arrays for speed; `iter_matches` yields PixelMatch
    tuples for small-scale use.
    """

    image_a: int
    image_b: int
    xa: np.ndarray
    ya: np.ndarray
    xb: np.ndarray
    yb: np.ndarray
    confidence: np.ndarray

    def __post_init__(self) -> None:
        if self.image_a >= self.image_b:
            raise SceneError(
                f"correspondence set requires image_a < image_b, "
                f"got ({self.image_a}, {self.image_b})"
            )
        n = None
        for name, dtype in _MATCH_FIELDS:
            arr = np.ascontiguousarray(np.asarray(getattr(self, name), dtype=dtype))
            if arr.ndim != 1:
                raise SceneError(f"match field {name} must be 1D")
            if n is None:
                n = arr.shape[0]
            elif arr.shape[0] != n:
                raise SceneError("match fields have mismatched lengths")
            object.__setattr__(self, name, _readonly(arr))
        conf = np.ascontiguousarray(np.asarray(self.confidence, dtype=np.float32))
        if conf.shape != (n,):
            raise SceneError("match fields have mismatched lengths")
        if conf.size and (np.nanmin(conf) < 0.0 or np.nanmax(conf) > 1.0):
            raise SceneError("match confidence must lie in [0, 1]")
        if not np.all(np.isfinite(conf)):
            raise SceneError("match confidence contains non-finite values")
        object.__setattr__(self, "confidence", _readonly(conf))

    def __len__(self) -> int:
        return int(self.xa.shape[0])

    @classmethod
    def from_matches(
        cls, image_a: int, image_b: int, matches: list[PixelMatch]
    ) -> "CorrespondenceSet":
        cols = list(zip(*matches)) if matches else [[], [], [], [], []]
        return cls(image_a, image_b, *[np.asarray(c) for c in cols[:4]],
                   confidence=np.asarray(cols[4], dtype=np.float32))

    def iter_matches(self) -> Iterator[PixelMatch]:
        for i in range(len(self)):
            yield PixelMatch(
                int(self.xa[i]), int(self.ya[i]),
                int(self.xb[i]), int(self.yb[i]), float(self.confidence[i]),
            )

    def take(self, idx: np.ndarray) -> "CorrespondenceSet":
        return CorrespondenceSet(
            self.image_a, self.image_b,
            self.xa[idx], self.ya[idx], self.xb[idx], self.yb[idx],
            self.confidence[idx],
        )


@dataclass(frozen=True, eq=False)
class SceneImage:
    """One image with its loaded label map and point map."""

    meta: ImageMeta
    label_map: LabelMap
    point_map: PointMap

    def __post_init__(self) -> None:
        m = self.meta
        if (self.label_map.height, self.label_map.width) != (m.height, m.width):
            raise SceneError(
                f"image {m.index}: label map is "
                f"{self.label_map.width}x{self.label_map.height}, "
                f"meta says {m.width}x{m.height}"
            )
        if (self.point_map.height, self.point_map.width) != (m.height, m.width):
            raise SceneError(
                f"image {m.index}: point map is "
                f"{self.point_map.width}x{self.point_map.height}, "
                f"meta says {m.width}x{m.height}"
            )


@dataclass(frozen=True, eq=False)
class Scene:
    """A fully resolved multi-view scene."""

    images: tuple[SceneImage, ...]
    correspondences: tuple[CorrespondenceSet, ...] = ()
    ground_truth: dict[int, LabelMap] | None = None
    by_index: dict[int, SceneImage] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if not self.images:
            raise SceneError("scene has no images")
        object.__setattr__(self, "images", tuple(
            sorted(self.images, key=lambda im: im.meta.index)))
        by_index: dict[int, SceneImage] = {}
        for im in self.images:
            if im.meta.index in by_index:
                raise SceneError(f"duplicate image index {im.meta.index}")
            by_index[im.meta.index] = im
        object.__setattr__(self, "by_index", by_index)
        object.__setattr__(self, "correspondences", tuple(self.correspondences))
        for cs in self.correspondences:
            for idx in (cs.image_a, cs.image_b):
                if idx not in by_index:
                    raise SceneError(
                        f"correspondence set references unknown image {idx}")
            ia, ib = by_index[cs.image_a], by_index[cs.image_b]
            if len(cs) and (
                int(cs.xa.max(initial=0)) >= ia.meta.width
                or int(cs.ya.max(initial=0)) >= ia.meta.height
                or int(cs.xb.max(initial=0)) >= ib.meta.width
                or int(cs.yb.max(initial=0)) >= ib.meta.height
            ):
                raise SceneError(
                    f"correspondence set ({cs.image_a}, {cs.image_b}) has "
                    f"out-of-bounds pixels"
                )
        if self.ground_truth is not None:
            for idx, lm in self.ground_truth.items():
                if idx not in by_index:
                    raise SceneError(f"ground truth references unknown image {idx}")
                im = by_index[idx]
                if (lm.height, lm.width) != (im.meta.height, im.meta.width):
                    raise SceneError(f"ground truth for image {idx} has wrong size")

    @property
    def indices(self) -> list[int]:
        return [im.meta.index for im in self.images]

    def image(self, index: int) -> SceneImage:
        try:
            return self.by_index[index]
        except KeyError:
            raise SceneError(f"no image with index {index}") from None

    def with_label_maps(self, label_maps: dict[int, LabelMap]) -> "Scene":
        """Copy of the scene with some images' label maps replaced."""
        images = tuple(
            SceneImage(im.meta, label_maps.get(im.meta.index, im.label_map),
                       im.point_map)
            for im in self.images
        )
        return Scene(images, self.correspondences, self.ground_truth)

    def with_correspondences(
        self, correspondences: tuple[CorrespondenceSet, ...]
    ) -> "Scene":
        return Scene(self.images, correspondences, self.ground_truth)


def pixel_to_point(
    scene: Scene, image_index: int, pixel: tuple[int, int]
) -> tuple[np.ndarray, float]:
    """Stored 3D point and confidence for a pixel; errors on out-of-bounds."""
    im = scene.image(image_index)
    x, y = int(pixel[0]), int(pixel[1])
    if not (0 <= x < im.meta.width and 0 <= y < im.meta.height):
        raise SceneError(
            f"pixel ({x}, {y}) out of bounds for image {image_index} "
            f"({im.meta.width}x{im.meta.height})"
        )
    pm = im.point_map
    return pm.points[y, x].copy(), float(pm.confidence[y, x])
