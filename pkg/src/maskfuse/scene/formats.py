"""Binary interchange formats.

All formats are fixed-layout and round-trip bit-exactly:
  - label maps: 16-bit binary PGM (P5, maxval 65535, big-endian samples)
  - point maps: "PMAP1" header, little-endian u32 width/height, then
    H*W*3 float32 points (row-major, xyz per pixel), then H*W float32
    confidences
  - correspondences: "CORR1" header, little-endian u32 image_a, image_b,
    count, then packed records (u16 xa, ya, xb, yb, float32 confidence)
  - labeled clouds: binary little-endian PLY with per-vertex position,
    palette color, class id, and source image
"""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np

from ..errors import FormatError
from .types import CorrespondenceSet, LabelMap, PointMap

logger = logging.getLogger(__name__)

PGM_MAXVAL = 65535
PMAP_MAGIC = b"PMAP1"
CORR_MAGIC = b"CORR1"

_CORR_DTYPE = np.dtype([
    ("xa", "<u2"), ("ya", "<u2"), ("xb", "<u2"), ("yb", "<u2"), ("conf", "<f4"),
])

_PLY_DTYPE = np.dtype([
    ("x", "<f4"), ("y", "<f4"), ("z", "<f4"),
    ("red", "u1"), ("green", "u1"), ("blue", "u1"),
    ("class_id", "<u2"), ("source_image", "<u2"),
])

# Fixed 32-entry color palette; class colors are palette[class_id % 32].
PALETTE = np.array([
    (166, 166, 166), (230, 25, 75), (60, 180, 75), (255, 225, 25),
    (0, 130, 200), (245, 130, 48), (145, 30, 180), (70, 240, 240),
    (240, 50, 230), (210, 245, 60), (250, 190, 212), (0, 128, 128),
    (220, 190, 255), (170, 110, 40), (255, 250, 200), (128, 0, 0),
    (170, 255, 195), (128, 128, 0), (255, 215, 180), (0, 0, 128),
    (255, 105, 97), (80, 200, 120), (255, 179, 71), (100, 149, 237),
    (199, 21, 133), (46, 139, 87), (218, 165, 32), (72, 61, 139),
    (188, 143, 143), (0, 139, 139), (205, 92, 92), (123, 104, 238),
], dtype=np.uint8)


def write_labelmap(label_map: LabelMap, path: str | Path) -> None:
    header = f"P5\n{label_map.width} {label_map.height}\n{PGM_MAXVAL}\n"
    payload = label_map.labels.astype(">u2").tobytes()
    Path(path).write_bytes(header.encode("ascii") + payload)


def _pnm_tokens(data: bytes, count: int) -> tuple[list[int], int]:
    """Parse `count` PNM header integers after the magic; returns (values, offset).

    Comments (# to end of line) and runs of whitespace are allowed between
    tokens. The offset points one byte past the single whitespace that
    terminates the last token.
    """
    values: list[int] = []
    i = 2  # past "P5"
    while len(values) < count:
        while i < len(data) and data[i : i + 1].isspace():
            i += 1
        if i < len(data) and data[i : i + 1] == b"#":
            while i < len(data) and data[i : i + 1] != b"\n":
                i += 1
            continue
        j = i
        while j < len(data) and data[j : j + 1].isdigit():
            j += 1
        if j == i:
            raise FormatError("malformed PGM header")
        values.append(int(data[i:j]))
        i = j
    if i >= len(data) or not data[i : i + 1].isspace():
        raise FormatError("malformed PGM header")
    return values, i + 1


def read_labelmap(path: str | Path) -> LabelMap:
    data = Path(path).read_bytes()
    if data[:2] != b"P5":
        raise FormatError(f"{path}: not a binary PGM (bad magic)")
    (width, height, maxval), offset = _pnm_tokens(data, 3)
    if maxval != PGM_MAXVAL:
        hint = " (8-bit label maps are not supported)" if maxval == 255 else ""
        raise FormatError(f"{path}: PGM maxval must be {PGM_MAXVAL}{hint}")
    if width <= 0 or height <= 0:
        raise FormatError(f"{path}: bad PGM dimensions {width}x{height}")
    expected = width * height * 2
    payload = data[offset : offset + expected]
    if len(payload) != expected:
        raise FormatError(f"{path}: truncated PGM payload")
    labels = np.frombuffer(payload, dtype=">u2").reshape(height, width)
    return LabelMap(labels.astype(np.uint16))


def write_pointmap(point_map: PointMap, path: str | Path) -> None:
    h, w = point_map.height, point_map.width
    parts = [
        PMAP_MAGIC,
        np.array([w, h], dtype="<u4").tobytes(),
        point_map.points.astype("<f4", copy=False).tobytes(),
        point_map.confidence.astype("<f4", copy=False).tobytes(),
    ]
    Path(path).write_bytes(b"".join(parts))


def read_pointmap(path: str | Path) -> PointMap:
    data = Path(path).read_bytes()
    if data[:5] != PMAP_MAGIC:
        raise FormatError(f"{path}: bad point map magic")
    if len(data) < 13:
        raise FormatError(f"{path}: truncated point map header")
    w, h = (int(v) for v in np.frombuffer(data[5:13], dtype="<u4"))
    if w <= 0 or h <= 0:
        raise FormatError(f"{path}: bad point map dimensions {w}x{h}")
    n = w * h
    expected = 13 + n * 12 + n * 4
    if len(data) != expected:
        raise FormatError(
            f"{path}: point map payload is {len(data)} bytes, expected {expected}"
        )
    points = np.frombuffer(data[13 : 13 + n * 12], dtype="<f4").reshape(h, w, 3)
    conf = np.frombuffer(data[13 + n * 12 :], dtype="<f4").reshape(h, w)
    return PointMap(points, conf)


def write_correspondences(cs: CorrespondenceSet, path: str | Path) -> None:
    rec = np.empty(len(cs), dtype=_CORR_DTYPE)
    rec["xa"], rec["ya"] = cs.xa, cs.ya
    rec["xb"], rec["yb"] = cs.xb, cs.yb
    rec["conf"] = cs.confidence
    header = CORR_MAGIC + np.array(
        [cs.image_a, cs.image_b, len(cs)], dtype="<u4").tobytes()
    Path(path).write_bytes(header + rec.tobytes())


def read_correspondences(path: str | Path) -> CorrespondenceSet | None:
    """Read a correspondence file.

    Files are normalized so image_a < image_b (endpoints swap if stored the
    other way round). A file relating an image to itself is ignored: the
    function warns and returns None.
    """
    data = Path(path).read_bytes()
    if data[:5] != CORR_MAGIC:
        raise FormatError(f"{path}: bad correspondence magic")
    if len(data) < 17:
        raise FormatError(f"{path}: truncated correspondence header")
    a, b, count = (int(v) for v in np.frombuffer(data[5:17], dtype="<u4"))
    expected = 17 + count * _CORR_DTYPE.itemsize
    if len(data) != expected:
        raise FormatError(
            f"{path}: correspondence payload is {len(data)} bytes, "
            f"expected {expected}"
        )
    if a == b:
        logger.warning("%s: ignoring same-image correspondence set (image %d)",
                       path, a)
        return None
    rec = np.frombuffer(data[17:], dtype=_CORR_DTYPE)
    if a > b:
        a, b = b, a
        return CorrespondenceSet(a, b, rec["xb"], rec["yb"], rec["xa"], rec["ya"],
                                 rec["conf"])
    return CorrespondenceSet(a, b, rec["xa"], rec["ya"], rec["xb"], rec["yb"],
                             rec["conf"])


def class_colors(class_ids: np.ndarray) -> np.ndarray:
    """Palette RGB rows for an array of class ids."""
    return PALETTE[np.asarray(class_ids, dtype=np.int64) % len(PALETTE)]


def write_cloud_ply(
    path: str | Path,
    points: np.ndarray,
    class_ids: np.ndarray,
    source_images: np.ndarray,
) -> None:
    """Write a labeled cloud as binary little-endian PLY."""
    points = np.asarray(points, dtype=np.float32).reshape(-1, 3)
    class_ids = np.asarray(class_ids, dtype=np.uint16)
    source_images = np.asarray(source_images, dtype=np.uint16)
    n = points.shape[0]
    if class_ids.shape != (n,) or source_images.shape != (n,):
        raise FormatError("cloud arrays have mismatched lengths")
    colors = class_colors(class_ids)
    rec = np.empty(n, dtype=_PLY_DTYPE)
    rec["x"], rec["y"], rec["z"] = points[:, 0], points[:, 1], points[:, 2]
    rec["red"], rec["green"], rec["blue"] = colors[:, 0], colors[:, 1], colors[:, 2]
    rec["class_id"] = class_ids
    rec["source_image"] = source_images
    header = (
        "ply\n"
        "format binary_little_endian 1.0\n"
        f"element vertex {n}\n"
        "property float x\n"
        "property float y\n"
        "property float z\n"
        "property uchar red\n"
        "property uchar green\n"
        "property uchar blue\n"
        "property ushort class_id\n"
        "property ushort source_image\n"
        "end_header\n"
    )
    Path(path).write_bytes(header.encode("ascii") + rec.tobytes())


def read_cloud_ply(path: str | Path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Read a labeled cloud PLY; returns (points, class_ids, source_images)."""
    data = Path(path).read_bytes()
    marker = b"end_header\n"
    pos = data.find(marker)
    if not data.startswith(b"ply\n") or pos < 0:
        raise FormatError(f"{path}: not a PLY cloud")
    header = data[:pos].decode("ascii", errors="replace")
    if "format binary_little_endian 1.0" not in header:
        raise FormatError(f"{path}: unsupported PLY format")
    n = None
    for line in header.splitlines():
        if line.startswith("element vertex "):
            n = int(line.split()[-1])
    if n is None:
        raise FormatError(f"{path}: PLY header has no vertex element")
    payload = data[pos + len(marker):]
    if len(payload) != n * _PLY_DTYPE.itemsize:
        raise FormatError(f"{path}: truncated PLY payload")
    rec = np.frombuffer(payload, dtype=_PLY_DTYPE)
    points = np.stack([rec["x"], rec["y"], rec["z"]], axis=1)
    return points, rec["class_id"].copy(), rec["source_image"].copy()
