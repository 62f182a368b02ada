"""Synthetic tabletop scenes with exact ground truth.

Axis-aligned boxes and spheres sit on a square table; pinhole cameras on a
ring look at the table center. Views are rendered analytically (first ray
hit over the primitives), giving exact per-pixel 3D points, ground-truth
labels, and poses.

Cross-view consistency: after rendering, pixels are re-anchored so that a
surface point seen from several views is stored with the identical
coordinates in each of them. For every ordered view pair the source view's
object pixels are projected into the target view; a target pixel whose
ground-truth label agrees and for which the source point is exactly
visible (first hit of the re-cast ray is the point itself) adopts the
source's coordinates, once. Pairs are processed in lexicographic order, so
a view's points are final before it ever acts as a source, which keeps
chains across three or more views consistent. Correspondences are then
found honestly by searching the stored point maps for coinciding points.

Degradation knobs: over-segmentation (seeded planar cuts of input masks),
match dropout, spurious matches, and Gaussian point noise.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .errors import ConfigError, EngineError
from .scene.manifest import save_scene
from .scene.types import (
    CameraPose,
    CorrespondenceSet,
    ImageMeta,
    LabelMap,
    PointMap,
    Scene,
    SceneImage,
)
from .seeding import rng_for

_EPS = 1e-9
SPEC_NAME = "synth_spec.json"


@dataclass(frozen=True)
class SynthSpec:
    """Parameters of a synthetic scene."""

    n_objects: int = 5
    n_views: int = 6
    width: int = 640
    height: int = 480
    box_size_range: tuple[float, float] = (0.04, 0.09)
    sphere_radius_range: tuple[float, float] = (0.02, 0.045)
    table_extent: float = 0.6
    min_gap: float = 0.05
    ring_radius: float = 0.8
    ring_height: float = 0.5
    focal: float = 460.0
    overseg_k: int = 1
    match_dropout: float = 0.0
    spurious_rate: float = 0.0
    pointmap_noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_objects < 1:
            raise ConfigError("n_objects must be at least 1")
        if self.n_views < 1:
            raise ConfigError("n_views must be at least 1")
        if self.width <= 0 or self.height <= 0:
            raise ConfigError("image dimensions must be positive")
        if self.overseg_k < 1:
            raise ConfigError("overseg_k must be at least 1")
        for name in ("match_dropout", "spurious_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")
        if self.pointmap_noise_sigma < 0.0:
            raise ConfigError("pointmap_noise_sigma must be >= 0")
        for name in ("table_extent", "ring_radius", "ring_height", "focal"):
            if getattr(self, name) <= 0.0:
                raise ConfigError(f"{name} must be positive")
        if self.min_gap < 0.0:
            raise ConfigError("min_gap must be >= 0")
        for name in ("box_size_range", "sphere_radius_range"):
            lo, hi = getattr(self, name)
            if not 0.0 < lo <= hi:
                raise ConfigError(f"{name} must satisfy 0 < lo <= hi")
            object.__setattr__(self, name, (float(lo), float(hi)))

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["box_size_range"] = list(self.box_size_range)
        doc["sphere_radius_range"] = list(self.sphere_radius_range)
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "SynthSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown synth spec keys: {sorted(unknown)}")
        kwargs = dict(doc)
        for name in ("box_size_range", "sphere_radius_range"):
            if name in kwargs:
                kwargs[name] = tuple(kwargs[name])
        return cls(**kwargs)


@dataclass(frozen=True, eq=False)
class _Table:
    half_extent: float

    def intersect(self, origin: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        dz = dirs[..., 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = -origin[2] / dz
        x = origin[0] + t * dirs[..., 0]
        y = origin[1] + t * dirs[..., 1]
        hit = (np.isfinite(t) & (t > _EPS)
               & (np.abs(x) <= self.half_extent)
               & (np.abs(y) <= self.half_extent))
        return np.where(hit, t, np.inf)


@dataclass(frozen=True, eq=False)
class _Box:
    lo: np.ndarray
    hi: np.ndarray

    def intersect(self, origin: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / dirs
            t1 = (self.lo - origin) * inv
            t2 = (self.hi - origin) * inv
        tn = np.fmin(t1, t2).max(axis=-1)
        tf = np.fmax(t1, t2).min(axis=-1)
        hit = (tn <= tf) & (tn > _EPS)
        return np.where(hit, tn, np.inf)


@dataclass(frozen=True, eq=False)
class _Sphere:
    center: np.ndarray
    radius: float

    def intersect(self, origin: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        oc = origin - self.center
        a = np.sum(dirs * dirs, axis=-1)
        b = 2.0 * np.sum(dirs * oc, axis=-1)
        c = float(oc @ oc) - self.radius**2
        disc = b * b - 4.0 * a * c
        with np.errstate(invalid="ignore"):
            t = (-b - np.sqrt(disc)) / (2.0 * a)
        hit = (disc >= 0.0) & (t > _EPS)
        return np.where(hit, t, np.inf)


def _first_hit(primitives, origin: np.ndarray, dirs: np.ndarray):
    """First intersection along each ray: (t, primitive index), inf/-1 on miss."""
    shape = dirs.shape[:-1]
    t_best = np.full(shape, np.inf)
    idx = np.full(shape, -1, dtype=np.int32)
    for k, prim in enumerate(primitives):
        t = prim.intersect(origin, dirs)
        closer = t < t_best
        t_best[closer] = t[closer]
        idx[closer] = k
    return t_best, idx


def place_objects(spec: SynthSpec) -> list:
    """Sample non-overlapping primitives on the table.

    The first list entry is the table itself; objects follow in ground-truth
    id order (object i has gt label i). Horizontal footprint circles keep at
    least min_gap clearance, which lower-bounds the true 3D surface gap.
    """
    rng = rng_for(spec.seed, "layout")
    prims: list = [_Table(spec.table_extent / 2.0)]
    placed: list[tuple[float, float, float]] = []  # (cx, cy, footprint radius)
    for _ in range(spec.n_objects):
        for _attempt in range(500):
            if rng.random() < 0.5:
                half = rng.uniform(spec.box_size_range[0] / 2.0,
                                   spec.box_size_range[1] / 2.0, size=3)
                foot = float(np.hypot(half[0], half[1]))
                maker = "box"
            else:
                radius = float(rng.uniform(*spec.sphere_radius_range))
                foot = radius
                maker = "sphere"
            margin = foot + 0.02
            limit = spec.table_extent / 2.0 - margin
            if limit <= 0.0:
                continue
            cx, cy = rng.uniform(-limit, limit, size=2)
            if all(np.hypot(cx - px, cy - py) >= foot + pf + spec.min_gap
                   for px, py, pf in placed):
                placed.append((float(cx), float(cy), foot))
                if maker == "box":
                    center = np.array([cx, cy, half[2]])
                    prims.append(_Box(center - half, center + half))
                else:
                    prims.append(_Sphere(np.array([cx, cy, radius]), radius))
                break
        else:
            raise EngineError(
                f"could not place {spec.n_objects} non-overlapping objects "
                f"on a {spec.table_extent} m table; reduce count or sizes")
    return prims


def ring_poses(spec: SynthSpec) -> list[CameraPose]:
    """Cameras evenly spaced on a ring, looking at the table center."""
    poses = []
    for i in range(spec.n_views):
        theta = 2.0 * math.pi * i / spec.n_views
        eye = np.array([spec.ring_radius * math.cos(theta),
                        spec.ring_radius * math.sin(theta),
                        spec.ring_height])
        fwd = -eye / np.linalg.norm(eye)
        right = np.cross(fwd, np.array([0.0, 0.0, 1.0]))
        right /= np.linalg.norm(right)
        down = np.cross(fwd, right)
        rotation = np.stack([right, down, fwd], axis=1)
        poses.append(CameraPose(rotation, eye))
    return poses


def render_view(primitives, pose: CameraPose, spec: SynthSpec):
    """Render one view analytically.

    Returns (gt_labels uint16, points float64 (H, W, 3), hit bool). Table
    and sky pixels get label 0; hit is False only off every surface.
    """
    w, h, f = spec.width, spec.height, spec.focal
    xs = (np.arange(w) + 0.5 - w / 2.0) / f
    ys = (np.arange(h) + 0.5 - h / 2.0) / f
    dx, dy = np.meshgrid(xs, ys)
    dirs_cam = np.stack([dx, dy, np.ones_like(dx)], axis=-1)
    dirs = dirs_cam @ pose.rotation.T
    t, idx = _first_hit(primitives, pose.translation, dirs)
    hit = np.isfinite(t)
    t_safe = np.where(hit, t, 0.0)
    points = pose.translation + t_safe[..., None] * dirs
    points[~hit] = 0.0
    labels = np.where(idx > 0, idx, 0).astype(np.uint16)
    return labels, points, hit


def _project(points: np.ndarray, pose: CameraPose, spec: SynthSpec):
    """World points -> (px, py, in_front) integer pixels under a pose."""
    cam = (points - pose.translation) @ pose.rotation
    z = cam[:, 2]
    ok = z > _EPS
    zs = np.where(ok, z, 1.0)
    u = spec.focal * cam[:, 0] / zs + spec.width / 2.0
    v = spec.focal * cam[:, 1] / zs + spec.height / 2.0
    px = np.floor(u).astype(np.int64)
    py = np.floor(v).astype(np.int64)
    return px, py, ok


def _anchor_points(primitives, poses, gt_maps, points_list, spec) -> None:
    """Rewrite target pixels to share source pixels' exact 3D points.

    Mutates points_list (float64 renders) in place. A target pixel is
    anchored at most once (freeze-on-first); later sources are accepted
    only when they carry bit-identical coordinates, which is exactly the
    transitive-chain case.
    """
    n = len(poses)
    w, h = spec.width, spec.height
    frozen = [np.zeros((h, w), dtype=bool) for _ in range(n)]
    for a in range(n):
        sy, sx = np.nonzero(gt_maps[a] > 0)
        if sy.size == 0:
            continue
        obj_a = gt_maps[a][sy, sx].astype(np.int32)
        for b in range(a + 1, n):
            src = points_list[a][sy, sx]
            px, py, ok = _project(src, poses[b], spec)
            ok &= (px >= 0) & (px < w) & (py >= 0) & (py < h)
            pxc = np.clip(px, 0, w - 1)
            pyc = np.clip(py, 0, h - 1)
            ok &= gt_maps[b][pyc, pxc] == obj_a
            sel = np.nonzero(ok)[0]
            if sel.size == 0:
                continue
            # exact visibility: the re-cast ray must hit the point itself
            rays = src[sel] - poses[b].translation
            t_first, _ = _first_hit(primitives, poses[b].translation, rays)
            sel = sel[np.abs(t_first - 1.0) <= 1e-6]
            if sel.size == 0:
                continue
            tx, ty, val = px[sel], py[sel], src[sel]
            already = frozen[b][ty, tx]
            same = np.all(points_list[b][ty, tx] == val, axis=1)
            keep = ~already | same
            tx, ty, val = tx[keep], ty[keep], val[keep]
            # one source per target pixel; earliest row-major source wins
            _, first = np.unique(ty * w + tx, return_index=True)
            tx, ty, val = tx[first], ty[first], val[first]
            points_list[b][ty, tx] = val
            frozen[b][ty, tx] = True


def generate(spec: SynthSpec) -> tuple[Scene, dict[int, LabelMap]]:
    """Generate a scene: exact poses, pointmaps, and ground truth.

    The scene's label maps are the per-view input masks (ground-truth
    objects under shuffled per-view local ids); the returned dict maps
    image index to the ground-truth label maps, which the scene also
    carries. Correspondences are not included; see generate_matches.
    """
    prims = place_objects(spec)
    poses = ring_poses(spec)

    gt_arrays, points_list, hits = [], [], []
    for pose in poses:
        labels, points, hit = render_view(prims, pose, spec)
        gt_arrays.append(labels)
        points_list.append(points)
        hits.append(hit)

    _anchor_points(prims, poses, gt_arrays, points_list, spec)

    images = []
    gt_maps: dict[int, LabelMap] = {}
    for idx, pose in enumerate(poses):
        gt = gt_arrays[idx]
        visible = np.unique(gt)
        visible = visible[visible != 0]
        lut = np.zeros(spec.n_objects + 1, dtype=np.uint16)
        perm = rng_for(spec.seed, "labels", idx).permutation(visible.size)
        for slot, obj in enumerate(visible.tolist()):
            lut[obj] = perm[slot] + 1
        input_labels = lut[gt]
        pm = PointMap(points_list[idx].astype(np.float32),
                      hits[idx].astype(np.float32))
        meta = ImageMeta(index=idx, width=spec.width, height=spec.height,
                         pose=pose)
        images.append(SceneImage(meta, LabelMap(input_labels), pm))
        gt_maps[idx] = LabelMap(gt)

    scene = Scene(tuple(images), (), dict(gt_maps))
    return scene, gt_maps


def inject_oversegmentation(
    label_maps: dict[int, LabelMap], overseg_k: int, seed: int
) -> dict[int, LabelMap]:
    """Split each mask into 1..overseg_k fragments along seeded planar cuts.

    Fragment unions equal the original masks exactly; fragment ids are
    renumbered contiguously per view. overseg_k = 1 is the identity.
    """
    if overseg_k < 1:
        raise ConfigError("overseg_k must be at least 1")
    if overseg_k == 1:
        return dict(label_maps)
    out: dict[int, LabelMap] = {}
    for idx in sorted(label_maps):
        labels = label_maps[idx].labels
        rng = rng_for(seed, "overseg", idx)
        new = np.zeros_like(labels)
        next_id = 1
        for lid in np.unique(labels).tolist():
            if lid == 0:
                continue
            ys, xs = np.nonzero(labels == lid)
            nfrag = int(rng.integers(1, overseg_k + 1))
            phi = float(rng.uniform(0.0, math.pi))
            if nfrag == 1 or ys.size < 2:
                new[ys, xs] = next_id
                next_id += 1
                continue
            proj = xs * math.cos(phi) + ys * math.sin(phi)
            order = np.argsort(proj, kind="stable")
            bounds = [round(i * ys.size / nfrag) for i in range(nfrag + 1)]
            for f in range(nfrag):
                part = order[bounds[f]:bounds[f + 1]]
                if part.size == 0:
                    continue
                new[ys[part], xs[part]] = next_id
                next_id += 1
        out[idx] = LabelMap(new)
    return out


def generate_matches(
    scene: Scene,
    gt_maps: dict[int, LabelMap],
    dropout: float,
    spurious_rate: float,
    seed: int,
) -> tuple[CorrespondenceSet, ...]:
    """Find exact correspondences, then degrade them.

    For every view pair, object pixels whose stored 3D points coincide are
    matched with confidence 1.0 (the stored points are bit-identical by
    construction, comfortably within the 1e-6 m coincidence bound). A
    seeded `dropout` fraction is removed, and floor(spurious_rate * n)
    uniform random pixel pairs with confidence in [0.5, 1] are added, with
    n the pre-dropout exact count.
    """
    for name, v in (("dropout", dropout), ("spurious_rate", spurious_rate)):
        if not 0.0 <= v <= 1.0:
            raise ConfigError(f"{name} must lie in [0, 1]")

    indices = scene.indices
    lookup: dict[int, dict[bytes, tuple[int, int]]] = {}
    for idx in indices:
        gt = gt_maps[idx].labels
        pts = scene.image(idx).point_map.points
        ys, xs = np.nonzero(gt > 0)
        raw = pts[ys, xs].tobytes()
        table: dict[bytes, tuple[int, int]] = {}
        for k in range(ys.size):
            table[raw[12 * k: 12 * (k + 1)]] = (int(xs[k]), int(ys[k]))
        lookup[idx] = table

    out = []
    for i, a in enumerate(indices):
        gt_a = gt_maps[a].labels
        pts_a = scene.image(a).point_map.points
        ys, xs = np.nonzero(gt_a > 0)
        raw_a = pts_a[ys, xs].tobytes()
        for b in indices[i + 1:]:
            table_b = lookup[b]
            quads = []
            for k in range(ys.size):
                hit = table_b.get(raw_a[12 * k: 12 * (k + 1)])
                if hit is not None:
                    quads.append((int(xs[k]), int(ys[k]), hit[0], hit[1]))
            n_exact = len(quads)
            if n_exact:
                quad_arr = np.asarray(quads, dtype=np.int64)
                conf = np.ones(n_exact, dtype=np.float32)
                n_drop = math.floor(dropout * n_exact)
                if n_drop:
                    drop = rng_for(seed, "dropout", a, b).choice(
                        n_exact, size=n_drop, replace=False)
                    keep = np.ones(n_exact, dtype=bool)
                    keep[drop] = False
                    quad_arr, conf = quad_arr[keep], conf[keep]
            else:
                quad_arr = np.empty((0, 4), dtype=np.int64)
                conf = np.empty(0, dtype=np.float32)
            n_spurious = math.floor(spurious_rate * n_exact)
            if n_spurious:
                rng = rng_for(seed, "spurious", a, b)
                wa = scene.image(a).meta
                wb = scene.image(b).meta
                junk = np.stack([
                    rng.integers(0, wa.width, n_spurious),
                    rng.integers(0, wa.height, n_spurious),
                    rng.integers(0, wb.width, n_spurious),
                    rng.integers(0, wb.height, n_spurious)], axis=1)
                junk_conf = rng.uniform(0.5, 1.0, n_spurious).astype(np.float32)
                quad_arr = np.concatenate([quad_arr, junk])
                conf = np.concatenate([conf, junk_conf])
            if quad_arr.shape[0] == 0:
                continue
            out.append(CorrespondenceSet(
                a, b, quad_arr[:, 0], quad_arr[:, 1], quad_arr[:, 2],
                quad_arr[:, 3], conf))
    return tuple(out)


def corrupt_pointmaps(scene: Scene, sigma: float, seed: int) -> Scene:
    """Add isotropic Gaussian noise to every point; rescale confidences to
    clip(exp(-|noise|^2 / (2 sigma^2)), 0.1, 1). sigma = 0 is the identity.
    Labels, poses, correspondences, and ground truth are untouched."""
    if sigma < 0.0:
        raise ConfigError("sigma must be >= 0")
    if sigma == 0.0:
        return scene
    images = []
    for im in scene.images:
        rng = rng_for(seed, "noise", im.meta.index)
        pts = im.point_map.points
        noise = rng.normal(0.0, sigma, size=pts.shape)
        new_pts = (pts.astype(np.float64) + noise).astype(np.float32)
        sq = np.sum(noise * noise, axis=-1)
        conf = np.clip(np.exp(-sq / (2.0 * sigma * sigma)), 0.1, 1.0)
        images.append(SceneImage(
            im.meta, im.label_map,
            PointMap(new_pts, conf.astype(np.float32))))
    return Scene(tuple(images), scene.correspondences, scene.ground_truth)


def synthesize(spec: SynthSpec) -> tuple[Scene, dict[int, LabelMap]]:
    """Full generation: render, over-segment, match, corrupt."""
    scene, gt_maps = generate(spec)
    if spec.overseg_k > 1:
        maps = {im.meta.index: im.label_map for im in scene.images}
        scene = scene.with_label_maps(
            inject_oversegmentation(maps, spec.overseg_k, spec.seed))
    scene = scene.with_correspondences(generate_matches(
        scene, gt_maps, spec.match_dropout, spec.spurious_rate, spec.seed))
    if spec.pointmap_noise_sigma > 0.0:
        scene = corrupt_pointmaps(scene, spec.pointmap_noise_sigma, spec.seed)
    return scene, gt_maps


def write_synth_scene(spec: SynthSpec, out_dir: str | Path) -> Path:
    """Generate and write a complete scene directory; returns the manifest
    path. The directory carries ground-truth maps and synth_spec.json next
    to the standard scene files."""
    scene, _ = synthesize(spec)
    out_dir = Path(out_dir)
    manifest_path = save_scene(scene, out_dir)
    (out_dir / SPEC_NAME).write_text(
        json.dumps(spec.to_dict(), indent=2, sort_keys=True) + "\n")
    return manifest_path
