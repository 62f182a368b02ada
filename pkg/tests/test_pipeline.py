"""Tests for the end-to-end segmentation pipeline."""

import json
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
import pytest

from maskfuse.config import PairPolicy, PipelineConfig
from maskfuse.errors import EngineError
from maskfuse.pipeline import (
    SegmentationResult,
    extract_background,
    extract_object,
    run,
)
from maskfuse.scene.formats import write_labelmap
from maskfuse.scene.types import (
    CameraPose,
    ImageMeta,
    LabelMap,
    PointMap,
    Scene,
    SceneImage,
)
from maskfuse.synth import SynthSpec, synthesize

WIDE = PairPolicy(max_angle_deg=150.0, max_translation_m=2.0, k_nearest=4)


def flat_scene(labels, points=None, conf=None, pose_t=(0.0, 0.0, 0.0)):
    """Single-image scene with the given uint16 label array."""
    labels = np.asarray(labels, dtype=np.uint16)
    h, w = labels.shape
    if points is None:
        points = np.zeros((h, w, 3), dtype=np.float32)
    if conf is None:
        conf = np.ones((h, w), dtype=np.float32)
    pose = CameraPose(np.eye(3), np.asarray(pose_t, dtype=np.float64))
    meta = ImageMeta(index=0, width=w, height=h, pose=pose)
    im = SceneImage(meta, LabelMap(labels),
                    PointMap(np.asarray(points, dtype=np.float32),
                             np.asarray(conf, dtype=np.float32)))
    return Scene((im,))


class TestExtractBackground:
    def test_far_point_is_background(self):
        labels = np.array([[1, 1]], dtype=np.uint16)
        points = np.zeros((1, 2, 3), dtype=np.float32)
        points[0, 0] = (3.0, 0.0, 0.0)
        points[0, 1] = (0.5, 0.0, 0.0)
        scene = flat_scene(labels, points)
        cfg = PipelineConfig(reach_radius=1.2)
        bg = extract_background(scene, cfg)
        assert bg[0].tolist() == [[True, False]]

    def test_label_zero_is_background(self):
        scene = flat_scene(np.array([[0, 2]], dtype=np.uint16))
        bg = extract_background(scene, PipelineConfig())
        assert bg[0].tolist() == [[True, False]]

    def test_origin_defaults_to_first_camera(self):
        labels = np.array([[1]], dtype=np.uint16)
        points = np.full((1, 1, 3), 2.0, dtype=np.float32)
        near_cam = flat_scene(labels, points, pose_t=(2.0, 2.0, 2.0))
        far_cam = flat_scene(labels, points, pose_t=(9.0, 9.0, 9.0))
        assert not extract_background(near_cam, PipelineConfig())[0][0, 0]
        assert extract_background(far_cam, PipelineConfig())[0][0, 0]

    def test_workspace_origin_override(self):
        labels = np.array([[1]], dtype=np.uint16)
        points = np.full((1, 1, 3), 2.0, dtype=np.float32)
        scene = flat_scene(labels, points, pose_t=(9.0, 9.0, 9.0))
        cfg = PipelineConfig(workspace_origin=(2.0, 2.0, 2.0))
        assert not extract_background(scene, cfg)[0][0, 0]

    def test_marked_mask_file(self, tmp_path):
        scene = flat_scene(np.array([[1, 1], [2, 2]], dtype=np.uint16))
        mark = np.array([[0, 7], [0, 0]], dtype=np.uint16)
        path = tmp_path / "bg.pgm"
        write_labelmap(LabelMap(mark), path)
        cfg = PipelineConfig(background_mask_paths={0: str(path)})
        bg = extract_background(scene, cfg)
        assert bg[0].tolist() == [[False, True], [False, False]]

    def test_marked_mask_wrong_size(self, tmp_path):
        scene = flat_scene(np.array([[1, 1]], dtype=np.uint16))
        path = tmp_path / "bg.pgm"
        write_labelmap(LabelMap(np.zeros((3, 3), dtype=np.uint16)), path)
        cfg = PipelineConfig(background_mask_paths={0: str(path)})
        with pytest.raises(EngineError, match="background mask"):
            extract_background(scene, cfg)

    def test_marked_mask_unknown_image(self, tmp_path):
        scene = flat_scene(np.array([[1]], dtype=np.uint16))
        path = tmp_path / "bg.pgm"
        write_labelmap(LabelMap(np.zeros((1, 1), dtype=np.uint16)), path)
        cfg = PipelineConfig(background_mask_paths={5: str(path)})
        with pytest.raises(EngineError, match="unknown image 5"):
            extract_background(scene, cfg)

    def test_synth_background_is_table_and_sky(self):
        scene, gt = synthesize(SynthSpec(n_objects=3, n_views=2, seed=31))
        bg = extract_background(scene, PipelineConfig())
        for idx in scene.indices:
            assert np.array_equal(bg[idx], gt[idx].labels == 0)


class TestRunBasics:
    def test_no_matches_tau3d_zero_keeps_masks_separate(self):
        labels = np.array([[1, 1, 0], [2, 2, 3]], dtype=np.uint16)
        scene = flat_scene(labels)
        res = run(scene, PipelineConfig(tau3d=0.0))
        assert res.n_foreground_classes == 3
        for refs in list(res.class_members.values())[1:]:
            assert len(refs) == 1

    def test_degenerate_scene_background_only(self):
        scene = flat_scene(np.zeros((4, 4), dtype=np.uint16))
        res = run(scene, PipelineConfig())
        assert res.n_foreground_classes == 0
        assert res.class_members == {0: ()}
        assert not res.class_maps[0].any()
        assert res.cloud_points.shape == (0, 3)

    def test_all_masks_consumed_by_reach(self):
        labels = np.array([[1, 2]], dtype=np.uint16)
        points = np.full((1, 2, 3), 50.0, dtype=np.float32)
        scene = flat_scene(labels, points)
        res = run(scene, PipelineConfig())
        assert res.n_foreground_classes == 0
        assert res.class_members[0] == ((0, 1), (0, 2))

    def test_class_ids_contiguous_ascending_min_mask(self):
        labels = np.array([[3, 0, 1], [0, 7, 0]], dtype=np.uint16)
        scene = flat_scene(labels)
        res = run(scene, PipelineConfig(tau3d=0.0))
        assert sorted(res.class_members) == [0, 1, 2, 3]
        # classes ordered by their minimum member (image, local id)
        mins = [min(res.class_members[c]) for c in (1, 2, 3)]
        assert mins == sorted(mins)

    def test_partial_background_keeps_near_pixels(self):
        labels = np.array([[1, 1, 1, 1]], dtype=np.uint16)
        points = np.zeros((1, 4, 3), dtype=np.float32)
        points[0, 2] = (40.0, 0.0, 0.0)
        points[0, 3] = (40.0, 0.0, 0.0)
        scene = flat_scene(labels, points)
        res = run(scene, PipelineConfig(tau3d=0.0))
        assert res.n_foreground_classes == 1
        assert res.class_members[1] == ((0, 1),)
        assert res.class_maps[0].tolist() == [[1, 1, 0, 0]]
        assert res.cloud_points.shape == (2, 3)

    def test_class_map_paint_matches_registry(self):
        scene, _ = synthesize(SynthSpec(n_objects=3, n_views=2, overseg_k=2,
                                        seed=32))
        res = run(scene, PipelineConfig(tau2d_override=0.1, pair_policy=WIDE,
                                        seed=32))
        for cid, refs in res.class_members.items():
            if cid == 0:
                continue
            for idx in scene.indices:
                painted = int(np.sum(res.class_maps[idx] == cid))
                want = sum(
                    scene.image(idx).label_map.areas().get(r.local_id, 0)
                    for r in refs if r.image_index == idx)
                assert painted == want

    def test_class_pixel_conservation(self):
        scene, _ = synthesize(SynthSpec(n_objects=4, n_views=3, overseg_k=3,
                                        seed=33))
        res = run(scene, PipelineConfig(tau2d_override=0.1, pair_policy=WIDE,
                                        seed=33))
        for idx in scene.indices:
            im = scene.image(idx)
            ids, counts = np.unique(res.class_maps[idx], return_counts=True)
            assert counts.sum() == im.meta.width * im.meta.height
            assert set(ids.tolist()) <= set(res.class_members)

    def test_cloud_is_class_ordered_and_complete(self):
        scene, _ = synthesize(SynthSpec(n_objects=2, n_views=2, seed=34))
        res = run(scene, PipelineConfig(tau2d_override=0.1, pair_policy=WIDE,
                                        seed=34))
        assert np.all(np.diff(res.cloud_classes.astype(np.int64)) >= 0)
        n_fg = sum(int(np.sum(m > 0)) for m in res.class_maps.values())
        assert res.cloud_points.shape == (n_fg, 3)
        assert res.cloud_confidence.shape == (n_fg,)

    def test_debug_partitions_recorded(self):
        scene, _ = synthesize(SynthSpec(n_objects=2, n_views=2, seed=35))
        cfg = PipelineConfig(tau2d_override=0.1, pair_policy=WIDE, seed=35,
                             debug_partitions=True)
        res = run(scene, cfg)
        assert set(res.stage_partitions) == {"after_2d", "after_3d"}
        off = run(scene, PipelineConfig(tau2d_override=0.1, pair_policy=WIDE,
                                        seed=35, tau3d=0.0,
                                        debug_partitions=True))
        assert set(off.stage_partitions) == {"after_2d"}


class TestDeterminism:
    def test_byte_identical_across_runs_and_threads(self, tmp_path):
        scene, _ = synthesize(SynthSpec(n_objects=3, n_views=3, overseg_k=2,
                                        seed=36))
        outs = []
        for name, threads in (("a", 1), ("b", 1), ("c", 8)):
            cfg = PipelineConfig(tau2d_override=0.1, pair_policy=WIDE,
                                 seed=36, threads=threads)
            out = tmp_path / name
            run(scene, cfg).save(out)
            outs.append(out)
        ref = sorted(p.name for p in outs[0].iterdir())
        for other in outs[1:]:
            assert sorted(p.name for p in other.iterdir()) == ref
            for name in ref:
                assert (other / name).read_bytes() == \
                    (outs[0] / name).read_bytes()

    def test_concurrent_runs_agree(self):
        scene, _ = synthesize(SynthSpec(n_objects=2, n_views=2, seed=37))
        cfg = PipelineConfig(tau2d_override=0.1, pair_policy=WIDE, seed=37)
        with ThreadPoolExecutor(max_workers=4) as pool:
            results = list(pool.map(lambda _: run(scene, cfg), range(4)))
        ref = results[0]
        for res in results[1:]:
            assert res.class_members == ref.class_members
            assert all(np.array_equal(res.class_maps[i], ref.class_maps[i])
                       for i in res.class_maps)
            assert np.array_equal(res.cloud_points, ref.cloud_points)


class TestSaveLoad:
    def test_round_trip(self, tmp_path):
        scene, _ = synthesize(SynthSpec(n_objects=2, n_views=2, seed=38))
        res = run(scene, PipelineConfig(tau2d_override=0.1, pair_policy=WIDE,
                                        seed=38))
        res.save(tmp_path)
        assert (tmp_path / "classes.json").is_file()
        assert (tmp_path / "mhat_000.pgm").is_file()
        assert (tmp_path / "cloud.ply").is_file()
        back = SegmentationResult.load(tmp_path)
        assert back.class_members == res.class_members
        assert back.seed == res.seed
        assert back.config_echo == res.config_echo
        for idx in res.class_maps:
            assert np.array_equal(back.class_maps[idx], res.class_maps[idx])
        assert np.allclose(back.cloud_points, res.cloud_points)
        assert np.array_equal(back.cloud_classes, res.cloud_classes)
        assert np.array_equal(back.cloud_sources, res.cloud_sources)
        # confidence is not serialized
        assert not back.cloud_confidence.any()

    def test_echo_excludes_threads(self):
        scene = flat_scene(np.array([[1]], dtype=np.uint16))
        res = run(scene, PipelineConfig(threads=8, tau3d=0.0))
        assert "threads" not in res.config_echo
        assert res.config_echo["tau3d"] == 0.0

    def test_load_missing_dir(self, tmp_path):
        with pytest.raises(EngineError, match="classes.json"):
            SegmentationResult.load(tmp_path / "nowhere")

    def test_debug_file_written(self, tmp_path):
        scene, _ = synthesize(SynthSpec(n_objects=2, n_views=2, seed=39))
        cfg = PipelineConfig(tau2d_override=0.1, pair_policy=WIDE, seed=39,
                             debug_partitions=True)
        run(scene, cfg).save(tmp_path)
        doc = json.loads((tmp_path / "partition_debug.json").read_text())
        assert "after_2d" in doc and "after_3d" in doc


class TestExtractObject:
    def test_unknown_mask_errors(self):
        scene = flat_scene(np.array([[1]], dtype=np.uint16))
        res = run(scene, PipelineConfig(tau3d=0.0))
        with pytest.raises(EngineError, match="no mask"):
            extract_object(res, 0, 9)
        with pytest.raises(EngineError, match="no mask"):
            extract_object(res, 3, 1)

    def test_background_consumed_mask_indicator(self):
        labels = np.array([[1, 2]], dtype=np.uint16)
        points = np.zeros((1, 2, 3), dtype=np.float32)
        points[0, 1] = (50.0, 0.0, 0.0)
        scene = flat_scene(labels, points)
        res = run(scene, PipelineConfig(tau3d=0.0))
        obj = extract_object(res, 0, 2)
        assert obj.is_background and obj.class_id == 0
        assert obj.points.shape == (0, 3)

    def test_single_mask_class_returns_its_points(self):
        labels = np.array([[1, 0, 2]], dtype=np.uint16)
        points = np.arange(9, dtype=np.float32).reshape(1, 3, 3) * 0.1
        scene = flat_scene(labels, points)
        res = run(scene, PipelineConfig(tau3d=0.0))
        obj = extract_object(res, 0, 1)
        assert not obj.is_background
        assert np.array_equal(obj.points, points[0, :1])

    def test_fragment_equivalence(self):
        scene, _ = synthesize(SynthSpec(n_objects=2, n_views=2, overseg_k=3,
                                        seed=40))
        res = run(scene, PipelineConfig(tau2d_override=0.1, pair_policy=WIDE,
                                        seed=40))
        merged = [refs for cid, refs in res.class_members.items()
                  if cid != 0 and len(refs) >= 2]
        assert merged, "expected at least one merged class"
        refs = merged[0]
        a = extract_object(res, refs[0].image_index, refs[0].local_id)
        b = extract_object(res, refs[1].image_index, refs[1].local_id)
        assert a.class_id == b.class_id
        assert np.array_equal(a.points, b.points)
        assert np.array_equal(a.sources, b.sources)
        assert np.array_equal(a.confidence, b.confidence)


class TestSparseViews:
    def test_three_views_objects_keep_one_class(self):
        scene, gt = synthesize(SynthSpec(n_objects=4, n_views=3, seed=41))
        cfg = PipelineConfig(tau2d_override=0.1, pair_policy=WIDE, seed=41)
        res = run(scene, cfg)
        assert res.n_foreground_classes == 4
        for idx in scene.indices:
            ids, counts = np.unique(res.class_maps[idx], return_counts=True)
            im = scene.image(idx)
            assert counts.sum() == im.meta.width * im.meta.height


def gt_object_of_mask(scene, gt, idx, local_id):
    """Ground-truth object id entirely covering one input mask."""
    covered = np.unique(gt[idx].labels[scene.image(idx).label_map.labels
                                       == local_id])
    assert covered.size == 1
    return int(covered[0])


class TestNeverMergeGap:
    # min_gap defaults to 5 cm; across random scenes, no foreground class
    # may ever span two ground-truth objects
    @pytest.mark.parametrize("seed", range(20))
    def test_distinct_objects_never_merge(self, seed):
        noisy = seed % 2 == 1
        spec = SynthSpec(
            n_objects=4, n_views=4, seed=100 + seed,
            overseg_k=3 if noisy else 2,
            match_dropout=0.2 if noisy else 0.0,
            spurious_rate=0.05 if noisy else 0.0,
            pointmap_noise_sigma=0.002 if noisy else 0.0)
        scene, gt = synthesize(spec)
        cfg = PipelineConfig(tau2d_override=0.1, pair_policy=WIDE,
                             seed=seed)
        res = run(scene, cfg)
        for cid, refs in res.class_members.items():
            if cid == 0:
                continue
            objects = {gt_object_of_mask(scene, gt, r.image_index, r.local_id)
                       for r in refs}
            assert len(objects) == 1
