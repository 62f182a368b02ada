"""HTTP service tests: endpoint contracts, error mapping, and consistency
with the underlying engine modules."""

import importlib
import json

import numpy as np
import pytest
from fastapi.testclient import TestClient

import maskfuse
from maskfuse.errors import InternalError
from maskfuse.metrics import evaluate
from maskfuse.pipeline import SegmentationResult
from maskfuse.scene.formats import read_cloud_ply
from maskfuse.scene.manifest import load_scene
from maskfuse.service import create_app
from maskfuse.synth import SynthSpec, write_synth_scene

SPEC = SynthSpec(n_objects=3, n_views=4, width=256, height=192,
                 overseg_k=2, seed=7)
# four ring views sit 90 degrees apart, outside the default pair gate
CONFIG = {"tau2d_override": 0.1, "seed": 42,
          "pair_policy": {"max_angle_deg": 150.0}}


@pytest.fixture(scope="module")
def client():
    return TestClient(create_app(), raise_server_exceptions=False)


@pytest.fixture(scope="module")
def scene_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("scene")
    write_synth_scene(SPEC, out)
    return out


@pytest.fixture(scope="module")
def pred_dir(client, scene_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("pred")
    resp = client.post("/segment", json={
        "scene_manifest": str(scene_dir / "manifest.json"),
        "out_dir": str(out), "config": CONFIG})
    assert resp.status_code == 200
    return out


def test_healthz(client):
    resp = client.get("/healthz")
    assert resp.status_code == 200
    doc = resp.json()
    assert doc["status"] == "ok"
    assert doc["version"] == maskfuse.__version__


class TestSegment:
    def test_happy_path_layout(self, client, scene_dir, pred_dir):
        for name in ("classes.json", "cloud.ply", "config_echo.json",
                     "mhat_000.pgm", "mhat_003.pgm"):
            assert (pred_dir / name).exists()

    def test_counts_reported(self, client, scene_dir, tmp_path):
        resp = client.post("/segment", json={
            "scene_manifest": str(scene_dir / "manifest.json"),
            "out_dir": str(tmp_path / "p"), "config": CONFIG})
        doc = resp.json()
        assert doc["n_foreground_classes"] == SPEC.n_objects
        assert doc["n_classes"] == SPEC.n_objects + 1
        assert doc["elapsed_s"] > 0

    def test_echo_is_resolved_config(self, pred_dir):
        echo = json.loads((pred_dir / "config_echo.json").read_text())
        assert echo["tau2d_override"] == 0.1
        assert echo["seed"] == 42
        assert echo["pair_policy"]["max_angle_deg"] == 150.0
        # defaults are resolved into the echo too
        assert echo["tau3d"] == 5e-4
        assert "threads" not in echo

    def test_rerun_byte_identical(self, client, scene_dir, pred_dir,
                                  tmp_path):
        out = tmp_path / "again"
        resp = client.post("/segment", json={
            "scene_manifest": str(scene_dir / "manifest.json"),
            "out_dir": str(out), "config": CONFIG})
        assert resp.status_code == 200
        names = sorted(p.name for p in pred_dir.iterdir()
                       if p.name != "metrics.json")
        assert sorted(p.name for p in out.iterdir()) == names
        for name in names:
            assert (out / name).read_bytes() == \
                (pred_dir / name).read_bytes()

    def test_missing_manifest_400_names_path(self, client, tmp_path):
        missing = tmp_path / "nope" / "manifest.json"
        resp = client.post("/segment", json={
            "scene_manifest": str(missing), "out_dir": str(tmp_path / "o")})
        assert resp.status_code == 400
        assert str(missing) in resp.json()["error"]

    def test_unknown_config_key_rejected(self, client, scene_dir, tmp_path):
        resp = client.post("/segment", json={
            "scene_manifest": str(scene_dir / "manifest.json"),
            "out_dir": str(tmp_path / "o"), "config": {"tau_3d": 0.1}})
        assert resp.status_code == 422

    def test_internal_error_maps_to_500(self, client, scene_dir, tmp_path,
                                        monkeypatch):
        # the package re-exports its FastAPI instance as `app`, shadowing
        # the submodule, so fetch the module itself
        app_mod = importlib.import_module("maskfuse.service.app")

        def boom(scene, config):
            raise InternalError("invariant violated")

        monkeypatch.setattr(app_mod, "run", boom)
        resp = client.post("/segment", json={
            "scene_manifest": str(scene_dir / "manifest.json"),
            "out_dir": str(tmp_path / "o")})
        assert resp.status_code == 500
        assert "invariant" in resp.json()["error"]


class TestEval:
    def test_report_matches_engine(self, client, scene_dir, pred_dir):
        resp = client.post("/eval", json={
            "pred_dir": str(pred_dir),
            "scene_manifest": str(scene_dir / "manifest.json")})
        assert resp.status_code == 200
        doc = resp.json()
        assert doc["out_path"] == str(pred_dir / "metrics.json")

        result = SegmentationResult.load(pred_dir)
        scene = load_scene(scene_dir / "manifest.json")
        expected = evaluate(result, scene).to_json_dict()
        assert doc["report"] == expected
        on_disk = json.loads((pred_dir / "metrics.json").read_text())
        assert on_disk == expected

    def test_perfect_scores(self, client, scene_dir, pred_dir):
        resp = client.post("/eval", json={
            "pred_dir": str(pred_dir),
            "scene_manifest": str(scene_dir / "manifest.json")})
        means = resp.json()["report"]["means"]
        assert means["iou"] == 1.0
        assert means["f1"] == 1.0
        assert means["d_chamfer"] == 0.0
        assert means["iou_sel"] == 1.0

    def test_custom_out_path(self, client, scene_dir, pred_dir, tmp_path):
        out = tmp_path / "m.json"
        resp = client.post("/eval", json={
            "pred_dir": str(pred_dir),
            "scene_manifest": str(scene_dir / "manifest.json"),
            "out_path": str(out)})
        assert resp.status_code == 200
        assert out.exists()

    def test_missing_pred_dir_400(self, client, scene_dir, tmp_path):
        resp = client.post("/eval", json={
            "pred_dir": str(tmp_path / "absent"),
            "scene_manifest": str(scene_dir / "manifest.json")})
        assert resp.status_code == 400


class TestSynth:
    def test_round_trip(self, client, tmp_path):
        resp = client.post("/synth", json={
            "out_dir": str(tmp_path),
            "spec": {"n_objects": 2, "n_views": 3, "seed": 5}})
        assert resp.status_code == 200
        doc = resp.json()
        assert doc["n_objects"] == 2
        assert doc["n_views"] == 3
        scene = load_scene(doc["manifest_path"])
        assert len(scene.images) == 3
        assert len(scene.ground_truth) == 3

    def test_echo_holds_spec(self, client, tmp_path):
        client.post("/synth", json={
            "out_dir": str(tmp_path), "spec": {"n_objects": 2, "n_views": 3}})
        echo = json.loads((tmp_path / "config_echo.json").read_text())
        assert echo["n_objects"] == 2
        assert echo["overseg_k"] == 1

    def test_invalid_spec_400(self, client, tmp_path):
        resp = client.post("/synth", json={
            "out_dir": str(tmp_path), "spec": {"n_objects": 0}})
        assert resp.status_code == 400


class TestExportObject:
    def test_fragments_export_same_cloud(self, client, pred_dir, tmp_path):
        result = SegmentationResult.load(pred_dir)
        members = None
        for cid, refs in result.class_members.items():
            per_image = {}
            for ref in refs:
                per_image.setdefault(ref.image_index, []).append(ref.local_id)
            pair = next(((i, ids) for i, ids in per_image.items()
                         if len(ids) >= 2), None)
            if pair:
                members = pair
                break
        assert members, "oversegmented scene should merge fragments somewhere"
        image, (a, b) = members[0], members[1][:2]

        paths = []
        for tag, lid in (("a", a), ("b", b)):
            out = tmp_path / f"{tag}.ply"
            resp = client.post("/export-object", json={
                "result_dir": str(pred_dir), "image_index": image,
                "local_id": lid, "out_path": str(out)})
            assert resp.status_code == 200
            assert not resp.json()["is_background"]
            paths.append(out)
        assert paths[0].read_bytes() == paths[1].read_bytes()

    def test_cloud_content(self, client, pred_dir, tmp_path):
        result = SegmentationResult.load(pred_dir)
        cid, refs = next((c, r) for c, r in result.class_members.items()
                         if c != 0)
        ref = refs[0]
        out = tmp_path / "obj.ply"
        resp = client.post("/export-object", json={
            "result_dir": str(pred_dir), "image_index": ref.image_index,
            "local_id": ref.local_id, "out_path": str(out)})
        doc = resp.json()
        assert doc["class_id"] == cid
        points, classes, sources = read_cloud_ply(out)
        assert points.shape[0] == doc["n_points"]
        assert np.all(classes == cid)
        sel = result.cloud_classes == cid
        np.testing.assert_array_equal(points, result.cloud_points[sel])

    def test_unknown_mask_400(self, client, pred_dir, tmp_path):
        resp = client.post("/export-object", json={
            "result_dir": str(pred_dir), "image_index": 0,
            "local_id": 999, "out_path": str(tmp_path / "x.ply")})
        assert resp.status_code == 400
        assert "999" in resp.json()["error"]
