"""HTTP service exposing the segmentation engine.

All paths in request bodies are interpreted on the service host's
filesystem. Engine validation failures map to 400, internal invariant
violations to 500.
"""

from __future__ import annotations

import json
import time
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__
from ..errors import EngineError, InternalError
from ..metrics import evaluate
from ..pipeline import SegmentationResult, extract_object, run
from ..scene.formats import write_cloud_ply
from ..scene.manifest import load_scene
from ..synth import write_synth_scene
from .models import (
    EvalRequest,
    EvalResponse,
    ExportObjectRequest,
    ExportObjectResponse,
    HealthResponse,
    SegmentRequest,
    SegmentResponse,
    SynthRequest,
    SynthResponse,
)

ECHO_NAME = "config_echo.json"


def _write_echo(out_dir: Path, doc: dict) -> None:
    (out_dir / ECHO_NAME).write_text(
        json.dumps(doc, indent=2, sort_keys=True) + "\n")


def create_app() -> FastAPI:
    app = FastAPI(title="maskfuse", version=__version__)

    @app.exception_handler(EngineError)
    async def _user_error(request: Request, exc: EngineError):
        return JSONResponse(status_code=400, content={"error": str(exc)})

    @app.exception_handler(InternalError)
    async def _internal_error(request: Request, exc: InternalError):
        return JSONResponse(status_code=500, content={"error": str(exc)})

    @app.get("/healthz", response_model=HealthResponse)
    def healthz() -> HealthResponse:
        return HealthResponse(status="ok", version=__version__)

    @app.post("/segment", response_model=SegmentResponse)
    def segment(req: SegmentRequest) -> SegmentResponse:
        config = req.config.to_engine()
        scene = load_scene(req.scene_manifest)
        start = time.perf_counter()
        result = run(scene, config)
        result.save(req.out_dir)
        elapsed = time.perf_counter() - start
        _write_echo(Path(req.out_dir), config.echo_dict())
        return SegmentResponse(
            out_dir=str(req.out_dir),
            n_classes=len(result.class_members),
            n_foreground_classes=result.n_foreground_classes,
            elapsed_s=elapsed)

    @app.post("/eval", response_model=EvalResponse)
    def eval_(req: EvalRequest) -> EvalResponse:
        result = SegmentationResult.load(req.pred_dir)
        scene = load_scene(req.scene_manifest)
        report = evaluate(
            result, scene, with_chamfer=req.with_chamfer,
            chamfer_max_points=req.chamfer_max_points, seed=req.seed,
            expected_ids=req.expected_objects)
        out_path = Path(req.out_path or Path(req.pred_dir) / "metrics.json")
        report.save(out_path)
        return EvalResponse(out_path=str(out_path),
                            report=report.to_json_dict())

    @app.post("/synth", response_model=SynthResponse)
    def synth(req: SynthRequest) -> SynthResponse:
        spec = req.spec.to_engine()
        manifest_path = write_synth_scene(spec, req.out_dir)
        _write_echo(Path(req.out_dir), spec.to_dict())
        return SynthResponse(manifest_path=str(manifest_path),
                             n_objects=spec.n_objects, n_views=spec.n_views)

    @app.post("/export-object", response_model=ExportObjectResponse)
    def export_object(req: ExportObjectRequest) -> ExportObjectResponse:
        result = SegmentationResult.load(req.result_dir)
        obj = extract_object(result, req.image_index, req.local_id)
        classes = np.full(obj.points.shape[0], obj.class_id, dtype="uint16")
        write_cloud_ply(req.out_path, obj.points, classes, obj.sources)
        return ExportObjectResponse(
            out_path=str(req.out_path), class_id=obj.class_id,
            is_background=obj.is_background, n_points=int(obj.points.shape[0]))

    return app


app = create_app()
