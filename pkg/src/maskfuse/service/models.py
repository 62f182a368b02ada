"""Request and response bodies for the HTTP service."""

from __future__ import annotations

from pydantic import BaseModel, ConfigDict, Field

from ..config import PipelineConfig
from ..synth import SynthSpec


class _StrictModel(BaseModel):
    """Unknown keys are rejected so config typos fail loudly."""

    model_config = ConfigDict(extra="forbid")


class PairPolicyModel(_StrictModel):
    max_angle_deg: float | None = None
    max_translation_m: float | None = None
    k_nearest: int | None = None


class PipelineConfigModel(_StrictModel):
    """Pipeline tunables; omitted fields take engine defaults."""

    tau2d_percentile: float | None = None
    tau2d_override: float | None = None
    min_match_confidence: float | None = None
    max_matches_per_pair: int | None = None
    pair_policy: PairPolicyModel | None = None
    tau3d: float | None = None
    min_point_confidence: float | None = None
    max_cloud_points: int | None = None
    reach_radius: float | None = None
    workspace_origin: tuple[float, float, float] | None = None
    background_mask_paths: dict[int, str] | None = None
    seed: int | None = None
    threads: int | None = None
    debug_partitions: bool | None = None

    def to_engine(self) -> PipelineConfig:
        doc = {k: v for k, v in self.model_dump().items() if v is not None}
        if self.pair_policy is not None:
            doc["pair_policy"] = {
                k: v for k, v in self.pair_policy.model_dump().items()
                if v is not None}
        return PipelineConfig.from_dict(doc)


class SynthSpecModel(_StrictModel):
    """Synthetic scene parameters; omitted fields take engine defaults."""

    n_objects: int | None = None
    n_views: int | None = None
    width: int | None = None
    height: int | None = None
    box_size_range: tuple[float, float] | None = None
    sphere_radius_range: tuple[float, float] | None = None
    table_extent: float | None = None
    min_gap: float | None = None
    ring_radius: float | None = None
    ring_height: float | None = None
    focal: float | None = None
    overseg_k: int | None = None
    match_dropout: float | None = None
    spurious_rate: float | None = None
    pointmap_noise_sigma: float | None = None
    seed: int | None = None

    def to_engine(self) -> SynthSpec:
        doc = {k: v for k, v in self.model_dump().items() if v is not None}
        return SynthSpec.from_dict(doc)


class SegmentRequest(_StrictModel):
    scene_manifest: str
    out_dir: str
    config: PipelineConfigModel = Field(default_factory=PipelineConfigModel)


class SegmentResponse(_StrictModel):
    out_dir: str
    n_classes: int
    n_foreground_classes: int
    elapsed_s: float


class EvalRequest(_StrictModel):
    pred_dir: str
    scene_manifest: str
    out_path: str | None = None
    with_chamfer: bool = True
    chamfer_max_points: int | None = None
    seed: int = 0
    expected_objects: list[int] | None = None


class EvalResponse(_StrictModel):
    out_path: str
    report: dict


class SynthRequest(_StrictModel):
    out_dir: str
    spec: SynthSpecModel = Field(default_factory=SynthSpecModel)


class SynthResponse(_StrictModel):
    manifest_path: str
    n_objects: int
    n_views: int


class ExportObjectRequest(_StrictModel):
    result_dir: str
    image_index: int
    local_id: int
    out_path: str


class ExportObjectResponse(_StrictModel):
    out_path: str
    class_id: int
    is_background: bool
    n_points: int


class HealthResponse(_StrictModel):
    status: str
    version: str
