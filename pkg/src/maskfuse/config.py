"""Pipeline configuration."""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field, fields

from .errors import ConfigError


@dataclass(frozen=True)
class PairPolicy:
    """Which image pairs are considered for 2D matching.

    Pairs must pass both hard gates (relative rotation angle and camera
    distance); each image then keeps its k_nearest best-scored partners,
    score = angle/max_angle_deg + distance/max_translation_m, and a pair
    survives if either endpoint keeps it.
    """

    max_angle_deg: float = 75.0
    max_translation_m: float = 1.5
    k_nearest: int = 4

    def __post_init__(self) -> None:
        if not 0.0 < self.max_angle_deg <= 180.0:
            raise ConfigError("max_angle_deg must be in (0, 180]")
        if self.max_translation_m <= 0.0:
            raise ConfigError("max_translation_m must be positive")
        if self.k_nearest < 1:
            raise ConfigError("k_nearest must be at least 1")


@dataclass(frozen=True)
class PipelineConfig:
    """All tunables of the segmentation pipeline.

    `threads` is a runtime resource knob: results are identical for any
    value, so it is excluded from echoed configuration.
    """

    tau2d_percentile: float = 78.0
    tau2d_override: float | None = None
    min_match_confidence: float = 0.5
    max_matches_per_pair: int = 10000
    pair_policy: PairPolicy = field(default_factory=PairPolicy)
    tau3d: float = 5e-4
    min_point_confidence: float = 0.5
    max_cloud_points: int = 50000
    reach_radius: float = 1.5
    workspace_origin: tuple[float, float, float] | None = None
    background_mask_paths: dict[int, str] | None = None
    seed: int = 0
    threads: int = 1
    debug_partitions: bool = False

    def __post_init__(self) -> None:
        if not 0.0 < self.tau2d_percentile <= 100.0:
            raise ConfigError("tau2d_percentile must be in (0, 100]")
        if self.tau2d_override is not None and not 0.0 <= self.tau2d_override <= 1.0:
            raise ConfigError("tau2d_override must lie in [0, 1]")
        if not 0.0 <= self.min_match_confidence <= 1.0:
            raise ConfigError("min_match_confidence must lie in [0, 1]")
        if self.max_matches_per_pair < 1:
            raise ConfigError("max_matches_per_pair must be at least 1")
        if not 0.0 <= self.min_point_confidence <= 1.0:
            raise ConfigError("min_point_confidence must lie in [0, 1]")
        if self.max_cloud_points < 1:
            raise ConfigError("max_cloud_points must be at least 1")
        if self.reach_radius <= 0.0:
            raise ConfigError("reach_radius must be positive")
        if self.threads < 0:
            raise ConfigError("threads must be >= 0 (0 = auto)")
        if self.workspace_origin is not None:
            origin = tuple(float(v) for v in self.workspace_origin)
            if len(origin) != 3:
                raise ConfigError("workspace_origin must have 3 components")
            object.__setattr__(self, "workspace_origin", origin)
        if self.background_mask_paths is not None:
            paths = {int(k): str(v)
                     for k, v in self.background_mask_paths.items()}
            object.__setattr__(self, "background_mask_paths", paths)

    @property
    def resolved_threads(self) -> int:
        return self.threads if self.threads > 0 else (os.cpu_count() or 1)

    def echo_dict(self) -> dict:
        """Resolved configuration for output echoes (excludes `threads`)."""
        doc = asdict(self)
        doc.pop("threads")
        doc["workspace_origin"] = (
            None if self.workspace_origin is None else list(self.workspace_origin))
        doc["background_mask_paths"] = (
            None if self.background_mask_paths is None
            else {str(k): v for k, v in sorted(self.background_mask_paths.items())})
        doc["pair_policy"] = asdict(self.pair_policy)
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kwargs = dict(doc)
        if "pair_policy" in kwargs and isinstance(kwargs["pair_policy"], dict):
            pp = kwargs["pair_policy"]
            pp_known = {f.name for f in fields(PairPolicy)}
            pp_unknown = set(pp) - pp_known
            if pp_unknown:
                raise ConfigError(
                    f"unknown pair_policy keys: {sorted(pp_unknown)}")
            kwargs["pair_policy"] = PairPolicy(**pp)
        if kwargs.get("workspace_origin") is not None:
            kwargs["workspace_origin"] = tuple(kwargs["workspace_origin"])
        if kwargs.get("background_mask_paths") is not None:
            try:
                kwargs["background_mask_paths"] = {
                    int(k): str(v)
                    for k, v in kwargs["background_mask_paths"].items()}
            except (AttributeError, ValueError) as e:
                raise ConfigError(
                    "background_mask_paths must map image index to path") from e
        try:
            return cls(**kwargs)
        except TypeError as e:
            raise ConfigError(f"invalid config: {e}") from e
