"""maskfuse: multi-view 2D instance mask fusion into consistent 3D classes."""

__version__ = "0.1.0"

from .config import PairPolicy, PipelineConfig
from .errors import (
    ConfigError,
    EngineError,
    EvalError,
    FormatError,
    InternalError,
    SceneError,
)
from .graph import MaskGraph, Partition, pack_vertex, unpack_vertex
from .metrics import MetricsReport, evaluate
from .pipeline import SegmentationResult, extract_object, run
from .synth import SynthSpec, synthesize, write_synth_scene

__all__ = [
    "PairPolicy", "PipelineConfig",
    "ConfigError", "EngineError", "EvalError", "FormatError",
    "InternalError", "SceneError",
    "MaskGraph", "Partition", "pack_vertex", "unpack_vertex",
    "MetricsReport", "evaluate",
    "SegmentationResult", "extract_object", "run",
    "SynthSpec", "synthesize", "write_synth_scene",
    "__version__",
]
