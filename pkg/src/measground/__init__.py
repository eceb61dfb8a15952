"""measground: measurement-grounded imaging data tooling."""

__version__ = "0.1.0"

from .capture import (
    CameraMetadata,
    CaptureRef,
    RawCapture,
    ScenePatch,
    SyntheticSceneSpec,
    load_capture_bundle,
    save_capture_bundle,
    synth_capture,
)
from .measxyz import MeasXyzImage, demosaic_bilinear, meas_xyz_transform, normalize_mosaic
from .isp import (
    RenderedRgb,
    RenderParams,
    make_bracket,
    quantize,
    render_proxy,
    srgb_eotf,
    srgb_oetf,
)
from .lost_signal import LostSignalReport, analyze_render, invert_render, lost_signal_residual
from .bracketsup import (
    CandidateRecord,
    InstructionRecord,
    TrainingSample,
    aggregate,
    annotate,
    build_samples,
)
from .dataset import BalanceCaps, DatasetManifest, balance, remove_placeholders, score_filter
from .benchmark import (
    BenchmarkExample,
    CapabilityDimension,
    DisjointnessReport,
    holdout_split,
    tag_capability,
    verify_disjointness,
)
from .metrics import MetricReport, bleu, evaluate_run, judge, rouge_l, tokenize
from .probe import (
    MetaVector,
    ProbeStack,
    forward,
    grad_check,
    serialize_metadata_question,
)

__all__ = [
    "__version__",
    "CameraMetadata", "CaptureRef", "RawCapture", "ScenePatch", "SyntheticSceneSpec",
    "load_capture_bundle", "save_capture_bundle", "synth_capture",
    "MeasXyzImage", "demosaic_bilinear", "meas_xyz_transform", "normalize_mosaic",
    "RenderedRgb", "RenderParams", "make_bracket", "quantize", "render_proxy",
    "srgb_eotf", "srgb_oetf",
    "LostSignalReport", "analyze_render", "invert_render", "lost_signal_residual",
    "CandidateRecord", "InstructionRecord", "TrainingSample", "aggregate", "annotate",
    "build_samples",
    "BalanceCaps", "DatasetManifest", "balance", "remove_placeholders", "score_filter",
    "BenchmarkExample", "CapabilityDimension", "DisjointnessReport", "holdout_split",
    "tag_capability", "verify_disjointness",
    "MetricReport", "bleu", "evaluate_run", "judge", "rouge_l", "tokenize",
    "MetaVector", "ProbeStack", "forward", "grad_check", "serialize_metadata_question",
]
