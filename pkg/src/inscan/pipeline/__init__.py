from inscan.pipeline.backends import (
    BaselineClassifier,
    BaselineDetector,
    ClassifierBackend,
    DetectorBackend,
    StaticDetector,
    ThicknessBands,
    baseline_classify,
    baseline_detect,
)
from inscan.pipeline.inference import (
    InsulationReport,
    Patch,
    PipelineError,
    RegionResult,
    extract_patches,
    run_two_phase,
)
from inscan.pipeline.nms import nms
from inscan.pipeline.trainer_config import TrainingConfig, emit_training_config, parse_training_config

__all__ = [
    "BaselineClassifier",
    "BaselineDetector",
    "ClassifierBackend",
    "DetectorBackend",
    "InsulationReport",
    "Patch",
    "PipelineError",
    "RegionResult",
    "StaticDetector",
    "ThicknessBands",
    "TrainingConfig",
    "baseline_classify",
    "baseline_detect",
    "emit_training_config",
    "extract_patches",
    "nms",
    "parse_training_config",
    "run_two_phase",
]
