"""Training orchestration, checkpoints, inference, self-test and CLI."""
from .checkpoint import Checkpoint, CheckpointError
from .detector import MODES, BaselineScorer, Detector, residual_map
from .infer import InferenceResult, run_inference
from .selftest import SelftestReport, run_selftest
from .train import (
    Models, StageError, build_models, detector_from_checkpoint, latest_checkpoint, resolve_dataset,
    run_training, stage_path,
)

__all__ = [
    "BaselineScorer", "Checkpoint", "CheckpointError", "Detector", "InferenceResult", "MODES", "Models",
    "SelftestReport", "StageError", "build_models", "detector_from_checkpoint", "latest_checkpoint",
    "residual_map", "resolve_dataset", "run_inference", "run_selftest", "run_training", "stage_path",
]
