"""coleclip-desk.

Desk-scale open-domain continual learning for a frozen toy vision-language
model: task prompts on the image side, low-rank adapters on the text side and
a cross-domain class vocabulary shared between tasks.
"""

__version__ = "0.1.0"

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import Config, ConfigError
from .encoders import DualEncoder, EncoderError
from .inference import PredictionRequest, evaluate_dataset, predict
from .metrics import AccuracyMatrix, MetricReport, compute_report
from .models import (
    BackboneConfig,
    ExperimentConfig,
    ImageSample,
    Mode,
    StreamConfig,
    TaskSpec,
    TaskStream,
    TrainConfig,
)
from .state import ModelState
from .vocabulary import ClassVocabulary, VocabularyError

__all__ = [
    "AccuracyMatrix",
    "BackboneConfig",
    "CheckpointError",
    "ClassVocabulary",
    "Config",
    "ConfigError",
    "DualEncoder",
    "EncoderError",
    "ExperimentConfig",
    "ImageSample",
    "MetricReport",
    "Mode",
    "ModelState",
    "PredictionRequest",
    "StreamConfig",
    "TaskSpec",
    "TaskStream",
    "TrainConfig",
    "VocabularyError",
    "compute_report",
    "evaluate_dataset",
    "load_checkpoint",
    "predict",
    "save_checkpoint",
]
