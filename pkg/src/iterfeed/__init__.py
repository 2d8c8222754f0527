"""Iterative text recognition with a text-to-feature-map feedback loop."""

from .charset import Charset
from .config import FeedbackConfig, ModelConfig, RecognizerConfig, TrainConfig, small_model_config
from .model import IterativeRecognizer, build_model, load_checkpoint, save_checkpoint

__all__ = [
    "Charset", "FeedbackConfig", "ModelConfig", "RecognizerConfig", "TrainConfig",
    "small_model_config", "IterativeRecognizer", "build_model", "load_checkpoint",
    "save_checkpoint",
]
