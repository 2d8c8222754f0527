"""Dataclass configs for rendering, model architecture and training.

Defaults follow the full-size architecture (64/128/256/256/256 backbone,
256-unit recurrent layers, 256-dim latent). ``small_model_config`` gives a
narrower variant with the same block layout for single-CPU experiments.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

# Output (H, W) of each backbone block for a 32x100 input, and its stride.
BLOCK_STRIDES = ((2, 2), (2, 2), (2, 1), (2, 1), (2, 1))
BLOCK_SPATIAL = ((16, 50), (8, 25), (4, 25), (2, 25), (1, 25))
IMAGE_HEIGHT, IMAGE_WIDTH = 32, 100


@dataclass
class RenderStyle:
    jitter: float = 1.0  # px, per-character offset amplitude
    noise_sigma: float = 0.06
    contrast: tuple[float, float] = (0.5, 1.0)  # min/max ink-background gap
    stroke_width: tuple[float, float] = (1.3, 2.1)
    slant: tuple[float, float] = (-0.2, 0.2)
    min_advance: float = 8.0
    max_advance: float = 13.0
    margin: float = 2.0

    @classmethod
    def clean(cls) -> "RenderStyle":
        return cls(jitter=0.0, noise_sigma=0.0, contrast=(1.0, 1.0),
                   stroke_width=(1.6, 1.6), slant=(0.0, 0.0))


@dataclass
class RecognizerConfig:
    channels: tuple[int, ...] = (64, 128, 256, 256, 256)
    lstm_hidden: int = 256
    dec_hidden: int = 256
    attn_dim: int = 256
    emb_dim: int = 128
    k_max: int = 12


@dataclass
class FeedbackConfig:
    emb_dim: int = 128
    enc_hidden: int = 256
    z_dim: int = 256
    mlp_hidden: int = 256
    aux_hidden: int = 256
    injection_block: int = 3
    variant: str = "local"  # local | global
    kl_reduction: str = "sum"  # sum | mean
    stochastic_inference: bool = False
    deterministic: bool = False  # Deterministic-Feedback baseline: no latent, no aux

    def __post_init__(self):
        if not 1 <= self.injection_block <= 5:
            raise ValueError(f"injection_block must be in 1..5, got {self.injection_block}")
        if self.variant not in ("local", "global"):
            raise ValueError(f"variant must be local or global, got {self.variant!r}")
        if self.kl_reduction not in ("sum", "mean"):
            raise ValueError(f"kl_reduction must be sum or mean, got {self.kl_reduction!r}")


@dataclass
class ModelConfig:
    symbols: str = "abcdefghijklmnopqrstuvwxyz"
    recognizer: RecognizerConfig = field(default_factory=RecognizerConfig)
    feedback: FeedbackConfig = field(default_factory=FeedbackConfig)


@dataclass
class LossWeights:
    lambda1: float = 1.0
    lambda2: float = 1.0
    lambda3: float = 50.0
    lambda4: float = 0.5

    def __post_init__(self):
        for name in ("lambda1", "lambda2", "lambda3", "lambda4"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")


@dataclass
class TrainConfig:
    alpha1: float = 1.0
    alpha2: float = 1e-3
    grad_clip: float = 5.0
    batch_size: int = 64
    warmup_T: int = 3000
    warmup_F_textonly: int = 1500
    warmup_F_full: int = 1500
    joint: int = 3000
    joint_lr_scale: float = 0.01
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    # ablation switches
    use_lc: bool = True
    use_aux: bool = True
    use_G: bool = True
    log_every: int = 50

    def __post_init__(self):
        if self.alpha1 <= 0 or self.alpha2 <= 0:
            raise ValueError("learning rates must be positive")
        for name in ("warmup_T", "warmup_F_textonly", "warmup_F_full", "joint"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    def effective_weights(self) -> LossWeights:
        w = dataclasses.replace(self.weights)
        if not self.use_lc:
            w.lambda4 = 0.0
        if not self.use_aux:
            w.lambda2 = 0.0
        return w


def small_model_config(**feedback_overrides) -> ModelConfig:
    """Narrow widths, identical block schedule. Trains in minutes on one CPU."""
    return ModelConfig(
        recognizer=RecognizerConfig(channels=(16, 32, 48, 48, 48), lstm_hidden=64,
                                    dec_hidden=96, attn_dim=64, emb_dim=32),
        feedback=FeedbackConfig(emb_dim=32, enc_hidden=64, z_dim=32, mlp_hidden=64,
                                aux_hidden=96, **feedback_overrides),
    )


def to_dict(cfg) -> dict[str, Any]:
    return dataclasses.asdict(cfg)


def _build(cls, data: dict[str, Any]):
    kwargs = {}
    hints = {f.name: f for f in dataclasses.fields(cls)}
    for key, value in data.items():
        if key not in hints:
            raise ValueError(f"unknown {cls.__name__} field {key!r}")
        sub = _NESTED.get((cls, key))
        if sub is not None and isinstance(value, dict):
            value = _build(sub, value)
        elif isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    return cls(**kwargs)


_NESTED = {
    (ModelConfig, "recognizer"): RecognizerConfig,
    (ModelConfig, "feedback"): FeedbackConfig,
    (TrainConfig, "weights"): LossWeights,
}


def model_config_from_dict(data: dict[str, Any]) -> ModelConfig:
    return _build(ModelConfig, data)


def train_config_from_dict(data: dict[str, Any]) -> TrainConfig:
    return _build(TrainConfig, data)


def render_style_from_dict(data: dict[str, Any]) -> RenderStyle:
    return _build(RenderStyle, data)


def load_config_file(path: str | Path) -> tuple[ModelConfig, TrainConfig]:
    """Read a JSON file with optional ``model`` and ``train`` sections."""
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    model = data.get("model")
    if model == "small":
        mcfg = small_model_config()
    else:
        mcfg = model_config_from_dict(model or {})
    return mcfg, train_config_from_dict(data.get("train", {}))
