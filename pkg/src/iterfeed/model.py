"""Recognizer + feedback container and the checkpoint file format."""

from __future__ import annotations

import hashlib
from pathlib import Path
from typing import Any

import numpy as np
import torch
import torch.nn as nn

from . import config as C
from .charset import Charset
from .feedback import FeedbackNet
from .recognizer import Recognizer

CHECKPOINT_FORMAT = 1


class IterativeRecognizer(nn.Module):
    def __init__(self, cfg: C.ModelConfig | None = None, seed: int | None = None):
        super().__init__()
        self.cfg = cfg = cfg or C.ModelConfig()
        self.charset = Charset(cfg.symbols)
        # separate seed streams so recognizer init does not depend on feedback config
        if seed is not None:
            torch.manual_seed(seed)
        self.recognizer = Recognizer(self.charset.size, cfg.recognizer)
        if seed is not None:
            torch.manual_seed(seed + 1_000_003)
        self.feedback = FeedbackNet(self.charset.size, cfg.feedback, cfg.recognizer.channels)

    @property
    def injection_block(self) -> int:
        return self.cfg.feedback.injection_block

    @property
    def k_max(self) -> int:
        return self.cfg.recognizer.k_max

    def encode_labels(self, labels: list[str]) -> list[list[int]]:
        return [self.charset.encode(w, strict=False) for w in labels]


def build_model(cfg: C.ModelConfig | None = None, seed: int = 0) -> IterativeRecognizer:
    return IterativeRecognizer(cfg, seed=seed)


def save_checkpoint(model: IterativeRecognizer, path: str | Path,
                    extra: dict[str, Any] | None = None) -> None:
    """Single file: format version, config manifest, and named arrays under
    ``recognizer/`` and ``feedback/`` namespaces."""
    arrays = {}
    for prefix, module in (("recognizer", model.recognizer), ("feedback", model.feedback)):
        for name, t in module.state_dict().items():
            arrays[f"{prefix}/{name}"] = t.detach().cpu().clone()
    payload = {"format": CHECKPOINT_FORMAT, "config": C.to_dict(model.cfg),
               "arrays": arrays, "extra": extra or {}}
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)


def load_checkpoint(path: str | Path) -> tuple[IterativeRecognizer, dict[str, Any]]:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"unsupported checkpoint format {payload.get('format')!r}")
    cfg = C.model_config_from_dict(payload["config"])
    model = IterativeRecognizer(cfg)
    arrays = payload["arrays"]
    for prefix, module in (("recognizer", model.recognizer), ("feedback", model.feedback)):
        sd = {k[len(prefix) + 1:]: v for k, v in arrays.items() if k.startswith(prefix + "/")}
        module.load_state_dict(sd)
    return model, payload.get("extra", {})


def state_digest(model: nn.Module) -> str:
    """SHA-256 over every named tensor (parameters and buffers), in name order."""
    h = hashlib.sha256()
    for name, t in sorted(model.state_dict().items()):
        h.update(name.encode())
        h.update(np.ascontiguousarray(t.detach().cpu().numpy()).tobytes())
    return h.hexdigest()


def count_params(params) -> int:
    return sum(p.numel() for p in params)
