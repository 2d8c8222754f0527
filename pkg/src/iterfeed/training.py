"""Loss terms and the warm-up + joint training schedule."""

from __future__ import annotations

import contextlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
import torch
import torch.nn as nn

from .charset import PAD
from .conditioner import modulate
from .config import LossWeights, TrainConfig
from .feedback import kl_divergence, sample
from .model import IterativeRecognizer, save_checkpoint
from .recognizer import targets_tensor

log = logging.getLogger(__name__)

PHASES = ("warmup_T", "warmup_F_textonly", "warmup_F_full", "joint")


class NonFiniteLossError(FloatingPointError):
    def __init__(self, term: str, value: float):
        super().__init__(f"non-finite loss term {term!r} ({value})")
        self.term = term


# -- losses ------------------------------------------------------------------

def ce_loss(logp: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    """Summed negative log-likelihood of ``targets`` (EOS included, PAD masked).

    ``logp`` is [B, K, C] (or [K, C]) log-probabilities; returns one value per
    sequence.
    """
    squeeze = logp.dim() == 2
    if squeeze:
        logp, targets = logp.unsqueeze(0), targets.unsqueeze(0)
    mask = targets != PAD
    if not bool(mask.any(dim=1).all()):
        raise ValueError("target of length 0")
    k = targets.shape[1]
    if logp.shape[1] < k:
        raise ValueError(f"prediction covers {logp.shape[1]} steps, target needs {k}")
    picked = logp[:, :k].gather(2, targets.clamp(min=0).unsqueeze(-1)).squeeze(-1)
    nll = -torch.where(mask, picked, torch.zeros_like(picked)).sum(dim=1)
    return nll[0] if squeeze else nll


def monotonic_constraint(loss_curr: torch.Tensor, loss_prev: torch.Tensor) -> torch.Tensor:
    """max(0, L_curr - L_prev); the previous-iteration loss is a constant baseline."""
    if not torch.is_tensor(loss_curr):
        loss_curr = torch.as_tensor(float(loss_curr))
    loss_prev = torch.as_tensor(loss_prev).detach()
    return torch.relu(loss_curr - loss_prev)


@dataclass
class LossTerms:
    total: torch.Tensor
    terms: dict[str, float] = field(default_factory=dict)


@contextlib.contextmanager
def frozen(*modules: nn.Module):
    """Disable gradients for the given modules' parameters inside the block."""
    params = [p for m in modules for p in m.parameters()]
    saved = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad_(False)
    try:
        yield
    finally:
        for p, r in zip(params, saved):
            p.requires_grad_(r)


def _check_finite(terms: dict[str, torch.Tensor]) -> None:
    for name, v in terms.items():
        if not bool(torch.isfinite(v).all()):
            raise NonFiniteLossError(name, float(v.detach().float().mean()))


def recognizer_loss(model: IterativeRecognizer, images: torch.Tensor,
                    targets: torch.Tensor) -> torch.Tensor:
    """Teacher-forced cross-entropy of T, averaged over the batch."""
    return ce_loss(model.recognizer(images, targets), targets).mean()


def feedback_loss(model: IterativeRecognizer, images: torch.Tensor, truth_tokens: list[list[int]],
                  weights: LossWeights, noise: torch.Tensor | None = None,
                  generator: torch.Generator | None = None) -> LossTerms:
    """lambda1*CE(Y', Y_hat) + lambda2*CE(Y_bar, Y_hat) + lambda3*KL + lambda4*L_c.

    The recognizer is run in eval mode with its parameters frozen: Y is the
    free-running greedy prediction, Y' is decoded teacher-forced from the
    modulated map, and gradients reach only the feedback network.
    """
    rec, fb = model.recognizer, model.feedback
    block = model.injection_block
    targets = targets_tensor(truth_tokens)
    was_training = rec.training
    rec.eval()
    try:
        with frozen(rec):
            with torch.no_grad():
                psi = rec.encode_backbone(images, block)
                H0 = rec.head(psi)
                y_pred = rec.recognize(H0)
                loss_prev = ce_loss(rec.decoder.teacher_forced(H0, targets), targets)
            y_enc = fb.encode(y_pred)
            terms: dict[str, torch.Tensor] = {}
            if fb.variational:
                yhat_enc = fb.encode(truth_tokens)
                post = fb.posterior(y_enc, yhat_enc)
                prior = fb.prior(y_enc)
                if noise is None:
                    noise = torch.randn(post.mu.shape, generator=generator, dtype=post.mu.dtype)
                z = sample(post, noise)
                params = fb.predict_params(y_enc, z)
            else:
                params = fb.predict_params(y_enc, None)
            psi_hat = modulate(psi, params)
            loss_curr = ce_loss(rec.decoder.teacher_forced(rec.head(psi_hat), targets), targets)
            terms["ce_next"] = loss_curr.mean()
            if fb.variational:
                terms["ce_aux"] = ce_loss(fb.aux_decode(y_enc, z, targets), targets).mean()
                terms["kl"] = kl_divergence(post, prior, fb.cfg.kl_reduction).mean()
            terms["constraint"] = monotonic_constraint(loss_curr, loss_prev).mean()
    finally:
        rec.train(was_training)
    _check_finite(terms)
    lam = {"ce_next": weights.lambda1, "ce_aux": weights.lambda2, "kl": weights.lambda3,
           "constraint": weights.lambda4}
    total = sum(lam[k] * v for k, v in terms.items())
    out = {k: float(v.detach()) for k, v in terms.items()}
    out["ce_prev"] = float(loss_prev.mean())
    out["total"] = float(total.detach())
    return LossTerms(total, out)


def textonly_loss(model: IterativeRecognizer, hypotheses: list[list[int]],
                  truths: list[list[int]], weights: LossWeights,
                  noise: torch.Tensor | None = None,
                  generator: torch.Generator | None = None) -> LossTerms:
    """lambda2*CE(Y_bar, Y_hat) + lambda3*KL on text pairs; F_P is not involved."""
    fb = model.feedback
    if not fb.variational:
        raise ValueError("text-only loss needs the variational feedback network")
    targets = targets_tensor(truths)
    with frozen(fb.param_decoder):
        y_enc = fb.encode(hypotheses)
        post = fb.posterior(y_enc, fb.encode(truths))
        prior = fb.prior(y_enc)
        if noise is None:
            noise = torch.randn(post.mu.shape, generator=generator, dtype=post.mu.dtype)
        z = sample(post, noise)
        terms = {"ce_aux": ce_loss(fb.aux_decode(y_enc, z, targets), targets).mean(),
                 "kl": kl_divergence(post, prior, fb.cfg.kl_reduction).mean()}
    _check_finite(terms)
    total = weights.lambda2 * terms["ce_aux"] + weights.lambda3 * terms["kl"]
    out = {k: float(v.detach()) for k, v in terms.items()}
    out["total"] = float(total.detach())
    return LossTerms(total, out)


# -- training loop -------------------------------------------------------------

@dataclass
class TrainData:
    """Tensors prepared once from image samples and error pairs."""

    images: torch.Tensor | None = None
    tokens: list[list[int]] = field(default_factory=list)
    ids: list[str] = field(default_factory=list)
    g_hyp: list[list[int]] = field(default_factory=list)
    g_truth: list[list[int]] = field(default_factory=list)

    @classmethod
    def build(cls, model: IterativeRecognizer, samples=None, corpus=None) -> "TrainData":
        d = cls()
        if samples:
            d.images = torch.from_numpy(np.stack([s.image for s in samples])).unsqueeze(1)
            d.tokens = model.encode_labels([s.label for s in samples])
            d.ids = [s.id for s in samples]
        if corpus:
            pairs = getattr(corpus, "pairs", corpus)
            d.g_hyp = model.encode_labels([p.hypothesis for p in pairs])
            d.g_truth = model.encode_labels([p.truth for p in pairs])
        return d


class Trainer:
    """Runs the warm-up phases and the joint loop.

    Each phase draws batches from its own generator seeded by (seed, phase),
    so a phase's outcome depends only on the model state it starts from.
    """

    def __init__(self, model: IterativeRecognizer, cfg: TrainConfig,
                 log_path: str | Path | None = None,
                 on_record: Callable[[dict], None] | None = None):
        self.model = model
        self.cfg = cfg
        self.weights = cfg.effective_weights()
        self.opt_T = torch.optim.Adadelta(model.recognizer.parameters(), lr=cfg.alpha1,
                                          rho=0.95, eps=1e-6)
        self.opt_F = torch.optim.Adam(model.feedback.parameters(), lr=cfg.alpha2,
                                      betas=(0.9, 0.999))
        self.records: list[dict] = []
        self.log_path = Path(log_path) if log_path else None
        self.on_record = on_record
        self.step = 0

    # single updates, usable on their own for auditing
    def step_recognizer(self, images, targets) -> dict:
        self.model.recognizer.train()
        self.opt_T.zero_grad(set_to_none=True)
        loss = recognizer_loss(self.model, images, targets)
        _check_finite({"ce": loss})
        loss.backward()
        self.opt_T.step()
        return {"ce": float(loss.detach())}

    def step_feedback(self, images, truth_tokens, generator=None) -> dict:
        self.opt_F.zero_grad(set_to_none=True)
        out = feedback_loss(self.model, images, truth_tokens, self.weights, generator=generator)
        out.total.backward()
        out.terms["grad_norm"] = self._clip(self.model.feedback.parameters())
        self.opt_F.step()
        return out.terms

    def step_textonly(self, hyps, truths, generator=None) -> dict:
        self.opt_F.zero_grad(set_to_none=True)
        out = textonly_loss(self.model, hyps, truths, self.weights, generator=generator)
        out.total.backward()
        out.terms["grad_norm"] = self._clip(self.model.feedback.text_params())
        self.opt_F.step()
        return out.terms

    def _clip(self, params: Iterable[nn.Parameter]) -> float:
        params = [p for p in params if p.grad is not None]
        if not params:
            return 0.0
        return float(torch.nn.utils.clip_grad_norm_(params, self.cfg.grad_clip))

    def _record(self, phase: str, terms: dict) -> None:
        self.step += 1
        rec = {"step": self.step, "phase": phase, **terms}
        if self.step % self.cfg.log_every == 0:
            self.records.append(rec)
            if self.log_path:
                with open(self.log_path, "a", encoding="utf-8") as f:
                    f.write(json.dumps(rec) + "\n")
        if self.on_record:
            self.on_record(rec)

    def run(self, data: TrainData, phases: Sequence[str] = PHASES,
            checkpoint_on_error: str | Path | None = None,
            resumed: bool = False) -> IterativeRecognizer:
        """Run the requested phases in schedule order.

        ``joint`` without the preceding warm-ups is only accepted when the
        model was ``resumed`` from a checkpoint (or the warm-up counts are 0).
        """
        cfg, model = self.cfg, self.model
        phases = list(phases)
        bad = [p for p in phases if p not in PHASES]
        if bad:
            raise ValueError(f"unknown phases {bad}")
        variational = model.feedback.variational
        uses_G = cfg.use_G and variational
        if "joint" in phases and not resumed:
            active = [p for p in PHASES[:-1] if getattr(cfg, p) > 0
                      and (p != "warmup_F_textonly" or uses_G)]
            missing = [p for p in active if p not in phases]
            if missing:
                raise ValueError(f"joint phase needs warm-ups {missing} or a resumed checkpoint")
        needs_G = uses_G and (
            ("warmup_F_textonly" in phases and cfg.warmup_F_textonly > 0)
            or ("joint" in phases and cfg.joint > 0))
        if needs_G and not data.g_hyp:
            raise ValueError("error corpus G is required for the requested phases")
        needs_D = any(getattr(cfg, p) > 0 for p in phases if p != "warmup_F_textonly")
        if needs_D and data.images is None:
            raise ValueError("image data D is required for the requested phases")
        try:
            for phase in PHASES:
                if phase not in phases:
                    continue
                gen = torch.Generator().manual_seed(cfg.seed * 7919 + PHASES.index(phase))
                if phase == "warmup_T":
                    self._set_lr_T(cfg.alpha1)
                    for _ in range(cfg.warmup_T):
                        x, t, _ = self._d_batch(data, gen)
                        self._record(phase, self.step_recognizer(x, t))
                elif phase == "warmup_F_textonly":
                    if not uses_G:
                        continue
                    for _ in range(cfg.warmup_F_textonly):
                        h, y = self._g_batch(data, gen)
                        self._record(phase, self.step_textonly(h, y, gen))
                elif phase == "warmup_F_full":
                    for _ in range(cfg.warmup_F_full):
                        x, _, toks = self._d_batch(data, gen)
                        self._record(phase, self.step_feedback(x, toks, gen))
                else:
                    self._set_lr_T(cfg.alpha1 * cfg.joint_lr_scale)
                    for _ in range(cfg.joint):
                        x, t, toks = self._d_batch(data, gen)
                        terms = {"ce_T": self.step_recognizer(x, t)["ce"]}
                        terms.update(self.step_feedback(x, toks, gen))
                        if uses_G:
                            h, y = self._g_batch(data, gen)
                            terms["textonly"] = self.step_textonly(h, y, gen)["total"]
                        self._record(phase, terms)
        except NonFiniteLossError:
            if checkpoint_on_error:
                save_checkpoint(model, checkpoint_on_error, {"aborted_at_step": self.step})
            raise
        model.eval()
        return model

    def _set_lr_T(self, lr: float) -> None:
        for g in self.opt_T.param_groups:
            g["lr"] = lr

    def _d_batch(self, data: TrainData, gen):
        n = data.images.shape[0]
        idx = torch.randint(0, n, (min(self.cfg.batch_size, n),), generator=gen).tolist()
        toks = [data.tokens[i] for i in idx]
        return data.images[idx], targets_tensor(toks), toks

    def _g_batch(self, data: TrainData, gen):
        n = len(data.g_hyp)
        idx = torch.randint(0, n, (min(self.cfg.batch_size, n),), generator=gen).tolist()
        return [data.g_hyp[i] for i in idx], [data.g_truth[i] for i in idx]


def train(model: IterativeRecognizer, cfg: TrainConfig, samples=None, corpus=None,
          phases: Sequence[str] = PHASES, log_path=None,
          checkpoint_on_error=None) -> IterativeRecognizer:
    torch.manual_seed(cfg.seed)
    data = TrainData.build(model, samples, corpus)
    return Trainer(model, cfg, log_path).run(data, phases, checkpoint_on_error)
