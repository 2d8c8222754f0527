"""Iterative inference, word recognition accuracy, evaluation reports and ablations."""

from __future__ import annotations

import copy
import dataclasses
import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from . import config as C
from .charset import EOS, PAD
from .conditioner import modulate
from .model import IterativeRecognizer, build_model, count_params
from .recognizer import targets_tensor
from .training import PHASES, Trainer, TrainData, ce_loss

LENGTH_BUCKETS = ((1, 3), (4, 6), (7, 9), (10, None))


@dataclass
class IterationTrace:
    predictions: list[str]
    ce: list[float | None]
    times: list[float]


def _images(images) -> torch.Tensor:
    if isinstance(images, np.ndarray):
        images = torch.from_numpy(images)
    if images.dim() == 2:
        images = images[None, None]
    elif images.dim() == 3:
        images = images[:, None]
    return images.float()


@torch.no_grad()
def iterative_infer(model: IterativeRecognizer, images, T: int = 2, deterministic_z: bool = True,
                    truths: Sequence[str] | None = None,
                    generator: torch.Generator | None = None) -> list[IterationTrace]:
    """Y^0 from a plain forward pass, then T feedback steps.

    The backbone prefix runs once; each step re-modulates that original map
    with parameters predicted from the previous step's text, using the prior
    only (posterior and auxiliary decoder are never called).
    """
    if T < 0:
        raise ValueError("T must be >= 0")
    model.eval()
    rec, fb = model.recognizer, model.feedback
    x = _images(images).to(next(rec.parameters()).dtype)
    b = x.shape[0]
    targets = targets_tensor(model.encode_labels(list(truths))) if truths is not None else None
    stochastic = model.cfg.feedback.stochastic_inference and not deterministic_z

    preds, ces, times = [], [], []
    t0 = time.perf_counter()
    psi = rec.encode_backbone(x, model.injection_block)
    H = rec.head(psi)
    y = rec.recognize(H)
    times.append(time.perf_counter() - t0)
    preds.append(y)
    ces.append(_ce(rec, H, targets))
    for _ in range(T):
        t0 = time.perf_counter()
        params = fb.infer_params(y, stochastic=stochastic, generator=generator)
        H = rec.head(modulate(psi, params))
        y = rec.recognize(H)
        times.append(time.perf_counter() - t0)
        preds.append(y)
        ces.append(_ce(rec, H, targets))
    return [IterationTrace([model.charset.decode(p[i]) for p in preds],
                           [c[i] if c is not None else None for c in ces],
                           [t / b for t in times]) for i in range(b)]


def _ce(rec, H, targets):
    if targets is None:
        return None
    return ce_loss(rec.decoder.teacher_forced(H, targets), targets).tolist()


def _trim(seq) -> tuple:
    if isinstance(seq, str):
        return tuple(seq)
    out = []
    for t in seq:
        if int(t) in (EOS, PAD):
            break
        out.append(int(t))
    return tuple(out)


def wra(preds: Sequence, truths: Sequence) -> float:
    """Percentage of exact sequence matches (token lists are trimmed at EOS/PAD)."""
    if len(preds) == 0:
        raise ValueError("no predictions")
    if len(preds) != len(truths):
        raise ValueError(f"{len(preds)} predictions for {len(truths)} truths")
    hits = sum(_trim(p) == _trim(t) for p, t in zip(preds, truths))
    return 100.0 * hits / len(preds)


def length_bucket(n: int) -> str:
    for lo, hi in LENGTH_BUCKETS:
        if n >= lo and (hi is None or n <= hi):
            return f"{lo}-{hi}" if hi else f"{lo}+"
    raise ValueError(f"bad length {n}")


@dataclass
class EvalReport:
    wra: list[float]  # index t
    relative_gain: float
    buckets: dict[str, dict]  # bucket -> {"count": n, "wra": [per t]}
    mode: str
    n: int
    config_digest: str
    predictions: list[list[str]] = field(default_factory=list, repr=False)

    @property
    def t_max(self) -> int:
        return len(self.wra) - 1

    def to_dict(self, with_predictions: bool = False) -> dict:
        d = dataclasses.asdict(self)
        if not with_predictions:
            d.pop("predictions")
        return d

    def table(self) -> str:
        lines = ["| t | WRA |", "|---|---|"]
        lines += [f"| {t} | {w:.2f} |" for t, w in enumerate(self.wra)]
        lines.append(f"\nrelative gain (t=0 vs t={min(2, self.t_max)}): {self.relative_gain:+.2f}")
        lines.append("\n| length | count | " + " | ".join(f"t={t}" for t in range(len(self.wra))) + " |")
        lines.append("|---|---|" + "---|" * len(self.wra))
        for name, b in self.buckets.items():
            lines.append(f"| {name} | {b['count']} | " + " | ".join(
                "-" if w is None else f"{w:.1f}" for w in b["wra"]) + " |")
        return "\n".join(lines)


def config_digest(model: IterativeRecognizer) -> str:
    blob = json.dumps(C.to_dict(model.cfg), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def evaluate(model: IterativeRecognizer, samples, t_max: int = 2, deterministic_z: bool = True,
             mode: str = "", batch_size: int = 256) -> EvalReport:
    if t_max < 0:
        raise ValueError("t_max must be >= 0")
    truths = [s.label for s in samples]
    preds: list[list[str]] = [[] for _ in range(t_max + 1)]
    for i in range(0, len(samples), batch_size):
        chunk = samples[i:i + batch_size]
        imgs = np.stack([s.image for s in chunk])
        for tr in iterative_infer(model, imgs, t_max, deterministic_z):
            for t, p in enumerate(tr.predictions):
                preds[t].append(p)
    per_t = [wra(p, truths) for p in preds]
    gain_t = min(2, t_max)
    buckets: dict[str, dict] = {}
    for lo, hi in LENGTH_BUCKETS:
        name = length_bucket(lo)
        idx = [j for j, w in enumerate(truths) if length_bucket(len(w)) == name]
        buckets[name] = {"count": len(idx), "wra": [
            wra([p[j] for j in idx], [truths[j] for j in idx]) if idx else None for p in preds]}
    return EvalReport(per_t, per_t[gain_t] - per_t[0], buckets, mode, len(samples),
                      config_digest(model), preds)


# -- ablations ---------------------------------------------------------------------

@dataclass(frozen=True)
class AblationCell:
    injection_block: int = 3
    variant: str = "local"
    use_lc: bool = True
    use_aux: bool = True
    use_G: bool = True

    def __post_init__(self):
        if not 1 <= self.injection_block <= 5:
            raise ValueError(f"invalid block index {self.injection_block}")
        if self.variant not in ("local", "global"):
            raise ValueError(f"invalid variant {self.variant!r}")


def block_grid() -> list[AblationCell]:
    """Injection block x {global, local}."""
    return [AblationCell(b, v) for v in ("global", "local") for b in range(1, 6)]


def toggle_grid() -> list[AblationCell]:
    """(L_c, F_aux, G) switch rows."""
    rows = [(True, False, False), (False, True, True), (True, True, False), (True, True, True)]
    return [AblationCell(use_lc=a, use_aux=b, use_G=c) for a, b, c in rows]


def pretrain_recognizer(model_cfg: C.ModelConfig, train_cfg: C.TrainConfig, samples):
    """Warm-up 1 once; returns a snapshot (recognizer + its optimizer state)."""
    model = build_model(model_cfg, seed=train_cfg.seed)
    trainer = Trainer(model, train_cfg)
    trainer.run(TrainData.build(model, samples), phases=("warmup_T",))
    return {"recognizer": {k: v.clone() for k, v in model.recognizer.state_dict().items()},
            "opt_T": trainer.opt_T.state_dict()}


def train_from_pretrained(model_cfg: C.ModelConfig, train_cfg: C.TrainConfig, snapshot, samples,
                          corpus=None, phases=PHASES[1:]) -> IterativeRecognizer:
    """Remaining phases starting from a warm-up-1 snapshot.

    Bit-identical to running every phase from scratch with the same seed:
    recognizer and feedback are initialized from separate seed streams and
    each phase samples batches from its own generator.
    """
    model = build_model(model_cfg, seed=train_cfg.seed)
    model.recognizer.load_state_dict(snapshot["recognizer"])
    trainer = Trainer(model, train_cfg)
    # load_state_dict aliases same-device tensors; copy so the snapshot stays pristine
    trainer.opt_T.load_state_dict(copy.deepcopy(snapshot["opt_T"]))
    trainer.run(TrainData.build(model, samples, corpus), phases=phases, resumed=True)
    return model


def ablation_run(cells: Sequence[AblationCell], split, corpus, model_cfg: C.ModelConfig,
                 train_cfg: C.TrainConfig, t_max: int = 2, snapshot=None, progress=None):
    """Train and evaluate one model per cell; warm-up 1 is shared across cells."""
    if snapshot is None:
        snapshot = pretrain_recognizer(model_cfg, train_cfg, split.train_all)
    rows = []
    for cell in cells:
        mcfg = dataclasses.replace(model_cfg, feedback=dataclasses.replace(
            model_cfg.feedback, injection_block=cell.injection_block, variant=cell.variant))
        tcfg = dataclasses.replace(train_cfg, use_lc=cell.use_lc, use_aux=cell.use_aux,
                                   use_G=cell.use_G)
        model = train_from_pretrained(mcfg, tcfg, snapshot, split.train_all, corpus)
        report = evaluate(model, split.test, t_max, mode=split.mode)
        rows.append({"cell": dataclasses.asdict(cell), "report": report.to_dict()})
        if progress:
            progress(cell, report)
    return rows


def ablation_table(rows) -> str:
    """Markdown table of WRA at t=0 and the last t for each cell."""
    out = ["| block | variant | L_c | F_aux | G | WRA t=0 | WRA t=last | gain |",
           "|---|---|---|---|---|---|---|---|"]
    for r in rows:
        c, w = r["cell"], r["report"]["wra"]
        mark = lambda v: "x" if v else "-"  # noqa: E731
        out.append(f"| {c['injection_block']} | {c['variant']} | {mark(c['use_lc'])} | "
                   f"{mark(c['use_aux'])} | {mark(c['use_G'])} | {w[0]:.2f} | {w[-1]:.2f} | "
                   f"{r['report']['relative_gain']:+.2f} |")
    return "\n".join(out)


# -- timing ------------------------------------------------------------------------

@torch.no_grad()
def timing_report(model: IterativeRecognizer, samples, n_samples: int = 20) -> dict:
    """Parameter counts and mean single-image CPU time for T_A, T_B, F, and t = 0, 1, 2."""
    model.eval()
    rec, fb = model.recognizer, model.feedback
    block = model.injection_block
    ta, tb = rec.block_params(block)
    imgs = [torch.from_numpy(s.image)[None, None] for s in samples[:n_samples]]
    if not imgs:
        raise ValueError("timing needs at least one sample")

    def clock(fn):
        t0 = time.perf_counter()
        for x in imgs:
            fn(x)
        return 1000.0 * (time.perf_counter() - t0) / len(imgs)

    clock(lambda x: iterative_infer(model, x, 1))  # warm-up
    psis = {}
    t_a = clock(lambda x: psis.__setitem__(id(x), rec.encode_backbone(x, block)))
    ys = {}
    t_b = clock(lambda x: ys.__setitem__(id(x), rec.recognize(rec.head(psis[id(x)]))))
    t_f = clock(lambda x: fb.infer_params(ys[id(x)]))
    e2e = {f"t={t}": clock(lambda x, t=t: iterative_infer(model, x, t)) for t in range(3)}
    return {
        "params": {"T_A": count_params(ta), "T_B": count_params(tb),
                   "F": count_params(fb.parameters()),
                   "T": count_params(rec.parameters())},
        "cpu_ms": {"T_A": t_a, "T_B": t_b, "F": t_f},
        "iterations_ms": e2e,
        "n_samples": len(imgs),
    }


def timing_table(rep: dict) -> str:
    lines = ["| network | parameters | CPU ms |", "|---|---|---|"]
    for k in ("T_A", "T_B", "F"):
        lines.append(f"| {k} | {rep['params'][k]:,} | {rep['cpu_ms'][k]:.2f} |")
    lines += ["", "| iteration | CPU ms |", "|---|---|"]
    lines += [f"| {k} | {v:.2f} |" for k, v in rep["iterations_ms"].items()]
    return "\n".join(lines)


def plot_report(report: dict, out: str | Path) -> None:
    """WRA versus word-length bucket, one line per iteration."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    names = list(report["buckets"])
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for t in range(len(report["wra"])):
        ys = [report["buckets"][n]["wra"][t] for n in names]
        ax.plot(names, [np.nan if y is None else y for y in ys], marker="o", label=f"t={t}")
    ax.set_xlabel("word length")
    ax.set_ylabel("WRA (%)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out)
    plt.close(fig)
