"""Desk-scale toy experiments: the DS end-to-end run and the ablation grids.

Both return plain dicts so scripts and tests can cache them as JSON.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

from . import config as C
from .errorcorpus import check_disjoint, synthesize_errors, train_scm
from .glyphs import DEFAULT_CONFUSIONS
from .harness import (AblationCell, ablation_run, evaluate, pretrain_recognizer, wra)
from .model import build_model, save_checkpoint, state_digest
from .training import Trainer, TrainData
from .wordgen import add_spliced, build_split, confusable_vocab


@dataclass(frozen=True)
class ToySetup:
    n_words: int = 300
    train_fraction: float = 0.7
    instances: int = 4
    n_splice: int = 3000
    corpus_per_word: int = 4
    batch_size: int = 32
    warmup_T: int = 3000
    warmup_F_textonly: int = 1500
    warmup_F_full: int = 1500
    joint: int = 3000
    scm_steps: int = 2000
    t_max: int = 3

    def train_config(self, seed: int) -> C.TrainConfig:
        return C.TrainConfig(seed=seed, batch_size=self.batch_size, warmup_T=self.warmup_T,
                             warmup_F_textonly=self.warmup_F_textonly,
                             warmup_F_full=self.warmup_F_full, joint=self.joint,
                             log_every=100)


# short schedule for the 15-cell ablation grid
ABLATION_SETUP = ToySetup(warmup_F_textonly=500, warmup_F_full=500, joint=1000, t_max=2)


def source_digest() -> str:
    """Hash of the package sources; cached results are only reused when it matches."""
    h = hashlib.sha256()
    for p in sorted(Path(__file__).parent.glob("*.py")):
        h.update(p.name.encode())
        h.update(p.read_bytes())
    return h.hexdigest()[:16]


def toy_data(setup: ToySetup, seed: int):
    """DS split of a confusable vocabulary plus spliced words, and a synthetic G."""
    split = build_split(confusable_vocab(setup.n_words, seed), "ds", setup.train_fraction,
                        setup.instances, seed)
    add_spliced(split, setup.n_splice, seed)
    corpus = synthesize_errors(sorted(split.labels("train")), DEFAULT_CONFUSIONS,
                               setup.corpus_per_word, seed)
    check_disjoint(corpus, split.labels("test"))
    return split, corpus


def run_toy(setup: ToySetup, seed: int, out_dir: str | Path | None = None,
            log: Callable[[str], None] = print) -> dict:
    """Full schedule on one seed; evaluates t = 0..t_max and the Seq-SCM baseline."""
    t0 = time.time()
    split, corpus = toy_data(setup, seed)
    model = build_model(C.small_model_config(), seed=seed)
    trainer = Trainer(model, setup.train_config(seed),
                      on_record=lambda r: log(json.dumps(r)) if r["step"] % 500 == 0 else None)
    trainer.run(TrainData.build(model, split.train_all, corpus))
    log(f"seed {seed}: trained in {time.time() - t0:.0f}s")
    report = evaluate(model, split.test, setup.t_max, mode="ds")

    scm = train_scm(corpus, model.charset, steps=setup.scm_steps, seed=seed)
    y0 = report.predictions[0]
    scm_wra = wra(scm.correct(y0), [s.label for s in split.test])
    result = {"seed": seed, "wra": report.wra, "gain_t2": report.wra[2] - report.wra[0],
              "scm_wra": scm_wra, "n_test": report.n, "buckets": report.buckets,
              "checkpoint_sha256": state_digest(model), "seconds": time.time() - t0}
    if out_dir:
        out = Path(out_dir)
        save_checkpoint(model, out / f"toy_seed{seed}.pt", {"setup": dataclasses.asdict(setup)})
        (out / f"toy_seed{seed}.json").write_text(json.dumps(result, indent=2))
    log(f"seed {seed}: WRA {[round(w, 2) for w in report.wra]}, Seq-SCM {scm_wra:.2f}")
    return result


def ablation_cells() -> list[AblationCell]:
    """Block grid, the four toggle rows, and the all-off row for the direction check."""
    from .harness import block_grid, toggle_grid

    return block_grid() + toggle_grid() + [AblationCell(use_lc=False, use_aux=False,
                                                        use_G=False)]


def run_ablation(setup: ToySetup = ABLATION_SETUP, seed: int = 0,
                 cells: list[AblationCell] | None = None,
                 log: Callable[[str], None] = print) -> list[dict]:
    split, corpus = toy_data(setup, seed)
    mcfg, tcfg = C.small_model_config(), setup.train_config(seed)
    t0 = time.time()
    snapshot = pretrain_recognizer(mcfg, tcfg, split.train_all)
    log(f"shared warm-up done in {time.time() - t0:.0f}s")
    return ablation_run(cells or ablation_cells(), split, corpus, mcfg, tcfg, setup.t_max,
                        snapshot=snapshot,
                        progress=lambda c, r: log(f"{c}: WRA {[round(w, 2) for w in r.wra]} "
                                                  f"({time.time() - t0:.0f}s)"))


def cached(path: str | Path, key: dict, compute: Callable[[], object]):
    """Return ``compute()``, reusing ``path`` when it was written under the same key."""
    path = Path(path)
    key = {**key, "source": source_digest()}
    if path.exists():
        blob = json.loads(path.read_text())
        if blob.get("key") == key:
            return blob["value"]
    value = compute()
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps({"key": key, "value": value}, indent=2))
    return value
