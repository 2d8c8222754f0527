"""Error-distribution corpus G and the text-only spelling-correction baseline.

G holds (hypothesis, truth) text pairs. They come from beam-search decoding
of held-out folds (each fold decoded by a recognizer that never trained on
it) or from a confusable-character substitution model.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import torch
import torch.nn as nn

from .charset import Charset
from .recognizer import AttentionDecoder, targets_tensor


class LeakageError(ValueError):
    pass


@dataclass
class ErrorPair:
    hypothesis: str
    truth: str
    source: str = "synthetic"  # harvested | synthetic
    rank: int = 0  # beam rank 1..N for harvested pairs, 0 otherwise
    fold: int = -1


@dataclass
class ErrorCorpus:
    pairs: list[ErrorPair]
    mode: str = "ds"
    provenance: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.pairs)

    def truths(self) -> set[str]:
        return {p.truth for p in self.pairs}

    def __add__(self, other: "ErrorCorpus") -> "ErrorCorpus":
        prov = {"parts": [self.provenance, other.provenance]}
        return ErrorCorpus(self.pairs + other.pairs, self.mode, prov)


def check_disjoint(corpus: ErrorCorpus, eval_labels: Iterable[str]) -> None:
    """Raise if any pair's truth is an evaluation label."""
    leaked = corpus.truths() & set(eval_labels)
    if leaked:
        raise LeakageError(f"{len(leaked)} evaluation labels appear as corpus truths, "
                           f"e.g. {sorted(leaked)[:5]}")


def save_corpus(corpus: ErrorCorpus, path: str | Path) -> None:
    """JSON lines; the first line carries mode and provenance under ``_meta``."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        f.write(json.dumps({"_meta": {"mode": corpus.mode, "provenance": corpus.provenance}}) + "\n")
        for p in corpus.pairs:
            f.write(json.dumps(asdict(p)) + "\n")


def load_corpus(path: str | Path) -> ErrorCorpus:
    mode, prov, pairs = "ds", {}, []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                if "_meta" in rec:
                    mode = rec["_meta"].get("mode", mode)
                    prov = rec["_meta"].get("provenance", {})
                    continue
                pairs.append(ErrorPair(**rec))
            except (json.JSONDecodeError, TypeError) as e:
                raise ValueError(f"{path}: line {lineno}: bad corpus record: {e}") from None
    return ErrorCorpus(pairs, mode, prov)


# -- synthetic errors ------------------------------------------------------------

def synthesize_errors(vocab: Sequence[str], confusion_table: dict[str, dict[str, float]],
                      n_per_word: int = 4, seed: int = 0, indel_prob: float = 0.0,
                      mode: str = "ds", charset: Charset | None = None) -> ErrorCorpus:
    """One identity pair per word plus ``n_per_word`` single-substitution corruptions.

    Substitution positions are drawn among characters that have an entry in
    the table, weighted by their total confusion mass; with probability
    ``indel_prob`` a corruption is a single deletion or insertion instead.
    """
    if not confusion_table:
        raise ValueError("confusion table is empty")
    charset = charset or Charset()
    rng = np.random.default_rng([seed, 0xE220])
    words = list(dict.fromkeys(vocab))
    pairs = []
    for w in words:
        charset.validate(w)
        pairs.append(ErrorPair(w, w, "synthetic", 0))
        for _ in range(n_per_word):
            hyp = _corrupt(w, confusion_table, rng, indel_prob, charset)
            pairs.append(ErrorPair(hyp, w, "synthetic", 0))
    return ErrorCorpus(pairs, mode, {"kind": "synthetic", "seed": seed, "n_per_word": n_per_word,
                                     "n_words": len(words)})


def _corrupt(word, table, rng, indel_prob, charset) -> str:
    if indel_prob > 0 and rng.random() < indel_prob:
        i = int(rng.integers(len(word) + (0 if len(word) > 1 else 1)))
        if len(word) > 1 and rng.random() < 0.5:
            return word[:i] + word[i + 1:]
        c = charset.symbols[int(rng.integers(len(charset.symbols)))]
        return word[:i] + c + word[i:]
    mass = np.array([sum(table.get(c, {}).values()) for c in word], dtype=float)
    if mass.sum() == 0:
        return word
    i = int(rng.choice(len(word), p=mass / mass.sum()))
    alts = table[word[i]]
    keys = sorted(alts)
    w = np.array([alts[k] for k in keys], dtype=float)
    sub = keys[int(rng.choice(len(keys), p=w / w.sum()))]
    return word[:i] + sub + word[i + 1:]


def load_confusion_table(path: str | Path) -> dict[str, dict[str, float]]:
    table = json.loads(Path(path).read_text(encoding="utf-8"))
    return {k: {a: float(b) for a, b in v.items()} for k, v in table.items()}


# -- cross-validated harvesting ----------------------------------------------------

def assign_folds(samples, k_folds: int, seed: int = 0, by_label: bool = True) -> list[int]:
    """Fold index per sample; ``by_label`` keeps all instances of a word in one fold."""
    if k_folds < 2:
        raise ValueError("k_folds must be >= 2")
    rng = np.random.default_rng([seed, 0xF01D])
    if by_label:
        labels = sorted({s.label for s in samples})
        perm = rng.permutation(len(labels))
        fold_of = {labels[j]: i % k_folds for i, j in enumerate(perm)}
        return [fold_of[s.label] for s in samples]
    perm = rng.permutation(len(samples))
    folds = [0] * len(samples)
    for i, j in enumerate(perm):
        folds[j] = i % k_folds
    return folds


@torch.no_grad()
def harvest_corpus(models, samples, folds: Sequence[int], top_n: int = 10,
                   width: int | None = None, mode: str = "ds") -> ErrorCorpus:
    """Decode every sample with the model of its fold and keep the top-N beam hypotheses.

    ``models`` is a list of ``(model, trained_on_ids)`` indexed by fold. A model
    that saw any sample of its own fold in training is rejected.
    """
    if len(folds) != len(samples):
        raise ValueError("one fold index per sample is required")
    width = width or top_n
    pairs = []
    for f, (model, trained_on) in enumerate(models):
        held_out = [s for s, fi in zip(samples, folds) if fi == f]
        leaked = {s.id for s in held_out} & set(trained_on)
        if leaked:
            raise LeakageError(f"fold {f} model was trained on {len(leaked)} of its held-out "
                               f"samples, e.g. {sorted(leaked)[:3]}")
        model.eval()
        rec = model.recognizer
        for s in held_out:
            H = rec.head(rec.encode_backbone(torch.from_numpy(s.image)[None, None], 5))
            hyps = rec.beam_search(H, width, top_n, min_length=1)
            for rank, (toks, _) in enumerate(hyps, start=1):
                pairs.append(ErrorPair(model.charset.decode(toks), s.label, "harvested", rank, f))
    return ErrorCorpus(pairs, mode, {"kind": "harvested", "k_folds": len(models),
                                     "top_n": top_n, "n_samples": len(samples)})


def cross_validated_corpus(samples, k_folds: int, model_cfg, train_cfg, top_n: int = 10,
                           seed: int = 0, mode: str = "ds") -> ErrorCorpus:
    """Train one recognizer per fold on the complementary folds, then harvest."""
    from .model import build_model
    from .training import train

    folds = assign_folds(samples, k_folds, seed, by_label=(mode == "ds"))
    models = []
    for f in range(k_folds):
        train_set = [s for s, fi in zip(samples, folds) if fi != f]
        m = build_model(model_cfg, seed=seed + f)
        train(m, train_cfg, samples=train_set, phases=("warmup_T",))
        models.append((m, [s.id for s in train_set]))
    return harvest_corpus(models, samples, folds, top_n, mode=mode)


# -- Seq-SCM baseline --------------------------------------------------------------

class SpellingCorrector(nn.Module):
    """Text-only seq2seq corrector: BiLSTM encoder + attention decoder."""

    def __init__(self, charset: Charset, emb_dim: int = 32, hidden: int = 64, k_max: int = 12):
        super().__init__()
        self.charset = charset
        self.k_max = k_max
        self.embedding = nn.Embedding(charset.size, emb_dim)
        self.encoder = nn.LSTM(emb_dim, hidden, batch_first=True, bidirectional=True)
        self.decoder = AttentionDecoder(charset.size, 2 * hidden, hidden, hidden, emb_dim)

    def encode(self, token_seqs: list[list[int]]) -> torch.Tensor:
        x = targets_tensor(token_seqs)  # EOS-terminated, PAD-filled
        H, _ = self.encoder(self.embedding(x))
        return H

    def forward(self, hyps: list[list[int]], truths: list[list[int]]) -> torch.Tensor:
        return self.decoder.teacher_forced(self.encode(hyps), targets_tensor(truths))

    @torch.no_grad()
    def correct(self, words: Sequence[str]) -> list[str]:
        toks = [self.charset.encode(w, strict=False) for w in words]
        out = self.decoder.greedy(self.encode(toks), self.k_max)
        return [self.charset.decode(t) for t in out]


def train_scm(corpus: ErrorCorpus, charset: Charset, steps: int = 1000, batch_size: int = 64,
              lr: float = 1e-3, seed: int = 0, **kwargs) -> SpellingCorrector:
    from .training import ce_loss

    torch.manual_seed(seed)
    scm = SpellingCorrector(charset, **kwargs)
    opt = torch.optim.Adam(scm.parameters(), lr=lr)
    hyps = [charset.encode(p.hypothesis, strict=False) for p in corpus.pairs]
    truths = [charset.encode(p.truth, strict=False) for p in corpus.pairs]
    gen = torch.Generator().manual_seed(seed)
    scm.train()
    for _ in range(steps):
        idx = torch.randint(0, len(hyps), (min(batch_size, len(hyps)),), generator=gen).tolist()
        t = [truths[i] for i in idx]
        loss = ce_loss(scm([hyps[i] for i in idx], t), targets_tensor(t)).mean()
        opt.zero_grad()
        loss.backward()
        torch.nn.utils.clip_grad_norm_(scm.parameters(), 5.0)
        opt.step()
    scm.eval()
    return scm


def seq_scm_correct(words: Sequence[str], scm: SpellingCorrector) -> list[str]:
    return scm.correct(words)
