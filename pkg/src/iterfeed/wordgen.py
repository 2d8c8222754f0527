"""Synthetic word images and CS/DS train/test splits."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image

from .charset import Charset
from .config import IMAGE_HEIGHT, IMAGE_WIDTH, RenderStyle
from .glyphs import GLYPHS, glyph_segments

MANIFEST = "manifest.jsonl"
META = "dataset.json"
FORMAT_VERSION = 1


class WordTooLongError(ValueError):
    pass


class DatasetFormatError(ValueError):
    """Corrupt manifest or metadata; ``lineno`` is 1-based when known."""

    def __init__(self, message: str, lineno: int | None = None):
        if lineno is not None:
            message = f"{MANIFEST} line {lineno}: {message}"
        super().__init__(message)
        self.lineno = lineno


class MissingImageError(DatasetFormatError):
    def __init__(self, sample_id: str, path: Path):
        super().__init__(f"image for sample {sample_id!r} not found at {path}")
        self.sample_id = sample_id


@dataclass
class WordImageSample:
    image: np.ndarray  # float32 (32, 100), values k/255
    label: str
    style_seed: int
    id: str = ""

    def __eq__(self, other):
        if not isinstance(other, WordImageSample):
            return NotImplemented
        return (self.label == other.label and self.style_seed == other.style_seed
                and self.id == other.id and np.array_equal(self.image, other.image))


@dataclass
class DatasetSplit:
    train: list[WordImageSample]
    test: list[WordImageSample]
    mode: str
    seed: int
    symbols: str = Charset().symbols
    meta: dict = field(default_factory=dict)
    extra: list[WordImageSample] = field(default_factory=list)  # spliced training words

    PARTS = ("train", "test", "extra")

    def labels(self, part: str) -> set[str]:
        return {s.label for s in getattr(self, part)}

    @property
    def train_all(self) -> list[WordImageSample]:
        """Recognizer training samples: the split's train part plus any spliced words."""
        return self.train + self.extra

    def manifest_digest(self) -> str:
        h = hashlib.sha256()
        for part in self.PARTS:
            for s in getattr(self, part):
                h.update(f"{part}\t{s.id}\t{s.label}\t{s.style_seed}\n".encode())
                h.update(s.image.tobytes())
        return h.hexdigest()


def render_word(word: str, style: RenderStyle | None = None, seed: int = 0,
                charset: Charset | None = None) -> WordImageSample:
    """Render ``word`` as a 32x100 grayscale image, dark ink on a light background.

    Pure function of its arguments; the image is quantized to 8 bits so that
    saving it losslessly round-trips exactly.
    """
    style = style or RenderStyle()
    charset = charset or Charset()
    if not word:
        raise ValueError("cannot render an empty word")
    charset.validate(word)
    missing = [c for c in word if c not in GLYPHS]
    if missing:
        raise ValueError(f"no glyph for character {missing[0]!r}")
    k = len(word)
    usable = IMAGE_WIDTH - 2 * style.margin
    if k * style.min_advance > usable:
        raise WordTooLongError(
            f"{word!r} needs {k * style.min_advance:.0f}px at minimum advance, only {usable:.0f}px available")

    rng = np.random.default_rng(seed)
    advance = min(style.max_advance, usable / k)
    # stretch a little when there is room, never below the minimum advance
    advance = max(style.min_advance, advance * rng.uniform(0.85, 1.0) if style.jitter else advance)
    width = rng.uniform(*style.stroke_width)
    slant = rng.uniform(*style.slant)
    gap = rng.uniform(*style.contrast)
    bg = rng.uniform(gap, 1.0) if gap < 1.0 else 1.0
    x0 = (IMAGE_WIDTH - k * advance) / 2
    x0 += rng.uniform(-1, 1) * min(style.jitter * 2, max(0.0, x0 - 1))
    y_shift = rng.uniform(-1, 1) * style.jitter

    segs = []
    for i, c in enumerate(word):
        s = glyph_segments(c).copy()
        dx, dy = rng.uniform(-1, 1, size=2) * style.jitter
        scale = 1.0 + rng.uniform(-0.06, 0.06) * (style.jitter > 0)
        px = x0 + (i + 0.5) * advance + (s[..., 0] - 0.5) * advance * 0.95 * scale + dx
        py = (s[..., 1] - 0.55) * IMAGE_HEIGHT * scale + 0.55 * IMAGE_HEIGHT + dy + y_shift
        px = px - slant * (py - IMAGE_HEIGHT * 0.55)
        segs.append(np.stack([px, py], axis=-1))
    segs = np.concatenate(segs, axis=0)

    coverage = _stroke_coverage(segs, width)
    img = bg - gap * coverage
    if style.noise_sigma > 0:
        img = img + rng.normal(0.0, style.noise_sigma, size=img.shape)
    img = np.clip(img, 0.0, 1.0)
    img = np.round(img * 255.0).astype(np.uint8)
    return WordImageSample(image=img.astype(np.float32) / 255.0, label=word, style_seed=int(seed))


def _stroke_coverage(segs: np.ndarray, width: float) -> np.ndarray:
    ys, xs = np.mgrid[0:IMAGE_HEIGHT, 0:IMAGE_WIDTH]
    p = np.stack([xs.ravel() + 0.5, ys.ravel() + 0.5], axis=1)[:, None, :]  # (P,1,2)
    a, b = segs[None, :, 0, :], segs[None, :, 1, :]
    ab = b - a
    denom = np.maximum((ab ** 2).sum(-1), 1e-12)
    t = np.clip(((p - a) * ab).sum(-1) / denom, 0.0, 1.0)
    d = np.sqrt(((a + t[..., None] * ab - p) ** 2).sum(-1)).min(axis=1)
    cov = np.clip(width / 2 + 0.5 - d, 0.0, 1.0)
    return cov.reshape(IMAGE_HEIGHT, IMAGE_WIDTH)


def _sample_seeds(seed: int, n: int) -> list[int]:
    rng = np.random.default_rng([seed, 0x5EED])
    return [int(s) for s in rng.integers(0, 2**31 - 1, size=n)]


def build_split(vocab: Sequence[str], mode: str = "ds", train_fraction: float = 0.7,
                instances_per_word: int = 4, seed: int = 0, style: RenderStyle | None = None,
                charset: Charset | None = None, k_max: int = 12) -> DatasetSplit:
    """Render ``instances_per_word`` images per word and split them.

    DS partitions the unique words first so train and test labels are disjoint;
    CS renders everything and partitions the rendered instances.
    """
    mode = mode.lower()
    if mode not in ("cs", "ds"):
        raise ValueError(f"mode must be cs or ds, got {mode!r}")
    if not vocab:
        raise ValueError("vocab is empty")
    if not 0 < train_fraction < 1:
        raise ValueError("train_fraction must be in (0, 1)")
    if instances_per_word < 1:
        raise ValueError("instances_per_word must be >= 1")
    charset = charset or Charset()
    words = list(dict.fromkeys(vocab))
    for w in words:
        charset.validate(w)
        if not 1 <= len(w) <= k_max:
            raise ValueError(f"word {w!r} has length {len(w)}, allowed 1..{k_max}")
    if mode == "ds" and len(words) < 2:
        raise ValueError("DS split needs at least 2 unique words")

    rng = np.random.default_rng(seed)
    seeds = iter(_sample_seeds(seed, len(words) * instances_per_word))

    def render_all(ws, prefix):
        out = []
        for w in ws:
            for j in range(instances_per_word):
                s = render_word(w, style, next(seeds), charset)
                s.id = f"{prefix}{len(out):06d}"
                out.append(s)
        return out

    if mode == "ds":
        order = rng.permutation(len(words))
        n_train = min(max(int(round(train_fraction * len(words))), 1), len(words) - 1)
        train_words = [words[i] for i in order[:n_train]]
        test_words = [words[i] for i in order[n_train:]]
        train = render_all(train_words, "tr")
        test = render_all(test_words, "te")
    else:
        samples = render_all(words, "s")
        order = rng.permutation(len(samples))
        n_train = min(max(int(round(train_fraction * len(samples))), 1), len(samples) - 1)
        train = [samples[i] for i in order[:n_train]]
        test = [samples[i] for i in order[n_train:]]
        for i, s in enumerate(train):
            s.id = f"tr{i:06d}"
        for i, s in enumerate(test):
            s.id = f"te{i:06d}"
    return DatasetSplit(train=train, test=test, mode=mode, seed=seed, symbols=charset.symbols,
                        meta={"train_fraction": train_fraction,
                              "instances_per_word": instances_per_word})


def save_dataset(split: DatasetSplit, path: str | Path) -> None:
    path = Path(path)
    (path / "images").mkdir(parents=True, exist_ok=True)
    meta = {"format": FORMAT_VERSION, "mode": split.mode, "seed": split.seed,
            "symbols": split.symbols, "n_train": len(split.train), "n_test": len(split.test),
            "n_extra": len(split.extra), "meta": split.meta}
    (path / META).write_text(json.dumps(meta, indent=2), encoding="utf-8")
    with open(path / MANIFEST, "w", encoding="utf-8") as f:
        for part in DatasetSplit.PARTS:
            for s in getattr(split, part):
                rel = f"images/{s.id}.png"
                Image.fromarray(np.round(s.image * 255).astype(np.uint8), mode="L").save(path / rel)
                rec = {"id": s.id, "label": s.label, "seed": s.style_seed,
                       "image_path": rel, "split": part}
                f.write(json.dumps(rec) + "\n")


def load_dataset(path: str | Path) -> DatasetSplit:
    path = Path(path)
    try:
        meta = json.loads((path / META).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise DatasetFormatError(f"missing {META} in {path}") from None
    except json.JSONDecodeError as e:
        raise DatasetFormatError(f"{META} is not valid JSON: {e}") from None
    parts: dict[str, list[WordImageSample]] = {p: [] for p in DatasetSplit.PARTS}
    manifest = path / MANIFEST
    if not manifest.exists():
        raise DatasetFormatError(f"missing {MANIFEST} in {path}")
    lineno = 0
    with open(manifest, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.endswith("\n"):
                raise DatasetFormatError("truncated record (no trailing newline)", lineno)
            try:
                rec = json.loads(line)
                sid, label, seed = rec["id"], rec["label"], int(rec["seed"])
                rel, part = rec["image_path"], rec["split"]
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                raise DatasetFormatError(f"bad record: {e}", lineno) from None
            if part not in parts:
                raise DatasetFormatError(f"unknown split {part!r}", lineno)
            img_path = path / rel
            if not img_path.exists():
                raise MissingImageError(sid, img_path)
            arr = np.asarray(Image.open(img_path).convert("L"), dtype=np.uint8)
            if arr.shape != (IMAGE_HEIGHT, IMAGE_WIDTH):
                raise DatasetFormatError(f"image {rel} has shape {arr.shape}", lineno)
            parts[part].append(WordImageSample(arr.astype(np.float32) / 255.0, label, seed, sid))
    expected = [meta["n_train"], meta["n_test"], meta.get("n_extra", 0)]
    found = [len(parts[p]) for p in DatasetSplit.PARTS]
    if found != expected:
        raise DatasetFormatError(
            f"expected {'+'.join(map(str, expected))} records, found "
            f"{'+'.join(map(str, found))} (truncated manifest?)", lineno + 1)
    return DatasetSplit(train=parts["train"], test=parts["test"], mode=meta["mode"],
                        seed=meta["seed"], symbols=meta["symbols"], meta=meta.get("meta", {}),
                        extra=parts["extra"])


def splice_words(words: Sequence[str], n: int, seed: int = 0, exclude: Iterable[str] = (),
                 min_len: int = 2, max_len: int = 10) -> list[str]:
    """Pseudo-words made of a prefix of one word and a suffix of another.

    Nothing in ``exclude`` is ever produced. Used to stop a recognizer trained
    on a small lexicon from memorizing whole words.
    """
    words = sorted(set(words))
    if n > 0 and len(words) < 2:
        raise ValueError("splicing needs at least 2 distinct words")
    exclude = set(exclude)
    rng = np.random.default_rng([seed, 0x5911CE])
    out: list[str] = []
    attempts = 0
    while len(out) < n:
        attempts += 1
        if attempts > 100 * n + 1000:
            raise ValueError("could not splice enough admissible words")
        a, b = (words[i] for i in rng.choice(len(words), 2, replace=False))
        w = (a[:int(rng.integers(1, len(a) + 1))] + b[int(rng.integers(0, len(b))):])[:max_len]
        if len(w) >= min_len and w not in exclude:
            out.append(w)
    return out


def add_spliced(split: DatasetSplit, n: int, seed: int = 0, style: RenderStyle | None = None,
                charset: Charset | None = None) -> DatasetSplit:
    """Render ``n`` spliced training words into ``split.extra``.

    Pieces come from train labels only. Every real label (train or test) is
    excluded, so spliced words are always new words and a DS split stays
    disjoint.
    """
    charset = charset or Charset(split.symbols)
    exclude = split.labels("train") | split.labels("test")
    words = splice_words(sorted(split.labels("train")), n, seed, exclude=exclude)
    seeds = _sample_seeds(seed + 0xA0A0, n)
    split.extra = []
    for i, (w, sd) in enumerate(zip(words, seeds)):
        s = render_word(w, style, sd, charset)
        s.id = f"sp{i:06d}"
        split.extra.append(s)
    split.meta = {**split.meta, "spliced": n, "splice_seed": seed}
    return split


def read_vocab(path: str | Path) -> list[str]:
    words = [w.strip() for w in Path(path).read_text(encoding="utf-8").splitlines()]
    return [w for w in words if w and not w.startswith("#")]


_CONFUSABLE = "hnbceoilad"


def confusable_vocab(n: int, seed: int = 0, min_len: int = 3, max_len: int = 8) -> list[str]:
    """Pseudo-words rich in visually confusable letters (h/n/b, c/e, i/l, a/d)."""
    rng = np.random.default_rng([seed, 0xC0DE])
    other = "fgkmprstuvwy"
    out: list[str] = []
    seen = set()
    while len(out) < n:
        k = int(rng.integers(min_len, max_len + 1))
        chars = [rng.choice(list(_CONFUSABLE)) if rng.random() < 0.6 else rng.choice(list(other))
                 for _ in range(k)]
        w = "".join(chars)
        if w not in seen:
            seen.add(w)
            out.append(w)
    return out
