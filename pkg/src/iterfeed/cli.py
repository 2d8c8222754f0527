"""Command-line entry point: ``iterfeed <command> ...``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import torch

from . import config as C
from .charset import Charset, UnknownCharacterError
from .training import PHASES, NonFiniteLossError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("iterfeed")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _configs(path):
    if path is None:
        return C.ModelConfig(), C.TrainConfig()
    try:
        return C.load_config_file(path)
    except FileNotFoundError:
        raise DataError(f"config file not found: {path}") from None
    except (json.JSONDecodeError, TypeError, ValueError) as e:
        raise UsageError(f"bad config file {path}: {e}") from None


def _load_data(path):
    from .wordgen import load_dataset

    return load_dataset(path)


def _write_json(obj, path):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(obj, indent=2), encoding="utf-8")


# -- commands ------------------------------------------------------------------------

def cmd_gen_data(args):
    from .wordgen import add_spliced, build_split, read_vocab, save_dataset

    vocab = read_vocab(args.vocab)
    charset = Charset(args.symbols) if args.symbols else Charset()
    split = build_split(vocab, args.mode, args.train_frac, args.instances, args.seed,
                        charset=charset)
    if args.splice:
        add_spliced(split, args.splice, args.seed, charset=charset)
    save_dataset(split, args.out)
    print(f"{len(split.train)} train (+{len(split.extra)} spliced) / {len(split.test)} test "
          f"samples ({split.mode}) -> {args.out}")


def cmd_train_recognizer(args):
    from .errorcorpus import assign_folds
    from .model import build_model, save_checkpoint
    from .training import train

    mcfg, tcfg = _configs(args.config)
    split = _load_data(args.data)
    mcfg = _with_symbols(mcfg, split)
    samples = split.train
    extra = {"phases": ["warmup_T"]}
    if args.fold is not None:
        if args.folds is None or not 0 <= args.fold < args.folds:
            raise UsageError("--fold needs --folds K with 0 <= fold < K")
        folds = assign_folds(samples, args.folds, tcfg.seed, by_label=(split.mode == "ds"))
        samples = [s for s, f in zip(samples, folds) if f != args.fold]
        extra.update(fold=args.fold, folds=args.folds)
    model = build_model(mcfg, seed=tcfg.seed)
    samples = samples + split.extra
    train(model, tcfg, samples=samples, phases=("warmup_T",), log_path=args.log,
          checkpoint_on_error=args.out + ".aborted")
    extra["trained_on"] = [s.id for s in samples]
    save_checkpoint(model, args.out, extra)
    print(f"recognizer trained on {len(samples)} samples -> {args.out}")


def _with_symbols(mcfg, split):
    import dataclasses

    if tuple(split.symbols) != tuple(mcfg.symbols):
        mcfg = dataclasses.replace(mcfg, symbols=tuple(split.symbols))
    return mcfg


def cmd_train(args):
    from .errorcorpus import check_disjoint, load_corpus
    from .model import build_model, load_checkpoint, save_checkpoint
    from .training import Trainer, TrainData

    mcfg, tcfg = _configs(args.config)
    phases = [p.strip() for p in args.phases.split(",") if p.strip()]
    bad = [p for p in phases if p not in PHASES]
    if bad:
        raise UsageError(f"unknown phases {bad}; choose from {', '.join(PHASES)}")
    split = _load_data(args.data)
    corpus = load_corpus(args.corpus) if args.corpus else None
    if corpus is not None and split.mode == "ds":
        check_disjoint(corpus, split.labels("test"))
    if args.resume:
        model, extra = load_checkpoint(args.resume)
    else:
        model, extra = build_model(_with_symbols(mcfg, split), seed=tcfg.seed), {}
    trainer = Trainer(model, tcfg, log_path=args.log)
    trainer.run(TrainData.build(model, split.train_all, corpus), phases,
                checkpoint_on_error=args.out + ".aborted", resumed=bool(args.resume))
    done = list(extra.get("phases", [])) + phases
    save_checkpoint(model, args.out, {**extra, "phases": done,
                                      "trained_on": [s.id for s in split.train_all]})
    print(f"trained phases {','.join(phases)} -> {args.out}")


def cmd_corpus_harvest(args):
    from .errorcorpus import assign_folds, harvest_corpus, save_corpus
    from .model import load_checkpoint

    split = _load_data(args.data)
    ckpts = [p for p in args.models.split(",") if p]
    if len(ckpts) != args.folds:
        raise UsageError(f"{len(ckpts)} checkpoints given for {args.folds} folds")
    models = []
    for p in ckpts:
        m, extra = load_checkpoint(p)
        models.append((m, extra.get("trained_on", [])))
    folds = assign_folds(split.train, args.folds, args.seed, by_label=(split.mode == "ds"))
    corpus = harvest_corpus(models, split.train, folds, args.top_n, mode=split.mode)
    save_corpus(corpus, args.out)
    print(f"{len(corpus)} pairs -> {args.out}")


def cmd_corpus_synth(args):
    from .errorcorpus import load_confusion_table, save_corpus, synthesize_errors
    from .glyphs import DEFAULT_CONFUSIONS
    from .wordgen import read_vocab

    table = load_confusion_table(args.table) if args.table else DEFAULT_CONFUSIONS
    corpus = synthesize_errors(read_vocab(args.vocab), table, args.per_word, args.seed,
                               args.indel)
    save_corpus(corpus, args.out)
    print(f"{len(corpus)} pairs -> {args.out}")


def cmd_eval(args):
    from .harness import evaluate
    from .model import load_checkpoint

    model, _ = load_checkpoint(args.ckpt)
    split = _load_data(args.data)
    samples = split.train if args.part == "train" else split.test
    if not samples:
        raise DataError(f"no {args.part} samples in {args.data}")
    if not args.deterministic_z:
        torch.manual_seed(args.seed)
    report = evaluate(model, samples, args.tmax, deterministic_z=args.deterministic_z,
                      mode=split.mode)
    print(report.table())
    if args.report:
        _write_json(report.to_dict(with_predictions=args.predictions), args.report)
        Path(args.report).with_suffix(".md").write_text(report.table() + "\n", encoding="utf-8")


def cmd_ablate(args):
    from .errorcorpus import load_corpus
    from .harness import AblationCell, ablation_run, ablation_table, block_grid, toggle_grid

    try:
        grid = json.loads(Path(args.grid).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise DataError(f"grid file not found: {args.grid}") from None
    presets = {"blocks": block_grid, "toggles": toggle_grid}
    if isinstance(grid, str):
        grid = {"preset": grid}
    if isinstance(grid, list):
        grid = {"cells": grid}
    if "preset" in grid:
        if grid["preset"] not in presets:
            raise UsageError(f"unknown preset {grid['preset']!r}")
        cells = presets[grid["preset"]]()
    else:
        try:
            cells = [AblationCell(**c) for c in grid.get("cells", [])]
        except TypeError as e:
            raise UsageError(f"bad cell in {args.grid}: {e}") from None
    if not cells:
        raise UsageError("grid has no cells")
    mcfg, tcfg = _configs(args.config)
    split = _load_data(args.data)
    corpus = load_corpus(args.corpus) if args.corpus else None
    rows = ablation_run(cells, split, corpus, _with_symbols(mcfg, split), tcfg, args.tmax,
                        progress=lambda c, r: print(f"{c}: {r.wra}", flush=True))
    print(ablation_table(rows))
    if args.report:
        _write_json({"rows": rows}, args.report)
        Path(args.report).with_suffix(".md").write_text(ablation_table(rows) + "\n",
                                                        encoding="utf-8")


def cmd_timing(args):
    from .harness import timing_report, timing_table
    from .model import load_checkpoint
    from .wordgen import render_word

    torch.set_num_threads(1)
    model, _ = load_checkpoint(args.ckpt)
    if args.data:
        samples = _load_data(args.data).test
    else:
        words = ["the", "then", "hand", "band", "chin", "lead", "bold", "need"]
        samples = [render_word(w, seed=i, charset=model.charset) for i, w in enumerate(words)]
    rep = timing_report(model, samples, args.n)
    print(timing_table(rep))
    if args.report:
        _write_json(rep, args.report)


def cmd_plot(args):
    from .harness import plot_report

    try:
        report = json.loads(Path(args.report).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise DataError(f"report not found: {args.report}") from None
    if "buckets" not in report or "wra" not in report:
        raise DataError(f"{args.report} is not an evaluation report")
    plot_report(report, args.out)
    print(f"plot -> {args.out}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="iterfeed", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="render a CS or DS word-image dataset")
    g.add_argument("--vocab", required=True)
    g.add_argument("--mode", choices=("cs", "ds"), required=True)
    g.add_argument("--train-frac", type=float, default=0.7)
    g.add_argument("--instances", type=int, default=4)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--symbols", help="charset symbols (default a-z)")
    g.add_argument("--splice", type=int, default=0, metavar="N",
                   help="also render N spliced pseudo-words for training")
    g.add_argument("--out", required=True)
    g.set_defaults(fn=cmd_gen_data)

    g = sub.add_parser("train-recognizer", help="warm-up training of the recognizer alone")
    g.add_argument("--data", required=True)
    g.add_argument("--config")
    g.add_argument("--out", required=True)
    g.add_argument("--fold", type=int, help="hold this fold out (for harvesting)")
    g.add_argument("--folds", type=int)
    g.add_argument("--log")
    g.set_defaults(fn=cmd_train_recognizer)

    g = sub.add_parser("train", help="run training phases")
    g.add_argument("--data", required=True)
    g.add_argument("--corpus")
    g.add_argument("--phases", default=",".join(PHASES))
    g.add_argument("--config")
    g.add_argument("--out", required=True)
    g.add_argument("--resume")
    g.add_argument("--log")
    g.set_defaults(fn=cmd_train)

    c = sub.add_parser("corpus", help="build the error corpus")
    csub = c.add_subparsers(dest="corpus_command", required=True, parser_class=_Parser)
    g = csub.add_parser("harvest", help="cross-validated beam-search harvesting")
    g.add_argument("--models", required=True, help="comma-separated checkpoints, one per fold")
    g.add_argument("--data", required=True)
    g.add_argument("--folds", type=int, default=5)
    g.add_argument("--top-n", type=int, default=10)
    g.add_argument("--seed", type=int, default=0, help="fold assignment seed")
    g.add_argument("--out", required=True)
    g.set_defaults(fn=cmd_corpus_harvest)
    g = csub.add_parser("synth", help="confusable-substitution corpus")
    g.add_argument("--vocab", required=True)
    g.add_argument("--table", help="JSON confusion table (default: built-in glyph confusions)")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--per-word", type=int, default=4)
    g.add_argument("--indel", type=float, default=0.0)
    g.add_argument("--out", required=True)
    g.set_defaults(fn=cmd_corpus_synth)

    g = sub.add_parser("eval", help="iterative evaluation report")
    g.add_argument("--ckpt", required=True)
    g.add_argument("--data", required=True)
    g.add_argument("--tmax", type=int, default=2)
    g.add_argument("--deterministic-z", action="store_true")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--part", choices=("test", "train"), default="test")
    g.add_argument("--predictions", action="store_true", help="include predictions in report")
    g.add_argument("--report")
    g.set_defaults(fn=cmd_eval)

    g = sub.add_parser("ablate", help="injection-block / toggle ablation grid")
    g.add_argument("--grid", required=True, help='JSON: "blocks", "toggles" or a list of cells')
    g.add_argument("--data", required=True)
    g.add_argument("--corpus")
    g.add_argument("--config")
    g.add_argument("--tmax", type=int, default=2)
    g.add_argument("--report")
    g.set_defaults(fn=cmd_ablate)

    g = sub.add_parser("timing", help="parameter counts and CPU time")
    g.add_argument("--ckpt", required=True)
    g.add_argument("--data")
    g.add_argument("-n", type=int, default=20)
    g.add_argument("--report")
    g.set_defaults(fn=cmd_timing)

    g = sub.add_parser("plot", help="WRA versus word length")
    g.add_argument("--report", required=True)
    g.add_argument("--out", required=True)
    g.set_defaults(fn=cmd_plot)
    return p


def main(argv=None) -> int:
    from .errorcorpus import LeakageError
    from .wordgen import DatasetFormatError, WordTooLongError

    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.fn(args)
    except UsageError as e:
        print(f"iterfeed: usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except NonFiniteLossError as e:
        print(f"iterfeed: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, DatasetFormatError, LeakageError, UnknownCharacterError,
            WordTooLongError, FileNotFoundError) as e:
        print(f"iterfeed: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as e:
        print(f"iterfeed: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
