"""Parameter counts and single-image CPU time at full widths and at toy widths."""

import argparse

import torch

from iterfeed import config as C
from iterfeed.harness import timing_report, timing_table
from iterfeed.model import build_model
from iterfeed.wordgen import render_word

WORDS = ["the", "then", "hand", "band", "chin", "lead", "bold", "need", "hello", "bench"]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("-n", type=int, default=10)
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args()
    torch.set_num_threads(args.threads)
    samples = [render_word(w, seed=i) for i, w in enumerate(WORDS)]
    for name, cfg in (("full width", C.ModelConfig()), ("toy width", C.small_model_config())):
        rep = timing_report(build_model(cfg, seed=0), samples, args.n)
        print(f"## {name}\n\n{timing_table(rep)}\n")


if __name__ == "__main__":
    main()
