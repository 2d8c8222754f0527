"""Injection-block x local/global grid plus the loss-toggle rows on toy DS data."""

import argparse
import dataclasses
from pathlib import Path

from iterfeed.experiments import ABLATION_SETUP, cached, run_ablation
from iterfeed.harness import ablation_table

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=ROOT / "runs" / "acceptance")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    key = {"kind": "ablation", "seed": args.seed, "setup": dataclasses.asdict(ABLATION_SETUP)}
    rows = cached(args.out / f"ablation_s{args.seed}.json",
                  key, lambda: run_ablation(ABLATION_SETUP, args.seed))
    table = ablation_table(rows)
    (args.out / f"ablation_s{args.seed}.md").write_text(table + "\n")
    print(table)


if __name__ == "__main__":
    main()
