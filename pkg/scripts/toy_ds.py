"""Toy DS end-to-end run: feedback gain on unseen words, three seeds.

Results land in runs/acceptance/toy_seed{N}.json (the same cache the
acceptance test reads) together with a checkpoint per seed.
"""

import argparse
import dataclasses
from pathlib import Path

import numpy as np

from iterfeed.experiments import ToySetup, cached, run_toy

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", default="0,1,2")
    ap.add_argument("--out", type=Path, default=ROOT / "runs" / "acceptance")
    ap.add_argument("--joint", type=int, help="override the joint-phase step count")
    args = ap.parse_args()

    setup = ToySetup()
    if args.joint is not None:
        setup = dataclasses.replace(setup, joint=args.joint)
    rows = []
    for seed in (int(s) for s in args.seeds.split(",")):
        key = {"kind": "toy", "seed": seed, "setup": dataclasses.asdict(setup)}
        rows.append(cached(args.out / f"toy_seed{seed}.json", key,
                           lambda seed=seed: run_toy(setup, seed, out_dir=args.out)))

    print("| seed | " + " | ".join(f"t={t}" for t in range(setup.t_max + 1))
          + " | gain t2-t0 | Seq-SCM(t=0) |")
    print("|---" * (setup.t_max + 4) + "|")
    for r in rows:
        print(f"| {r['seed']} | " + " | ".join(f"{w:.2f}" for w in r["wra"])
              + f" | {r['gain_t2']:+.2f} | {r['scm_wra']:.2f} |")
    mean = np.mean([r["wra"] for r in rows], axis=0)
    print("| mean | " + " | ".join(f"{w:.2f}" for w in mean)
          + f" | {mean[2] - mean[0]:+.2f} | {np.mean([r['scm_wra'] for r in rows]):.2f} |")


if __name__ == "__main__":
    main()
