#!/usr/bin/env python3
"""Branch ablation at desk scale: seeds x {full, bypass-bst, bypass-dynamic, bypass-delta}.

Writes one JSON line per run to --out and prints the median test SSIM per variant.
Runs already present in --out are skipped, so an interrupted sweep can be restarted.
"""
import argparse
import json
import sys
from pathlib import Path

import numpy as np

from bisplat.desk import run_desk

VARIANTS = ((), ("bst",), ("dynamic",), ("delta",))


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--seeds", default="0,1,2", help="comma-separated seeds (default: 0,1,2)")
    p.add_argument("--steps", type=int, default=2000, help="optimizer steps per run (default: 2000)")
    p.add_argument("--out", type=Path, default=Path("ablation.jsonl"), help="results file (default: ablation.jsonl)")
    args = p.parse_args(argv)
    seeds = [int(s) for s in args.seeds.split(",")]

    done = {}
    if args.out.exists():
        for line in args.out.read_text().splitlines():
            rec = json.loads(line)
            done[(rec["seed"], tuple(rec["bypass"]))] = rec
    with open(args.out, "a") as fh:
        for seed in seeds:
            for bp in VARIANTS:
                if (seed, bp) in done:
                    continue
                r = run_desk(seed=seed, bypass=bp, steps=args.steps)
                rec = dict(r.__dict__, bypass=list(bp))
                fh.write(json.dumps(rec) + "\n")
                fh.flush()
                done[(seed, bp)] = rec
                print(f"seed {seed} {'+'.join(bp) or 'full':<8s} test {r.test_median_ssim:.4f}", file=sys.stderr)

    med = {bp: float(np.median([done[(s, bp)]["test_median_ssim"] for s in seeds])) for bp in VARIANTS}
    full = med[()]
    for bp in VARIANTS:
        print(f"{'+'.join(bp) or 'full':<8s} median test SSIM {med[bp]:.4f}  gap {full - med[bp]:+.4f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
