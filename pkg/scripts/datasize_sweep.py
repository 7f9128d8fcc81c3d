#!/usr/bin/env python3
"""Median test SSIM versus training-set size with the test set held fixed.

Against a supplied dataset (``--data``) the training split is subsampled to
each size with a fixed permutation; without one, the desk scene is synthesized
with the largest size and subsampled the same way.
"""
import argparse
import sys
import tempfile
from pathlib import Path

import numpy as np

from bisplat.data import load_dataset
from bisplat.desk import make_desk_dataset
from bisplat.model import profile_config
from bisplat.train import TrainConfig, evaluate, init_state, train


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--data", type=Path, default=None, help="dataset directory (default: synthesized desk scene)")
    p.add_argument("--sizes", default="16,32,64,128", help="training sizes (default: 16,32,64,128)")
    p.add_argument("--profile", choices=("base", "plus", "desk"), default="desk", help="model profile (default: desk)")
    p.add_argument("--n-primitives", type=int, default=None, help="primitive count (default: from the profile)")
    p.add_argument("--steps", type=int, default=2000, help="optimizer steps per size (default: 2000)")
    p.add_argument("--seed", type=int, default=0, help="seed for training and subsampling (default: 0)")
    p.add_argument("--out", type=Path, default=None, help="CSV of size,median_ssim (default: stdout only)")
    args = p.parse_args(argv)
    sizes = sorted(int(s) for s in args.sizes.split(","))

    with tempfile.TemporaryDirectory() as tmp:
        root = args.data or make_desk_dataset(Path(tmp) / "desk", n_train=sizes[-1], n_test=32, seed=args.seed)
        ds = load_dataset(root)
        pool, test = ds.train, ds.test
        if sizes[-1] > len(pool):
            p.error(f"largest size {sizes[-1]} exceeds the {len(pool)} training samples")
        order = np.random.default_rng(args.seed).permutation(len(pool))
        rows = []
        for n in sizes:
            subset = [pool[i] for i in order[:n]]
            overrides = {} if args.n_primitives is None else {"n_primitives": args.n_primitives}
            mcfg = profile_config(args.profile, **overrides)
            tcfg = TrainConfig(steps=args.steps, seed=args.seed, profile=args.profile)
            state = init_state(mcfg, tcfg, ds.bounds("train"))
            train(subset, state)
            med = evaluate(test, state.model, state.bypass).median_ssim
            rows.append((n, med))
            print(f"train size {n:>5d}  median test SSIM {med:.4f}", file=sys.stderr)

    text = "size,median_ssim\n" + "".join(f"{n},{m:.6f}\n" for n, m in rows)
    if args.out:
        args.out.write_text(text)
    sys.stdout.write(text)
    return 0


if __name__ == "__main__":
    sys.exit(main())
