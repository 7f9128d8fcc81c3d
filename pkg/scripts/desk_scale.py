#!/usr/bin/env python3
"""Train the desk-scale model once and report train/test median SSIM."""
import argparse
import json
import sys

from bisplat.desk import run_desk


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--seed", type=int, default=0, help="seed (default: 0)")
    p.add_argument("--steps", type=int, default=2000, help="optimizer steps (default: 2000)")
    p.add_argument("--n-primitives", type=int, default=200, help="primitive count (default: 200)")
    p.add_argument("--bypass", action="append", choices=("bst", "dynamic", "delta"), default=[],
                   help="zero a branch; repeatable (default: none)")
    p.add_argument("--log-every", type=int, default=100, help="loss print period, 0 silences (default: 100)")
    args = p.parse_args(argv)

    def log(rec):
        if args.log_every and rec["step"] % args.log_every == 0:
            print(json.dumps(rec), file=sys.stderr)

    r = run_desk(seed=args.seed, bypass=args.bypass, steps=args.steps, n_primitives=args.n_primitives, log=log)
    print(json.dumps(r.__dict__, default=list))
    ok = r.train_median_ssim >= 0.90 and r.test_median_ssim >= 0.75
    print(f"train {r.train_median_ssim:.4f} (target 0.90)  test {r.test_median_ssim:.4f} (target 0.75)  "
          f"{r.seconds / 60:.1f} min  {'PASS' if ok else 'FAIL'}")
    return 0 if ok else 2


if __name__ == "__main__":
    sys.exit(main())
