"""Command line entry point: synth, train, eval, render, verify.

Exit codes: 0 success, 1 validation or configuration error, 2 runtime or
numeric failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import data, raster, verify
from .model import Bypass, profile_config
from .raster import set_workers
from .train import (CheckpointError, NonFiniteLoss, TrainConfig, evaluate, init_state, load_checkpoint,
                    save_checkpoint, train)

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # usage errors are validation errors: exit 1 rather than argparse's 2
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _default(key):
    return cfgmod.SCHEMA[key][1]


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, default=None, help="key=value config file (default: none)")
    p.add_argument("--workers", type=int, default=None,
                   help="cap on kernel threads (default: all available cores)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="bisplat", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset from a scene file")
    p.add_argument("--scene", type=Path, required=True, help="scene description (key=value)")
    p.add_argument("--out", type=Path, required=True, help="output dataset directory")
    p.add_argument("--train", type=int, default=64, help="training samples (default: 64)")
    p.add_argument("--test", type=int, default=16, help="test samples (default: 16)")
    p.add_argument("--seed", type=int, default=0, help="sampling seed (default: 0)")
    p.add_argument("--format", choices=("f32", "pgm"), default="f32", help="spectrum file format (default: f32)")

    p = sub.add_parser("train", help="train a model on a dataset")
    p.add_argument("--data", type=Path, required=True, help="dataset directory")
    p.add_argument("--out", type=Path, required=True, help="checkpoint path to write")
    p.add_argument("--profile", choices=("base", "plus", "desk"), default=None,
                   help=f"model profile (default: {_default('model.profile')})")
    p.add_argument("--n-primitives", type=int, default=None, help="primitive count (default: from the profile)")
    p.add_argument("--bypass", action="append", choices=("bst", "dynamic", "delta"), default=None,
                   help="zero a branch; repeatable (default: none)")
    p.add_argument("--steps", type=int, default=None, help=f"optimizer steps (default: {_default('train.steps')})")
    p.add_argument("--seed", type=int, default=None, help=f"seed (default: {_default('train.seed')})")
    p.add_argument("--eval-every", type=int, default=None,
                   help=f"test-set evaluation period in steps, 0 disables (default: {_default('train.eval_every')})")
    p.add_argument("--resume", type=Path, default=None, help="continue from a checkpoint (default: none)")
    p.add_argument("--log", type=Path, default=None, help="line-delimited JSON training log (default: stdout)")
    _add_common(p)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--data", type=Path, required=True, help="dataset directory")
    p.add_argument("--ckpt", type=Path, required=True, help="checkpoint file")
    p.add_argument("--split", choices=("test", "train", "all"), default="test", help="samples to score (default: test)")
    p.add_argument("--cdf", type=Path, default=None, help="write an SSIM CDF table as CSV (default: none)")
    p.add_argument("--metrics", type=Path, default=None,
                   help="write per-sample JSON lines id/ssim/l1 (default: none)")
    p.add_argument("--profile", choices=("base", "plus", "desk"), default=None,
                   help="expected checkpoint profile (default: accept any)")
    _add_common(p)

    p = sub.add_parser("render", help="render the spectrum for one transmitter position")
    p.add_argument("--ckpt", type=Path, required=True, help="checkpoint file")
    p.add_argument("--tx", required=True, help="transmitter position x,y,z in meters")
    p.add_argument("--out", type=Path, required=True, help="output PGM path")
    p.add_argument("--raw", type=Path, default=None, help="also write raw float32 spectrum (default: none)")
    p.add_argument("--tile-dump", type=Path, default=None, help="write per-tile primitive counts (default: none)")
    _add_common(p)

    p = sub.add_parser("verify", help="run finite-difference and oracle suites")
    p.add_argument("--suite", choices=(*verify.SUITES, "all"), default="all", help="suite to run (default: all)")
    return parser


def _run_config(args, flags: dict, defaults: bool = True) -> dict:
    return cfgmod.load_run_config(getattr(args, "config", None), flags=flags, defaults=defaults)


def cmd_synth(args) -> int:
    scene = data.load_scene(args.scene)
    if scene.tx_region is None:
        raise UsageError(f"{args.scene}: scene has no tx.region")
    out = data.make_synthetic_dataset(scene, args.out, args.train, args.test, seed=args.seed, fmt=args.format)
    lo, hi = scene.tx_region
    print(f"wrote {args.train + args.test} samples ({args.train} train / {args.test} test) to {out}")
    print(f"tx region {lo.tolist()} .. {hi.tolist()}  wavelength {scene.wavelength:.4f} m  "
          f"array {scene.rows}x{scene.cols}  scatterers {len(scene.scatterers)}")
    return EXIT_OK


def cmd_train(args) -> int:
    flags = {
        "model.profile": args.profile, "model.n_primitives": args.n_primitives, "train.steps": args.steps,
        "train.seed": args.seed, "train.eval_every": args.eval_every, "train.bypass": args.bypass,
        "runtime.workers": args.workers,
    }
    rc = _run_config(args, flags)
    set_workers(rc["runtime.workers"])
    ds = data.load_dataset(args.data)
    if args.resume is not None:
        explicit = _run_config(args, flags, defaults=False)
        state = load_checkpoint(args.resume, expected_profile=explicit.get("model.profile"))
        if "train.steps" in explicit:
            state.config.steps = rc["train.steps"]
        if "train.eval_every" in explicit:
            state.config.eval_every = rc["train.eval_every"]
    else:
        overrides = {}
        if rc["model.n_primitives"] is not None:
            overrides["n_primitives"] = rc["model.n_primitives"]
        mcfg = profile_config(rc["model.profile"], **overrides)
        mcfg.raster.tile = rc["raster.tile"]
        mcfg.raster.culling = rc["raster.culling"]
        tcfg = TrainConfig(steps=rc["train.steps"], seed=rc["train.seed"], eval_every=rc["train.eval_every"],
                           bypass=list(rc["train.bypass"]), profile=rc["model.profile"],
                           lr_networks=rc["train.lr_networks"], lr_positions=rc["train.lr_positions"],
                           lr_shape=rc["train.lr_shape"], lr_opacity=rc["train.lr_opacity"])
        Bypass.parse(tcfg.bypass)
        state = init_state(mcfg, tcfg, ds.bounds("train"))
    log_fh = open(args.log, "w") if args.log else sys.stdout
    test = ds.test

    def log(rec):
        log_fh.write(json.dumps(rec) + "\n")
        log_fh.flush()

    def eval_fn(st):
        rep = evaluate(test, st.model, st.bypass)
        return {"test_median_ssim": rep.median_ssim}

    diag = Path(str(args.out) + ".diag.npz")
    try:
        train(ds.train, state, log=log, eval_fn=eval_fn if test else None, diag_path=diag)
    except NonFiniteLoss as exc:
        print(f"error: {exc}", file=sys.stderr)
        print(f"diagnostics: {exc.dump_path}", file=sys.stderr)
        return EXIT_RUNTIME
    finally:
        if args.log:
            log_fh.close()
    save_checkpoint(state, args.out)
    print(f"checkpoint written to {args.out} at step {state.step}", file=sys.stderr)
    return EXIT_OK


def cmd_eval(args) -> int:
    rc = _run_config(args, {"runtime.workers": args.workers})
    set_workers(rc["runtime.workers"])
    state = load_checkpoint(args.ckpt, expected_profile=args.profile)
    ds = data.load_dataset(args.data)
    samples = ds.samples if args.split == "all" else ds.subset(args.split)
    rep = evaluate(samples, state.model, state.bypass)
    print(f"samples {len(rep.ids)}  median_ssim {rep.median_ssim:.6f}  mean_ssim {rep.mean_ssim:.6f}")
    if args.metrics:
        with open(args.metrics, "w") as fh:
            for rec in rep.records():
                fh.write(json.dumps(rec) + "\n")
    if args.cdf:
        with open(args.cdf, "w") as fh:
            fh.write("id,ssim,cdf\n")
            for sid, s, c in rep.cdf():
                fh.write(f"{sid},{s!r},{c!r}\n")
    return EXIT_OK


def _parse_tx(text: str) -> np.ndarray:
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise UsageError(f"--tx must be x,y,z, got {text!r}") from None
    if len(vals) != 3:
        raise UsageError(f"--tx must have three components, got {text!r}")
    return np.array(vals)


def cmd_render(args) -> int:
    rc = _run_config(args, {"runtime.workers": args.workers})
    set_workers(rc["runtime.workers"])
    tx = _parse_tx(args.tx)
    state = load_checkpoint(args.ckpt)
    res = state.model.forward(tx, state.bypass)
    spec = res.spectrum.value
    data.write_pgm(args.out, np.clip(spec, 0.0, 1.0))
    if args.raw:
        data.write_f32(args.raw, spec)
    if args.tile_dump:
        Path(args.tile_dump).write_text(raster.tile_report(res.raster_state))
    print(f"rendered {spec.shape[0]}x{spec.shape[1]} spectrum to {args.out} (max {float(spec.max()):.4f})")
    return EXIT_OK


def cmd_verify(args) -> int:
    checks = verify.run_suite(args.suite)
    for c in checks:
        print(c.line())
    failed = [c for c in checks if not c.passed]
    print(f"{len(checks) - len(failed)}/{len(checks)} checks passed")
    return EXIT_RUNTIME if failed else EXIT_OK


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "eval": cmd_eval, "render": cmd_render, "verify": cmd_verify}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (UsageError, cfgmod.ConfigKeyError, data.DatasetError, CheckpointError, FileNotFoundError,
            ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (RuntimeError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
