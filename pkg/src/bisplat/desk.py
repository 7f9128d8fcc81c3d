"""Desk-scale synthetic task used by the acceptance suite and the scripts."""
from __future__ import annotations

import tempfile
import time
from dataclasses import dataclass
from pathlib import Path

from .data import load_dataset, make_synthetic_dataset, parse_scene
from .model import profile_config
from .train import TrainConfig, evaluate, init_state, train

DESK_SCENE = """\
# three point scatterers seen by a 4x4 half-wavelength array at 915 MHz
array.rows=4
array.cols=4
array.frequency_hz=915e6
rx.origin=0,0,0
tx.region=-1,-1,0,1,1,0.5
scatterer.a=4.0,1.5,1.5,1.0,0.0
scatterer.b=-2.0,3.5,2.5,0.8,0.3
scatterer.c=-1.0,-4.0,3.0,0.9,-0.2
"""


@dataclass
class DeskResult:
    seed: int
    bypass: tuple[str, ...]
    train_median_ssim: float
    test_median_ssim: float
    final_loss: float
    seconds: float


def make_desk_dataset(out_dir, n_train: int = 64, n_test: int = 16, seed: int = 0) -> Path:
    return make_synthetic_dataset(parse_scene(DESK_SCENE), out_dir, n_train, n_test, seed=seed)


def run_desk(seed: int = 0, bypass=(), steps: int = 2000, n_primitives: int = 200, data_dir=None,
             log=None, **train_overrides) -> DeskResult:
    t0 = time.perf_counter()
    with tempfile.TemporaryDirectory() as tmp:
        root = Path(data_dir) if data_dir is not None else make_desk_dataset(Path(tmp) / "desk")
        ds = load_dataset(root)
        mcfg = profile_config("desk", n_primitives=n_primitives)
        tcfg = TrainConfig(steps=steps, seed=seed, bypass=list(bypass), profile="desk", **train_overrides)
        state = init_state(mcfg, tcfg, ds.bounds("train"))
        curve = train(ds.train, state, log=log)
        bp = state.bypass
        tr = evaluate(ds.train, state.model, bp)
        te = evaluate(ds.test, state.model, bp)
    return DeskResult(seed, tuple(bypass), tr.median_ssim, te.median_ssim, curve[-1],
                      time.perf_counter() - t0)
