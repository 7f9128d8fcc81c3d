"""Small model and data builders shared by the trainer and CLI tests."""
import numpy as np

from bisplat.bst import EncoderConfig
from bisplat.data import TxSample
from bisplat.heads import HeadConfig
from bisplat.model import WrfModel, profile_config
from bisplat.raster import RasterConfig
from bisplat.train import TrainConfig, init_state


def small_cfg(profile="base", n_primitives=24):
    return profile_config(profile, n_primitives=n_primitives, n_clusters=4, head=HeadConfig(depth=2, width=16),
                          encoder=EncoderConfig(width=16, n_layers=1, n_heads=2, ffn_width=32),
                          raster=RasterConfig(n_az=48, n_el=24, tile=8))


def small_samples(n=4, seed=0):
    """Targets rendered by a differently seeded model, scaled into [0, 1]."""
    teacher = WrfModel(small_cfg(), seed=seed + 100)
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        tx = rng.uniform(-1, 1, 3)
        p = teacher.render(tx).astype(np.float64)
        out.append(TxSample(i, tx, (p / p.max()).astype(np.float32)))
    return out


def small_state(seed=0, profile="base", bypass=(), **kw):
    tcfg = TrainConfig(steps=kw.pop("steps", 10), seed=seed, bypass=list(bypass), profile=profile, **kw)
    return init_state(small_cfg(profile), tcfg, (np.full(3, -1.0), np.full(3, 1.0)))
