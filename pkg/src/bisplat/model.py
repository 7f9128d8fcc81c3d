"""Full TX-position to spectrum model: encodings, BST, heads, mixing, rendering."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import autograd as ag
from . import bst as bst_mod
from . import heads as heads_mod
from .encoding import (GS_ORDER, TX_ORDER, embedding_width, normalize_primitive_coords, normalize_tx,
                       positional_encode, positional_encode_graph)
from .primitives import PARAM_GROUPS, PARAM_NAMES, InitConfig, apply_offsets, init_primitives
from .raster import RasterConfig, power, rasterize


@dataclass
class ModelConfig:
    profile: str = "base"
    n_primitives: int = 500
    n_clusters: int = 64
    gs_order: int = GS_ORDER
    tx_order: int = TX_ORDER
    head: heads_mod.HeadConfig = field(default_factory=heads_mod.HeadConfig)
    encoder: bst_mod.EncoderConfig = field(default_factory=bst_mod.EncoderConfig)
    init: InitConfig = field(default_factory=InitConfig)
    raster: RasterConfig = field(default_factory=RasterConfig)

    @property
    def feat_width(self) -> int:
        return self.encoder.width

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        init = dict(d.pop("init"))
        for key in ("coarse_depth", "fine_depth", "anisotropy"):
            init[key] = tuple(init[key])
        return cls(head=heads_mod.HeadConfig(**d.pop("head")),
                   encoder=bst_mod.EncoderConfig(**d.pop("encoder")),
                   init=InitConfig(**init), raster=RasterConfig(**d.pop("raster")), **d)


def profile_config(name: str, **overrides) -> ModelConfig:
    """``base``, ``plus`` or ``desk`` (base shrunk to 200 primitives)."""
    if name in ("base", "desk"):
        cfg = ModelConfig(profile=name, n_primitives=500 if name == "base" else 200)
    elif name == "plus":
        cfg = ModelConfig(
            profile="plus",
            n_primitives=2000,
            head=heads_mod.HeadConfig(depth=12, width=256),
            encoder=bst_mod.EncoderConfig(width=256, n_layers=6, n_heads=4, ffn_width=512),
        )
    else:
        raise ValueError(f"unknown model profile {name!r}")
    return replace(cfg, **overrides)


@dataclass(frozen=True)
class Bypass:
    bst: bool = False
    dynamic: bool = False
    delta: bool = False

    @classmethod
    def parse(cls, names) -> "Bypass":
        names = set(names or ())
        unknown = names - {"bst", "dynamic", "delta"}
        if unknown:
            raise ValueError(f"unknown bypass branch(es): {sorted(unknown)}")
        return cls(bst="bst" in names, dynamic="dynamic" in names, delta="delta" in names)

    def names(self) -> list[str]:
        return [k for k in ("bst", "dynamic", "delta") if getattr(self, k)]


@dataclass
class ForwardResult:
    spectrum: ag.Tensor
    field: ag.Tensor
    attrs: object
    raster_state: object
    bst: bst_mod.BstOutput
    coef: ag.Tensor
    deltas: ag.Tensor | None


class WrfModel:
    def __init__(self, cfg: ModelConfig, seed: int = 0, dtype=np.float32):
        self.cfg = cfg
        self.dtype = np.dtype(dtype)
        self.grid = bst_mod.ClusterGrid(cfg.n_clusters)
        cfg.encoder.validate()
        self.store = ag.ParamStore()
        prims = init_primitives(cfg.n_primitives, seed, cfg.init, dtype=dtype)
        for name in PARAM_NAMES:
            self.store.add(f"prim.{name}", getattr(prims, name), group=PARAM_GROUPS[name], dtype=dtype)
        self.group = prims.group
        self.w_scale = prims.w_scale.astype(dtype)
        rng = np.random.default_rng([seed, 1])
        gs_w = embedding_width(cfg.gs_order)
        tx_w = embedding_width(cfg.tx_order)
        bst_mod.init_bst(self.store, gs_w + tx_w, self.grid, cfg.encoder, rng, dtype=dtype)
        heads_mod.init_heads(self.store, gs_w, tx_w, cfg.feat_width, cfg.head, rng, dtype=dtype)
        self.tx_lo = np.full(3, -1.0)
        self.tx_hi = np.full(3, 1.0)

    @property
    def n_primitives(self) -> int:
        return self.cfg.n_primitives

    def primitives(self) -> dict[str, ag.Tensor]:
        return {name: self.store[f"prim.{name}"] for name in PARAM_NAMES}

    def set_tx_bounds(self, lo, hi) -> None:
        # stored as f32 in checkpoints; round here so a resumed model matches exactly
        self.tx_lo = np.asarray(lo, dtype=np.float32).astype(np.float64)
        self.tx_hi = np.asarray(hi, dtype=np.float32).astype(np.float64)

    def tx_embedding(self, tx_position) -> np.ndarray:
        return positional_encode(normalize_tx(tx_position, self.tx_lo, self.tx_hi), self.cfg.tx_order)

    def forward(self, tx_position, bypass: Bypass = Bypass()) -> ForwardResult:
        cfg = self.cfg
        store = self.store
        base = self.primitives()
        n = cfg.n_primitives
        coords = normalize_primitive_coords(base["azimuth_deg"], base["elevation_deg"], base["depth"])
        gs_pe = positional_encode_graph(coords, cfg.gs_order)
        tx_pe = self.tx_embedding(tx_position).astype(self.dtype)
        joint = ag.concat([gs_pe, ag.Tensor(np.tile(tx_pe, (n, 1)))], axis=1)
        weights = bst_mod.weight_matrix_graph(self.grid, base["azimuth_deg"], base["elevation_deg"])
        bst_out = bst_mod.bst_forward(joint, weights, store, self.grid, cfg.encoder, bypass=bypass.bst)
        feats = bst_out.features

        amp_s, phase_s = heads_mod.static_head(gs_pe, store, cfg.head)
        if bypass.dynamic:
            amp_m = phase_m = None
        else:
            amp_m, phase_m = heads_mod.dynamic_head(feats, store, cfg.head)
        deltas = None if bypass.delta else heads_mod.delta_head(joint, feats, store, cfg.head)
        coef = heads_mod.mix(amp_s, phase_s, amp_m, phase_m, self.w_scale)
        attrs = apply_offsets(base, deltas, coef)
        fld, state = rasterize(attrs.mean, attrs.conic, attrs.opacity, attrs.coef, attrs.depth, cfg.raster)
        return ForwardResult(power(fld), fld, attrs, state, bst_out, coef, deltas)

    def render(self, tx_position, bypass: Bypass = Bypass()) -> np.ndarray:
        return self.forward(tx_position, bypass).spectrum.value
