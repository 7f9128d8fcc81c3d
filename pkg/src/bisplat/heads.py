"""Static, dynamic and offset networks plus hierarchy-based mixing."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from . import nn


@dataclass
class HeadConfig:
    depth: int = 4
    width: int = 128
    bound_rotation: float = float(np.pi / 4)
    bound_log_scale: float = float(np.log(2.0))
    bound_opacity: float = 2.0

    @property
    def bounds(self) -> np.ndarray:
        return np.array([self.bound_rotation, self.bound_log_scale, self.bound_log_scale,
                         self.bound_opacity])


def init_heads(store: ag.ParamStore, gs_width: int, tx_width: int, feat_width: int, cfg: HeadConfig,
               rng, dtype=np.float32) -> None:
    nn.init_residual_ffn(store, "static", gs_width, 2, cfg.depth, cfg.width, rng, dtype=dtype)
    nn.init_residual_ffn(store, "dynamic", feat_width, 2, cfg.depth, cfg.width, rng, out_scale=0.5,
                         dtype=dtype)
    nn.init_residual_ffn(store, "delta", gs_width + tx_width + feat_width, 4, cfg.depth, cfg.width, rng,
                         out_scale=0.1, dtype=dtype)


def static_head(gs_pe: ag.Tensor, store: ag.ParamStore, cfg: HeadConfig) -> tuple[ag.Tensor, ag.Tensor]:
    """TX-independent (amplitude >= 0, phase) per primitive."""
    out = nn.residual_ffn(gs_pe, store, "static", cfg.depth)
    return ag.softplus(out[:, 0]), out[:, 1]


def dynamic_head(features: ag.Tensor, store: ag.ParamStore, cfg: HeadConfig) -> tuple[ag.Tensor, ag.Tensor]:
    """Signed amplitude modulation and phase modulation from global-aware features."""
    out = nn.residual_ffn(features, store, "dynamic", cfg.depth)
    return out[:, 0], out[:, 1]


def delta_head(joint: ag.Tensor, features: ag.Tensor, store: ag.ParamStore, cfg: HeadConfig) -> ag.Tensor:
    """(N, 4) bounded offsets: rotation, log-scale x, log-scale y, opacity logit."""
    out = nn.residual_ffn(ag.concat([joint, features], axis=1), store, "delta", cfg.depth)
    return ag.tanh(out) * ag.Tensor(cfg.bounds.astype(out.dtype))


def mix(amp_static: ag.Tensor, phase_static: ag.Tensor, amp_mod: ag.Tensor | None,
        phase_mod: ag.Tensor | None, w_scale: np.ndarray) -> ag.Tensor:
    """Complex coefficient per primitive as an (N, 2) [real, imag] tensor.

    ``None`` modulation terms stand for zeroed dynamic outputs.
    """
    amp, phase = amp_static, phase_static
    if amp_mod is not None:
        amp = amp + amp_mod * ag.Tensor(np.asarray(w_scale, dtype=amp_mod.dtype))
    if phase_mod is not None:
        phase = phase + phase_mod
    return ag.stack_columns([amp * ag.cos(phase), amp * ag.sin(phase)])
