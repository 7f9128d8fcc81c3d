"""Bilinear spatial transformer.

Per-primitive features are pooled onto a fixed angular grid with tent
weights, mixed by a Transformer encoder over the grid tokens, and spread back
to primitives with the same weights. The attention sequence length is the
grid size, whatever the primitive count.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from . import nn


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ClusterGrid:
    n_c: int

    def __post_init__(self):
        side = math.isqrt(self.n_c)
        if side * side != self.n_c or side < 1:
            raise ConfigError(f"cluster count must be a perfect square, got {self.n_c}")

    @property
    def side(self) -> int:
        return math.isqrt(self.n_c)

    @property
    def d_phi(self) -> float:
        return 360.0 / self.side

    @property
    def d_theta(self) -> float:
        return 90.0 / self.side

    def points(self) -> tuple[np.ndarray, np.ndarray]:
        """Grid azimuths and elevations, azimuth-major (index = ia * side + ie)."""
        ia, ie = np.meshgrid(np.arange(self.side), np.arange(self.side), indexing="ij")
        return (ia.ravel() * self.d_phi).astype(np.float64), ((ie.ravel() + 0.5) * self.d_theta).astype(np.float64)


def wrap_deg(x):
    """Map angle differences into [-180, 180)."""
    return np.mod(np.asarray(x, dtype=np.float64) + 180.0, 360.0) - 180.0


def azimuth_distance(phi_i, phi_j):
    d = np.abs(np.asarray(phi_i, dtype=np.float64) - phi_j) % 360.0
    return np.minimum(d, 360.0 - d)


def bilinear_weight(prim: tuple[float, float], point: tuple[float, float], grid: ClusterGrid) -> float:
    d_phi = azimuth_distance(prim[0], point[0])
    d_theta = abs(prim[1] - point[1])
    return float(max(0.0, 1 - d_phi / grid.d_phi) * max(0.0, 1 - d_theta / grid.d_theta))


def weight_matrix(grid: ClusterGrid, az, el) -> np.ndarray:
    """Dense (n_c, n_p) tent weights."""
    gphi, gtheta = grid.points()
    az = np.asarray(az, dtype=np.float64)
    el = np.asarray(el, dtype=np.float64)
    t_phi = np.maximum(0.0, 1 - azimuth_distance(az[None, :], gphi[:, None]) / grid.d_phi)
    t_theta = np.maximum(0.0, 1 - np.abs(el[None, :] - gtheta[:, None]) / grid.d_theta)
    return t_phi * t_theta


def membership(grid: ClusterGrid, az, el) -> list[np.ndarray]:
    """Sorted primitive indices associated with each grid point (closed support)."""
    gphi, gtheta = grid.points()
    az = np.asarray(az, dtype=np.float64)
    el = np.asarray(el, dtype=np.float64)
    inside = (azimuth_distance(az[None, :], gphi[:, None]) <= grid.d_phi) & \
             (np.abs(el[None, :] - gtheta[:, None]) <= grid.d_theta)
    return [np.flatnonzero(row) for row in inside]


def weight_matrix_graph(grid: ClusterGrid, az: ag.Tensor, el: ag.Tensor) -> ag.Tensor:
    """Tent weights as a graph node, differentiable in primitive positions (a.e.)."""
    gphi, gtheta = grid.points()
    dt = az.dtype
    delta_phi = wrap_deg(az.value.astype(np.float64)[None, :] - gphi[:, None])
    delta_theta = el.value.astype(np.float64)[None, :] - gtheta[:, None]
    t_phi = 1 - np.abs(delta_phi) / grid.d_phi
    t_theta = 1 - np.abs(delta_theta) / grid.d_theta
    on_phi = t_phi > 0
    on_theta = t_theta > 0
    t_phi = np.where(on_phi, t_phi, 0.0)
    t_theta = np.where(on_theta, t_theta, 0.0)
    w = (t_phi * t_theta).astype(dt)
    dphi = (-np.sign(delta_phi) / grid.d_phi) * on_phi * t_theta
    dtheta = (-np.sign(delta_theta) / grid.d_theta) * on_theta * t_phi

    def bw(g):
        g = g.astype(np.float64)
        return (g * dphi).sum(axis=0).astype(dt), (g * dtheta).sum(axis=0).astype(dt)

    return ag.make(w, (az, el), bw, "bilinear_weights")


def aggregate(features: ag.Tensor, weights: ag.Tensor) -> ag.Tensor:
    """Normalized weighted sum per grid point; empty clusters give zero rows."""
    return ag.safe_div(weights @ features, ag.reduce_sum(weights, axis=1))


def distribute(cluster_features: ag.Tensor, weights: ag.Tensor) -> ag.Tensor:
    """Inverse bilinear interpolation back onto primitives."""
    wt = ag.transpose(weights)
    total = ag.reduce_sum(wt, axis=1)
    if np.any(total.value <= 0):
        bad = np.flatnonzero(total.value <= 0)
        raise ValueError(f"primitives {bad.tolist()} have zero total grid weight")
    return ag.safe_div(wt @ cluster_features, total)


# ---------------------------------------------------------------------------
# transformer encoder


@dataclass
class EncoderConfig:
    width: int = 128
    n_layers: int = 3
    n_heads: int = 4
    ffn_width: int = 256

    def validate(self):
        if self.width % self.n_heads:
            raise ConfigError(f"feature width {self.width} is not divisible by {self.n_heads} heads")


def init_encoder(store: ag.ParamStore, name: str, cfg: EncoderConfig, rng, dtype=np.float32) -> None:
    cfg.validate()
    d = cfg.width
    for layer in range(cfg.n_layers):
        p = f"{name}.layer{layer}"
        nn.init_layer_norm(store, f"{p}.ln1", d, dtype=dtype)
        for proj in ("q", "k", "v"):
            nn.init_linear(store, f"{p}.attn.{proj}", d, d, rng, dtype=dtype)
        nn.init_linear(store, f"{p}.attn.out", d, d, rng, scale=0.5, dtype=dtype)
        nn.init_layer_norm(store, f"{p}.ln2", d, dtype=dtype)
        nn.init_linear(store, f"{p}.ffn.fc1", d, cfg.ffn_width, rng, dtype=dtype)
        nn.init_linear(store, f"{p}.ffn.fc2", cfg.ffn_width, d, rng, scale=0.5, dtype=dtype)


def self_attention(x: ag.Tensor, store: ag.ParamStore, name: str, n_heads: int) -> ag.Tensor:
    q = nn.linear(x, store, f"{name}.q")
    k = nn.linear(x, store, f"{name}.k")
    v = nn.linear(x, store, f"{name}.v")
    dh = x.shape[1] // n_heads
    scale = 1.0 / math.sqrt(dh)
    heads = []
    for h in range(n_heads):
        cols = slice(h * dh, (h + 1) * dh)
        scores = (q[:, cols] @ ag.transpose(k[:, cols])) * scale
        heads.append(ag.softmax(scores) @ v[:, cols])
    return nn.linear(ag.concat(heads, axis=1), store, f"{name}.out")


def encode_global(g: ag.Tensor, store: ag.ParamStore, name: str, cfg: EncoderConfig) -> ag.Tensor:
    """Pre-norm Transformer encoder over the cluster tokens; shape preserving."""
    cfg.validate()
    x = g
    for layer in range(cfg.n_layers):
        p = f"{name}.layer{layer}"
        x = x + self_attention(nn.layer_norm(x, store, f"{p}.ln1"), store, f"{p}.attn", cfg.n_heads)
        h = ag.relu(nn.linear(nn.layer_norm(x, store, f"{p}.ln2"), store, f"{p}.ffn.fc1"))
        x = x + nn.linear(h, store, f"{p}.ffn.fc2")
    return x


# ---------------------------------------------------------------------------
# full module


@dataclass
class BstOutput:
    local: ag.Tensor        # linear projection F, (N_p, D)
    clusters: ag.Tensor     # G, (N_c, D)
    global_clusters: ag.Tensor  # G', (N_c, D)
    features: ag.Tensor     # F', (N_p, D)
    sequence_length: int


def init_bst(store: ag.ParamStore, n_in: int, grid: ClusterGrid, cfg: EncoderConfig, rng,
             dtype=np.float32) -> None:
    nn.init_linear(store, "bst.proj", n_in, cfg.width, rng, dtype=dtype)
    init_encoder(store, "bst.encoder", cfg, rng, dtype=dtype)


def bst_forward(joint: ag.Tensor, weights: ag.Tensor, store: ag.ParamStore, grid: ClusterGrid,
                cfg: EncoderConfig, bypass: bool = False) -> BstOutput:
    """``joint`` is concat(GS-PE, TX-PE) per primitive, ``weights`` the (N_c, N_p) tent matrix.

    With ``bypass`` the projected local features are returned unchanged.
    """
    f = nn.linear(joint, store, "bst.proj")
    if bypass:
        return BstOutput(f, None, None, f, 0)
    g = aggregate(f, weights)
    seq_len = g.shape[0]
    assert seq_len == grid.n_c, "attention sequence must be the cluster grid"
    g2 = encode_global(g, store, "bst.encoder", cfg)
    return BstOutput(f, g, g2, distribute(g2, weights), seq_len)
