"""Sinusoidal positional encodings for primitive and transmitter coordinates."""
from __future__ import annotations

import numpy as np

from . import autograd as ag
from .primitives import DEPTH_MAX, DEPTH_MIN

GS_ORDER = 8
TX_ORDER = 6


def embedding_width(order: int, dims: int = 3) -> int:
    return dims * (2 * order + 1)


def frequency_matrix(order: int, dims: int = 3, dtype=np.float64) -> np.ndarray:
    """(dims, dims*order) map so that ``t @ M`` has 2^k*pi*t_d at column k*dims + d."""
    m = np.zeros((dims, dims * order), dtype=dtype)
    for k in range(order):
        for d in range(dims):
            m[d, k * dims + d] = (2.0 ** k) * np.pi
    return m


def positional_encode(t: np.ndarray, order: int) -> np.ndarray:
    """[t, sin block, cos block] for a (3,) vector or an (n, 3) batch."""
    if order < 1:
        raise ValueError("order must be >= 1")
    t = np.asarray(t, dtype=np.float64)
    arg = t @ frequency_matrix(order, t.shape[-1])
    return np.concatenate([t, np.sin(arg), np.cos(arg)], axis=-1)


def positional_encode_graph(t: ag.Tensor, order: int) -> ag.Tensor:
    """Differentiable version of :func:`positional_encode` for (n, 3) tensors."""
    if order < 1:
        raise ValueError("order must be >= 1")
    freq = ag.Tensor(frequency_matrix(order, t.shape[1], dtype=t.dtype))
    arg = t @ freq
    return ag.concat([t, ag.sin(arg), ag.cos(arg)], axis=1)


def normalize_primitive_coords(az: ag.Tensor, el: ag.Tensor, depth: ag.Tensor) -> ag.Tensor:
    """Map (azimuth, elevation, depth) into [-1, 1]^3 as an (n, 3) tensor."""
    x = az * (1.0 / 180.0) - 1.0
    y = el * (1.0 / 45.0) - 1.0
    z = depth * (2.0 / (DEPTH_MAX - DEPTH_MIN)) - (2.0 * DEPTH_MIN / (DEPTH_MAX - DEPTH_MIN) + 1.0)
    return ag.stack_columns([x, y, z])


def normalize_tx(tx, lo, hi) -> np.ndarray:
    """Per-axis affine map of the bounding box [lo, hi] onto [-1, 1]."""
    tx, lo, hi = (np.asarray(v, dtype=np.float64) for v in (tx, lo, hi))
    span = np.where(hi > lo, hi - lo, 1.0)
    return 2.0 * (tx - lo) / span - 1.0
