"""Parameter initialization and the dense layers shared by the networks."""
from __future__ import annotations

import numpy as np

from . import autograd as ag


def init_linear(store: ag.ParamStore, name: str, n_in: int, n_out: int, rng: np.random.Generator,
                scale: float = 1.0, dtype=np.float32) -> None:
    # uniform fan-in init; scale=0 gives an exact zero map
    bound = scale / np.sqrt(n_in)
    store.add(f"{name}.w", rng.uniform(-bound, bound, (n_in, n_out)), dtype=dtype)
    store.add(f"{name}.b", np.zeros(n_out), dtype=dtype)


def linear(x: ag.Tensor, store: ag.ParamStore, name: str) -> ag.Tensor:
    return x @ store[f"{name}.w"] + store[f"{name}.b"]


def init_layer_norm(store: ag.ParamStore, name: str, width: int, dtype=np.float32) -> None:
    store.add(f"{name}.gain", np.ones(width), dtype=dtype)
    store.add(f"{name}.bias", np.zeros(width), dtype=dtype)


def layer_norm(x: ag.Tensor, store: ag.ParamStore, name: str) -> ag.Tensor:
    return ag.layer_norm(x, store[f"{name}.gain"], store[f"{name}.bias"])


def init_residual_ffn(store: ag.ParamStore, name: str, n_in: int, n_out: int, depth: int, width: int,
                      rng: np.random.Generator, out_scale: float = 1.0, dtype=np.float32) -> None:
    if depth < 1:
        raise ValueError("residual FFN depth must be >= 1")
    init_linear(store, f"{name}.in", n_in, width, rng, dtype=dtype)
    for k in range(depth):
        init_linear(store, f"{name}.block{k}.fc1", width, width, rng, dtype=dtype)
        # second block layer starts small so the skip path dominates early
        init_linear(store, f"{name}.block{k}.fc2", width, width, rng, scale=0.5, dtype=dtype)
    init_linear(store, f"{name}.out", width, n_out, rng, scale=out_scale, dtype=dtype)


def residual_ffn(x: ag.Tensor, store: ag.ParamStore, name: str, depth: int) -> ag.Tensor:
    h = linear(x, store, f"{name}.in")
    for k in range(depth):
        r = ag.relu(linear(h, store, f"{name}.block{k}.fc1"))
        h = h + linear(r, store, f"{name}.block{k}.fc2")
    return linear(h, store, f"{name}.out")


def residual_ffn_param_count(n_in: int, n_out: int, depth: int, width: int) -> int:
    return (n_in + 1) * width + depth * 2 * (width + 1) * width + (width + 1) * n_out
