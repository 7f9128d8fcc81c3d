"""Tile-based differentiable rasterizer for planar Gaussians on the angular grid.

Pixels are 1-degree cells by default; pixel (u, v) has its center at
((u + 0.5) * res_az, (v + 0.5) * res_el) degrees. Azimuth is periodic: every
displacement is wrapped into [-180, 180) before evaluating a Gaussian, which
is the same as duplicating seam-crossing splats at +-360.

Each tile owns its pixels and writes per-primitive gradients into its own
buffer row; rows are summed in tile order, so results do not depend on the
number of worker threads.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np
from numba import njit, prange

from . import autograd as ag

CULL_MAHALANOBIS_SQ = 9.0  # 3 sigma


class RasterError(ValueError):
    pass


@dataclass
class RasterConfig:
    n_az: int = 360
    n_el: int = 90
    tile: int = 16
    culling: bool = True
    debug: bool = False

    @property
    def res_az(self) -> float:
        return 360.0 / self.n_az

    @property
    def res_el(self) -> float:
        return 90.0 / self.n_el

    @property
    def tiles(self) -> tuple[int, int]:
        return -(-self.n_az // self.tile), -(-self.n_el // self.tile)


def pixel_centers(cfg: RasterConfig) -> tuple[np.ndarray, np.ndarray]:
    return (np.arange(cfg.n_az) + 0.5) * cfg.res_az, (np.arange(cfg.n_el) + 0.5) * cfg.res_el


def sort_primitives(depth) -> np.ndarray:
    """Stable ascending depth order (nearest first)."""
    depth = np.asarray(depth)
    if np.isnan(depth).any():
        raise RasterError(f"NaN depth for primitives {np.flatnonzero(np.isnan(depth)).tolist()}")
    return np.argsort(depth, kind="stable")


# ---------------------------------------------------------------------------
# kernels


@njit(cache=True, inline="always")
def _wrap(dx):
    return dx - 360.0 * math.floor((dx + 180.0) / 360.0)


@njit(cache=True)
def _bin_tiles(mean, conic, order, n_az, n_el, res_az, res_el, tile, cull):
    n_tx = (n_az + tile - 1) // tile
    n_ty = (n_el + tile - 1) // tile
    n_tiles = n_tx * n_ty
    n = order.shape[0]
    hit = np.zeros((n, n_tiles), dtype=np.bool_)
    col = np.zeros(n_tx, dtype=np.bool_)
    for r in range(n):
        i = order[r]
        if not cull:
            hit[r, :] = True
            continue
        a = conic[i, 0]
        b = conic[i, 1]
        c = conic[i, 2]
        det = a * c - b * b
        r_az = 3.0 * math.sqrt(c / det)
        r_el = 3.0 * math.sqrt(a / det)
        my = mean[i, 1]
        v_lo = max(0, int(math.ceil((my - r_el) / res_el - 0.5)))
        v_hi = min(n_el - 1, int(math.floor((my + r_el) / res_el - 0.5)))
        if v_hi < v_lo:
            continue
        col[:] = False
        mx = mean[i, 0] - 360.0 * math.floor(mean[i, 0] / 360.0)
        if 2.0 * r_az >= 360.0:
            col[:] = True
        else:
            u_lo = int(math.ceil((mx - r_az) / res_az - 0.5))
            u_hi = int(math.floor((mx + r_az) / res_az - 0.5))
            if u_hi - u_lo + 1 >= n_az:
                col[:] = True
            else:
                for u in range(u_lo, u_hi + 1):
                    col[(u % n_az) // tile] = True
        for tx in range(n_tx):
            if col[tx]:
                for ty in range(v_lo // tile, v_hi // tile + 1):
                    hit[r, tx * n_ty + ty] = True
    ptr = np.zeros(n_tiles + 1, dtype=np.int64)
    for t in range(n_tiles):
        cnt = 0
        for r in range(n):
            if hit[r, t]:
                cnt += 1
        ptr[t + 1] = ptr[t] + cnt
    ids = np.empty(ptr[n_tiles], dtype=np.int64)
    for t in range(n_tiles):
        k = ptr[t]
        for r in range(n):
            if hit[r, t]:
                ids[k] = order[r]
                k += 1
    return ptr, ids


@njit(cache=True, parallel=True)
def _forward(mean, conic, opac, coef, ptr, ids, n_az, n_el, res_az, res_el, tile, cull, out, t_final):
    n_ty = (n_el + tile - 1) // tile
    n_tiles = ptr.shape[0] - 1
    for t in prange(n_tiles):
        tx = t // n_ty
        ty = t % n_ty
        for u in range(tx * tile, min((tx + 1) * tile, n_az)):
            px = (u + 0.5) * res_az
            for v in range(ty * tile, min((ty + 1) * tile, n_el)):
                py = (v + 0.5) * res_el
                trans = 1.0
                cr = 0.0
                ci = 0.0
                for k in range(ptr[t], ptr[t + 1]):
                    i = ids[k]
                    dx = _wrap(px - mean[i, 0])
                    dy = py - mean[i, 1]
                    q = conic[i, 0] * dx * dx + 2.0 * conic[i, 1] * dx * dy + conic[i, 2] * dy * dy
                    if cull and q > CULL_MAHALANOBIS_SQ:
                        continue
                    a = opac[i] * math.exp(-0.5 * q)
                    cr += coef[i, 0] * a * trans
                    ci += coef[i, 1] * a * trans
                    trans *= 1.0 - a
                out[u, v, 0] = cr
                out[u, v, 1] = ci
                t_final[u, v] = trans


@njit(cache=True, parallel=True)
def _backward(mean, conic, opac, coef, ptr, ids, n_az, n_el, res_az, res_el, tile, cull, gout, gbuf):
    # gbuf[t, i, :] = d(mu_x, mu_y, conic_a, conic_b, conic_c, opacity, re, im)
    n_ty = (n_el + tile - 1) // tile
    n_tiles = ptr.shape[0] - 1
    for t in prange(n_tiles):
        tx = t // n_ty
        ty = t % n_ty
        length = ptr[t + 1] - ptr[t]
        s_a = np.empty(length)
        s_t = np.empty(length)
        s_w = np.empty(length)
        s_dx = np.empty(length)
        s_dy = np.empty(length)
        s_on = np.zeros(length, dtype=np.bool_)
        for u in range(tx * tile, min((tx + 1) * tile, n_az)):
            px = (u + 0.5) * res_az
            for v in range(ty * tile, min((ty + 1) * tile, n_el)):
                gr = gout[u, v, 0]
                gi = gout[u, v, 1]
                if gr == 0.0 and gi == 0.0:
                    continue
                py = (v + 0.5) * res_el
                trans = 1.0
                for kk in range(length):
                    i = ids[ptr[t] + kk]
                    dx = _wrap(px - mean[i, 0])
                    dy = py - mean[i, 1]
                    q = conic[i, 0] * dx * dx + 2.0 * conic[i, 1] * dx * dy + conic[i, 2] * dy * dy
                    if cull and q > CULL_MAHALANOBIS_SQ:
                        s_on[kk] = False
                        continue
                    w = math.exp(-0.5 * q)
                    a = opac[i] * w
                    s_on[kk] = True
                    s_a[kk] = a
                    s_t[kk] = trans
                    s_w[kk] = w
                    s_dx[kk] = dx
                    s_dy[kk] = dy
                    trans *= 1.0 - a
                br = 0.0
                bi = 0.0
                for kk in range(length - 1, -1, -1):
                    if not s_on[kk]:
                        continue
                    i = ids[ptr[t] + kk]
                    a = s_a[kk]
                    tr = s_t[kk]
                    w = s_w[kk]
                    dx = s_dx[kk]
                    dy = s_dy[kk]
                    da = tr * (gr * (coef[i, 0] - br) + gi * (coef[i, 1] - bi))
                    gbuf[t, i, 6] += gr * a * tr
                    gbuf[t, i, 7] += gi * a * tr
                    gbuf[t, i, 5] += da * w
                    dq = -0.5 * da * opac[i] * w
                    gbuf[t, i, 0] += -2.0 * dq * (conic[i, 0] * dx + conic[i, 1] * dy)
                    gbuf[t, i, 1] += -2.0 * dq * (conic[i, 1] * dx + conic[i, 2] * dy)
                    gbuf[t, i, 2] += dq * dx * dx
                    gbuf[t, i, 3] += 2.0 * dq * dx * dy
                    gbuf[t, i, 4] += dq * dy * dy
                    br = coef[i, 0] * a + (1.0 - a) * br
                    bi = coef[i, 1] * a + (1.0 - a) * bi


# ---------------------------------------------------------------------------
# python surface


@dataclass
class RasterState:
    mean: np.ndarray
    conic: np.ndarray
    opacity: np.ndarray
    coef: np.ndarray
    order: np.ndarray
    ptr: np.ndarray
    ids: np.ndarray
    cfg: RasterConfig
    transmittance: np.ndarray = field(repr=False, default=None)

    def tile_counts(self) -> np.ndarray:
        """(tiles_az, tiles_el) number of primitives binned into each tile."""
        return np.diff(self.ptr).reshape(self.cfg.tiles)


def _check_conic(conic: np.ndarray) -> None:
    a, b, c = conic[:, 0], conic[:, 1], conic[:, 2]
    bad = ~((a > 0) & (a * c - b * b > 0) & np.isfinite(conic).all(axis=1))
    if bad.any():
        raise RasterError(f"conic is not positive definite for primitives {np.flatnonzero(bad).tolist()}")


def rasterize_arrays(mean, conic, opacity, coef, depth, cfg: RasterConfig | None = None):
    """Render the (n_az, n_el, 2) complex field; returns (field, state)."""
    cfg = cfg or RasterConfig()
    dtype = np.result_type(mean, conic, opacity, coef)
    mean = np.ascontiguousarray(mean, dtype=dtype)
    conic = np.ascontiguousarray(conic, dtype=dtype)
    opacity = np.ascontiguousarray(opacity, dtype=dtype)
    coef = np.ascontiguousarray(coef, dtype=dtype)
    n = mean.shape[0]
    if conic.shape != (n, 3) or opacity.shape != (n,) or coef.shape != (n, 2) or len(depth) != n:
        raise RasterError("attribute arrays disagree on primitive count")
    _check_conic(conic)
    order = sort_primitives(depth)
    ptr, ids = _bin_tiles(mean, conic, order, cfg.n_az, cfg.n_el, cfg.res_az, cfg.res_el, cfg.tile,
                          cfg.culling)
    out = np.zeros((cfg.n_az, cfg.n_el, 2), dtype=dtype)
    t_final = np.zeros((cfg.n_az, cfg.n_el), dtype=dtype)
    _forward(mean, conic, opacity, coef, ptr, ids, cfg.n_az, cfg.n_el, cfg.res_az, cfg.res_el, cfg.tile,
             cfg.culling, out, t_final)
    if cfg.debug and not ((t_final >= 0) & (t_final <= 1)).all():
        raise RasterError("transmittance left [0, 1]")
    state = RasterState(mean, conic, opacity, coef, order, ptr, ids, cfg, t_final)
    return out, state


def rasterize_backward(upstream: np.ndarray, state: RasterState):
    """Adjoints (d_mean, d_conic, d_opacity, d_coef) for an upstream d loss / d field."""
    cfg = state.cfg
    if upstream.shape != (cfg.n_az, cfg.n_el, 2):
        raise RasterError(f"upstream shape {upstream.shape} does not match the forward grid "
                          f"({cfg.n_az}, {cfg.n_el}, 2)")
    dtype = state.mean.dtype
    n = state.mean.shape[0]
    n_tiles = state.ptr.shape[0] - 1
    gbuf = np.zeros((n_tiles, n, 8), dtype=dtype)
    _backward(state.mean, state.conic, state.opacity, state.coef, state.ptr, state.ids, cfg.n_az, cfg.n_el,
              cfg.res_az, cfg.res_el, cfg.tile, cfg.culling,
              np.ascontiguousarray(upstream, dtype=dtype), gbuf)
    # ordered reduction over tiles
    g = np.zeros((n, 8), dtype=dtype)
    for t in range(n_tiles):
        g += gbuf[t]
    return g[:, 0:2].copy(), g[:, 2:5].copy(), g[:, 5].copy(), g[:, 6:8].copy()


def rasterize(mean: ag.Tensor, conic: ag.Tensor, opacity: ag.Tensor, coef: ag.Tensor, depth,
              cfg: RasterConfig | None = None) -> tuple[ag.Tensor, RasterState]:
    """Graph node wrapping the kernel pair; output is the (n_az, n_el, 2) field."""
    out, state = rasterize_arrays(mean.value, conic.value, opacity.value, coef.value, depth, cfg)

    def bw(g):
        dm, dc, do, dk = rasterize_backward(g, state)
        return (dm.astype(mean.dtype), dc.astype(conic.dtype), do.astype(opacity.dtype),
                dk.astype(coef.dtype))

    return ag.make(out, (mean, conic, opacity, coef), bw, "rasterize"), state


def power(field: ag.Tensor) -> ag.Tensor:
    """|C|^2 per pixel."""
    return ag.reduce_sum(ag.square(field), axis=2)


def tile_report(state: RasterState) -> str:
    counts = state.tile_counts()
    lines = [f"# tiles {counts.shape[0]}x{counts.shape[1]} tile={state.cfg.tile} "
             f"primitives={state.mean.shape[0]} total_refs={int(counts.sum())}"]
    for tx in range(counts.shape[0]):
        lines.append(" ".join(str(int(c)) for c in counts[tx]))
    return "\n".join(lines) + "\n"


def set_workers(n: int | None) -> int:
    """Cap the kernel thread count (bounded by NUMBA_NUM_THREADS)."""
    if n is not None:
        numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))
    return numba.get_num_threads()
