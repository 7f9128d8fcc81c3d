"""Training loss and evaluation metrics on spectra."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag

L1_WEIGHT = 0.7
SSIM_WEIGHT = 0.3


@dataclass(frozen=True)
class SsimConfig:
    window: int = 11
    sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    data_range: float = 1.0

    @property
    def c1(self) -> float:
        return (self.k1 * self.data_range) ** 2

    @property
    def c2(self) -> float:
        return (self.k2 * self.data_range) ** 2

    def kernel(self) -> np.ndarray:
        x = np.arange(self.window) - (self.window - 1) / 2
        g = np.exp(-(x ** 2) / (2 * self.sigma ** 2))
        return g / g.sum()


def _check(pred: np.ndarray, target: np.ndarray) -> None:
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")


def _valid_filter(x: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Separable 'valid' correlation with the 1-d kernel along both axes."""
    n = len(k)
    h, w = x.shape
    if h < n or w < n:
        raise ValueError(f"image {x.shape} smaller than the {n}x{n} SSIM window")
    rows = sum(k[i] * x[i:h - n + 1 + i] for i in range(n))
    return sum(k[j] * rows[:, j:w - n + 1 + j] for j in range(n))


def _valid_filter_adjoint(g: np.ndarray, k: np.ndarray, shape) -> np.ndarray:
    n = len(k)
    h, w = shape
    rows = np.zeros((g.shape[0], w))
    for j in range(n):
        rows[:, j:w - n + 1 + j] += k[j] * g
    out = np.zeros((h, w))
    for i in range(n):
        out[i:h - n + 1 + i] += k[i] * rows
    return out


def _ssim_terms(x, y, cfg: SsimConfig):
    k = cfg.kernel()
    mx = _valid_filter(x, k)
    my = _valid_filter(y, k)
    exx = _valid_filter(x * x, k)
    eyy = _valid_filter(y * y, k)
    exy = _valid_filter(x * y, k)
    vx = exx - mx * mx
    vy = eyy - my * my
    cxy = exy - mx * my
    num1 = 2 * mx * my + cfg.c1
    num2 = 2 * cxy + cfg.c2
    den1 = mx * mx + my * my + cfg.c1
    den2 = vx + vy + cfg.c2
    return k, mx, my, num1, num2, den1, den2


def ssim_map(pred, target, cfg: SsimConfig | None = None) -> np.ndarray:
    cfg = cfg or SsimConfig()
    x = np.asarray(pred, dtype=np.float64)
    y = np.asarray(target, dtype=np.float64)
    _check(x, y)
    _, _, _, num1, num2, den1, den2 = _ssim_terms(x, y, cfg)
    return (num1 * num2) / (den1 * den2)


def ssim(pred, target, cfg: SsimConfig | None = None) -> float:
    """Mean local SSIM over the valid region."""
    return float(ssim_map(pred, target, cfg).mean())


def ssim_graph(pred: ag.Tensor, target: np.ndarray, cfg: SsimConfig | None = None) -> ag.Tensor:
    """Differentiable mean SSIM w.r.t. ``pred`` (target is constant)."""
    cfg = cfg or SsimConfig()
    x = pred.value.astype(np.float64)
    y = np.asarray(target, dtype=np.float64)
    _check(x, y)
    k, mx, my, num1, num2, den1, den2 = _ssim_terms(x, y, cfg)
    s = (num1 * num2) / (den1 * den2)
    m = s.size

    def bw(g):
        gs = float(g) / m
        # S = num1*num2/(den1*den2); partials w.r.t. filtered moments
        d_num1 = gs * num2 / (den1 * den2)
        d_num2 = gs * num1 / (den1 * den2)
        d_den1 = -gs * s / den1
        d_den2 = -gs * s / den2
        # num1 = 2 mx my, num2 = 2 (exy - mx my), den1 = mx^2 + my^2, den2 = exx - mx^2 + eyy - my^2
        d_mx = 2 * my * d_num1 - 2 * my * d_num2 + 2 * mx * d_den1 - 2 * mx * d_den2
        d_exx = d_den2
        d_exy = 2 * d_num2
        gx = (_valid_filter_adjoint(d_mx, k, x.shape)
              + 2 * x * _valid_filter_adjoint(d_exx, k, x.shape)
              + y * _valid_filter_adjoint(d_exy, k, x.shape))
        return (gx.astype(pred.dtype),)

    return ag.make(np.asarray(s.mean(), dtype=pred.dtype), (pred,), bw, "ssim")


def l1(pred, target) -> float:
    pred, target = np.asarray(pred), np.asarray(target)
    _check(pred, target)
    return float(np.abs(pred.astype(np.float64) - target).mean())


def l1_graph(pred: ag.Tensor, target: np.ndarray) -> ag.Tensor:
    target = np.asarray(target, dtype=pred.dtype)
    _check(pred.value, target)
    diff = pred.value - target
    n = diff.size
    return ag.make(np.asarray(np.abs(diff).mean(), dtype=pred.dtype), (pred,),
                   lambda g: ((g / n) * np.sign(diff).astype(pred.dtype),), "l1")


def composite_loss(pred: ag.Tensor, target: np.ndarray, cfg: SsimConfig | None = None) -> ag.Tensor:
    """0.7 * L1 + 0.3 * (1 - SSIM)."""
    return l1_graph(pred, target) * L1_WEIGHT + (1.0 - ssim_graph(pred, target, cfg)) * SSIM_WEIGHT


def median_ssim(values) -> float:
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise ValueError("empty metric list")
    return float(np.median(values))


def cdf_table(ids, values) -> list[tuple[int, float, float]]:
    """Rows (id, ssim, cumulative fraction) sorted ascending by SSIM."""
    values = np.asarray(values, dtype=np.float64)
    order = np.argsort(values, kind="stable")
    n = len(values)
    return [(int(ids[i]), float(values[i]), (r + 1) / n) for r, i in enumerate(order)]
