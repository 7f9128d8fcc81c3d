"""Independent reference computations used by the verification suites.

These deliberately avoid the production code paths: plain numpy loops over
primitives, direct formula evaluation, no tiling.
"""
from __future__ import annotations

import numpy as np


def brute_force_field(mean, cov, opacity, coef, depth, n_az=360, n_el=90) -> np.ndarray:
    """Front-to-back complex blend over all primitives at every pixel center.

    ``cov`` is (N, 2, 2); ``coef`` is complex (N,). Returns complex (n_az, n_el).
    """
    res_az, res_el = 360.0 / n_az, 90.0 / n_el
    px = (np.arange(n_az) + 0.5) * res_az
    py = (np.arange(n_el) + 0.5) * res_el
    gx, gy = np.meshgrid(px, py, indexing="ij")
    field = np.zeros((n_az, n_el), dtype=complex)
    trans = np.ones((n_az, n_el))
    for i in sorted(range(len(depth)), key=lambda k: (depth[k], k)):
        inv = np.linalg.inv(np.asarray(cov[i], dtype=np.float64))
        dx = (gx - mean[i][0] + 180.0) % 360.0 - 180.0
        dy = gy - mean[i][1]
        q = inv[0, 0] * dx * dx + (inv[0, 1] + inv[1, 0]) * dx * dy + inv[1, 1] * dy * dy
        a = opacity[i] * np.exp(-0.5 * q)
        field += coef[i] * a * trans
        trans = trans * (1 - a)
    return field


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x ** 2) / (2 * sigma ** 2))
    w = np.outer(g, g)
    return w / w.sum()


def ssim_direct(x, y, size: int = 11, sigma: float = 1.5, data_range: float = 1.0) -> float:
    """Mean SSIM by explicit window loops (valid positions only)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    w = gaussian_window(size, sigma)
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    h, wd = x.shape
    vals = []
    for i in range(h - size + 1):
        for j in range(wd - size + 1):
            px = x[i:i + size, j:j + size]
            py = y[i:i + size, j:j + size]
            mx = (w * px).sum()
            my = (w * py).sum()
            vx = (w * (px - mx) ** 2).sum()
            vy = (w * (py - my) ** 2).sum()
            cxy = (w * (px - mx) * (py - my)).sum()
            vals.append(((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx ** 2 + my ** 2 + c1) * (vx + vy + c2)))
    return float(np.mean(vals))


def beamform_direct(y: np.ndarray, positions: np.ndarray, wavelength: float, phi_deg: float,
                    theta_deg: float) -> float:
    """Power of a planar-array beamformer steered to one direction, by explicit sums."""
    phi, theta = np.radians(phi_deg), np.radians(theta_deg)
    u = np.array([np.cos(theta) * np.cos(phi), np.cos(theta) * np.sin(phi), np.sin(theta)])
    acc = 0j
    for val, p in zip(y.ravel(), positions.reshape(-1, 3)):
        acc += val * np.exp(-1j * 2 * np.pi / wavelength * (p @ u))
    return float(abs(acc) ** 2 / y.size)
