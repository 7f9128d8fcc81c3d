"""Planar Gaussian primitives on the azimuth/elevation plane.

Scales and opacity are stored in log / logit form so that any optimizer step
keeps them feasible. Per-query offsets are added in that stored domain.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag

COARSE, FINE = 0, 1

DEPTH_MIN, DEPTH_MAX = 0.1, 100.0

# stored per-primitive parameter names, in checkpoint order
PARAM_NAMES = ("azimuth_deg", "elevation_deg", "depth", "log_scale_x", "log_scale_y",
               "rotation_rad", "opacity_logit")
PARAM_GROUPS = {
    "azimuth_deg": "positions",
    "elevation_deg": "positions",
    "depth": "positions",
    "log_scale_x": "shape",
    "log_scale_y": "shape",
    "rotation_rad": "shape",
    "opacity_logit": "opacity",
}


@dataclass
class InitConfig:
    s_min: float = 0.5
    s_max: float = 8.0
    coarse_fraction: float = 0.3
    coarse_depth: tuple[float, float] = (20.0, 50.0)
    fine_depth: tuple[float, float] = (1.0, 20.0)
    anisotropy: tuple[float, float] = (1.0, 1.5)
    opacity: float = 0.3
    w_scale_coarse: float = 0.3
    w_scale_fine: float = 1.0

    def validate(self):
        if not self.s_min > 0 or self.s_min > self.s_max:
            raise ValueError(f"need 0 < s_min <= s_max, got s_min={self.s_min}, s_max={self.s_max}")
        if not 0 <= self.coarse_fraction <= 1:
            raise ValueError("coarse_fraction must lie in [0, 1]")


@dataclass
class PrimitiveSet:
    azimuth_deg: np.ndarray
    elevation_deg: np.ndarray
    depth: np.ndarray
    log_scale_x: np.ndarray
    log_scale_y: np.ndarray
    rotation_rad: np.ndarray
    opacity_logit: np.ndarray
    group: np.ndarray
    w_scale: np.ndarray

    def __len__(self):
        return len(self.azimuth_deg)

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: getattr(self, k) for k in PARAM_NAMES}

    @property
    def scale_x(self):
        return np.exp(self.log_scale_x)

    @property
    def scale_y(self):
        return np.exp(self.log_scale_y)

    @property
    def opacity(self):
        return ag._logistic(np.asarray(self.opacity_logit, dtype=np.float64))


def logit(p: float) -> float:
    return float(np.log(p / (1 - p)))


def init_primitives(n_total: int, seed: int, config: InitConfig | None = None,
                    dtype=np.float32) -> PrimitiveSet:
    config = config or InitConfig()
    if n_total < 1:
        raise ValueError(f"n_total must be >= 1, got {n_total}")
    config.validate()
    rng = np.random.default_rng(seed)
    n_coarse = int(round(config.coarse_fraction * n_total))
    n_fine = n_total - n_coarse

    az = rng.uniform(0.0, 360.0, n_total)
    el = rng.uniform(0.0, 90.0, n_total)
    depth = np.concatenate([rng.uniform(*config.coarse_depth, n_coarse),
                            rng.uniform(*config.fine_depth, n_fine)])
    group = np.concatenate([np.full(n_coarse, COARSE), np.full(n_fine, FINE)]).astype(np.int8)

    s_base = depth_scale(depth, config.s_min, config.s_max)
    sx = rng.uniform(*config.anisotropy, n_total) * s_base
    sy = rng.uniform(*config.anisotropy, n_total) * s_base
    rot = rng.uniform(0.0, np.pi, n_total)
    w_scale = np.where(group == COARSE, config.w_scale_coarse, config.w_scale_fine)

    return PrimitiveSet(
        azimuth_deg=az.astype(dtype),
        elevation_deg=el.astype(dtype),
        depth=depth.astype(dtype),
        log_scale_x=np.log(sx).astype(dtype),
        log_scale_y=np.log(sy).astype(dtype),
        rotation_rad=rot.astype(dtype),
        opacity_logit=np.full(n_total, logit(config.opacity), dtype=dtype),
        group=group,
        w_scale=w_scale.astype(dtype),
    )


def depth_scale(depth, s_min: float, s_max: float):
    """Base planar scale shrinking with normalized depth."""
    z_norm = (np.asarray(depth) - DEPTH_MIN) / (DEPTH_MAX - DEPTH_MIN)
    return s_min + (s_max - s_min) * np.exp(-z_norm)


def covariance_from_params(s_x, s_y, rho) -> np.ndarray:
    """R(rho) diag(s_x^2, s_y^2) R(rho)^T; broadcasts over leading shape."""
    s_x, s_y, rho = np.broadcast_arrays(*(np.asarray(v, dtype=np.float64) for v in (s_x, s_y, rho)))
    c, s = np.cos(rho), np.sin(rho)
    vx, vy = s_x ** 2, s_y ** 2
    out = np.empty(s_x.shape + (2, 2))
    out[..., 0, 0] = c * c * vx + s * s * vy
    out[..., 1, 1] = s * s * vx + c * c * vy
    out[..., 0, 1] = out[..., 1, 0] = c * s * (vx - vy)
    return out


def project_domain(prims: dict[str, np.ndarray]) -> None:
    """In-place feasibility projection after an optimizer step."""
    az = prims["azimuth_deg"]
    az[...] = np.mod(az, 360.0)
    # mod can round up to exactly 360 for tiny negative inputs
    az[az >= 360.0] = 0.0
    np.clip(prims["elevation_deg"], 0.0, 90.0, out=prims["elevation_deg"])
    np.clip(prims["depth"], DEPTH_MIN, DEPTH_MAX, out=prims["depth"])


@dataclass
class EffectiveAttributes:
    """Per-query rendering attributes as graph tensors.

    ``mean`` is (N, 2) degrees, ``conic`` is (N, 3) holding the upper triangle
    (a, b, c) of the inverse covariance, ``opacity`` (N,), ``coef`` (N, 2) real
    and imaginary parts, ``depth`` a plain array used for ordering.
    """
    mean: ag.Tensor
    conic: ag.Tensor
    opacity: ag.Tensor
    coef: ag.Tensor
    depth: np.ndarray
    scale_x: ag.Tensor
    scale_y: ag.Tensor
    rotation: ag.Tensor

    def covariance(self) -> np.ndarray:
        return covariance_from_params(self.scale_x.value, self.scale_y.value, self.rotation.value)


def conic_from_log_scales(log_sx: ag.Tensor, log_sy: ag.Tensor, rho: ag.Tensor) -> ag.Tensor:
    """Inverse covariance upper triangle as an (N, 3) graph tensor."""
    inv_vx = ag.exp(log_sx * -2.0)
    inv_vy = ag.exp(log_sy * -2.0)
    c, s = ag.cos(rho), ag.sin(rho)
    cc, ss, cs = c * c, s * s, c * s
    a = cc * inv_vx + ss * inv_vy
    b = cs * (inv_vx - inv_vy)
    d = ss * inv_vx + cc * inv_vy
    return ag.stack_columns([a, b, d])


def apply_offsets(base: dict[str, ag.Tensor], deltas: ag.Tensor | None, coef: ag.Tensor) -> EffectiveAttributes:
    """Combine stored primitive attributes with per-query offsets.

    ``base`` maps :data:`PARAM_NAMES` to graph leaves. ``deltas`` is (N, 4):
    rotation, log-scale x, log-scale y, opacity logit; ``None`` means zero.
    ``coef`` is (N, 2).
    """
    n = base["azimuth_deg"].shape[0]
    if coef.shape != (n, 2):
        raise ValueError(f"coefficients must be ({n}, 2), got {coef.shape}")
    rho, lsx, lsy, ologit = (base[k] for k in ("rotation_rad", "log_scale_x", "log_scale_y", "opacity_logit"))
    if deltas is not None:
        if deltas.shape != (n, 4):
            raise ValueError(f"offsets must be ({n}, 4), got {deltas.shape}")
        rho = rho + deltas[:, 0]
        lsx = lsx + deltas[:, 1]
        lsy = lsy + deltas[:, 2]
        ologit = ologit + deltas[:, 3]
    mean = ag.stack_columns([base["azimuth_deg"], base["elevation_deg"]])
    return EffectiveAttributes(
        mean=mean,
        conic=conic_from_log_scales(lsx, lsy, rho),
        opacity=ag.logistic(ologit),
        coef=coef,
        depth=np.asarray(base["depth"].value),
        scale_x=ag.exp(lsx),
        scale_y=ag.exp(lsy),
        rotation=rho,
    )
