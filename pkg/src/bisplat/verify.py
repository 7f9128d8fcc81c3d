"""Finite-difference and oracle suites run by ``bisplat verify``."""
from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from . import autograd as ag
from . import bst, losses, oracles, raster
from .heads import HeadConfig
from .model import WrfModel, profile_config
from .primitives import covariance_from_params

GRAD_TOL = 1e-4
FD_STEP = 1e-4


@dataclass
class Check:
    name: str
    value: float
    tol: float
    passed: bool

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name:<44s} {self.value:.3e} (tol {self.tol:.1e})"


def _check(name, value, tol, le=True) -> Check:
    return Check(name, float(value), tol, bool(value < tol) if le else bool(value >= tol))


# ---------------------------------------------------------------------------
# gradients


def tiny_model(seed: int = 0, n_primitives: int = 8, n_clusters: int = 4, n_az: int = 36, n_el: int = 9):
    cfg = profile_config(
        "base", n_primitives=n_primitives, n_clusters=n_clusters,
        head=HeadConfig(depth=2, width=8),
        encoder=bst.EncoderConfig(width=8, n_layers=1, n_heads=2, ffn_width=16),
        raster=raster.RasterConfig(n_az=n_az, n_el=n_el, tile=4, culling=False),
    )
    # larger footprints so every primitive touches the coarse grid
    cfg = replace(cfg, init=replace(cfg.init, s_min=4.0, s_max=12.0))
    return WrfModel(cfg, seed=seed, dtype=np.float64)


PARAM_CLASSES = {
    "prim.azimuth_deg": "azimuth",
    "prim.elevation_deg": "elevation",
    "prim.depth": "depth",
    "prim.log_scale_x": "log-scale",
    "prim.log_scale_y": "log-scale",
    "prim.rotation_rad": "rotation",
    "prim.opacity_logit": "opacity-logit",
}


def loss_gradient_errors(seed: int = 0, per_tensor: int = 4, h: float = FD_STEP) -> dict[str, float]:
    """Max norm-wise relative error of analytic vs central-difference gradients, per parameter class."""
    model = tiny_model(seed)
    rng = np.random.default_rng(seed + 100)
    n_az, n_el = model.cfg.raster.n_az, model.cfg.raster.n_el
    target = rng.uniform(0, 1, (n_az, n_el))
    tx = rng.uniform(-1, 1, 3)
    scfg = losses.SsimConfig(window=7)

    def build():
        return losses.composite_loss(model.forward(tx).spectrum, target, scfg)

    model.store.zero_grad()
    build().backward()
    errors: dict[str, float] = {}
    for name, t in model.store:
        cls = PARAM_CLASSES.get(name, "networks")
        size = t.value.size
        entries = np.arange(size) if name.startswith("prim.") else rng.choice(
            size, min(per_tensor, size), replace=False)
        num = ag.numerical_grad(lambda: float(build().value), t, entries, h)
        ana = t.grad.reshape(-1)[entries]
        err = ag.relative_error(ana, num)
        errors[cls] = max(errors.get(cls, 0.0), err)
    errors["coefficients"] = raster_gradient_errors(seed, h=h)["coef"]
    return errors


def tiny_scene(rng, n: int, scale=(3.0, 25.0)):
    """Random primitives with scales (degrees) drawn from ``scale``."""
    sx = rng.uniform(*scale, n)
    sy = rng.uniform(*scale, n)
    rho = rng.uniform(0, np.pi, n)
    cov = covariance_from_params(sx, sy, rho)
    inv = np.linalg.inv(cov)
    return dict(
        mean=np.c_[rng.uniform(0, 360, n), rng.uniform(0, 90, n)],
        cov=cov,
        conic=np.c_[inv[:, 0, 0], inv[:, 0, 1], inv[:, 1, 1]],
        opacity=rng.uniform(0.05, 0.95, n),
        coef=rng.normal(size=(n, 2)),
        depth=rng.uniform(0.1, 100, n),
    )


def raster_gradient_errors(seed: int = 0, n: int = 3, n_az: int = 12, n_el: int = 6,
                           h: float = FD_STEP) -> dict[str, float]:
    """Rasterizer adjoint vs central differences of a random linear functional of the field."""
    rng = np.random.default_rng(seed)
    sc = tiny_scene(rng, n, scale=(20.0, 40.0))
    cfg = raster.RasterConfig(n_az=n_az, n_el=n_el, tile=4, culling=False)
    probe = rng.normal(size=(n_az, n_el, 2))

    def f():
        out, _ = raster.rasterize_arrays(sc["mean"], sc["conic"], sc["opacity"], sc["coef"], sc["depth"], cfg)
        return float((out * probe).sum())

    _, state = raster.rasterize_arrays(sc["mean"], sc["conic"], sc["opacity"], sc["coef"], sc["depth"], cfg)
    grads = dict(zip(("mean", "conic", "opacity", "coef"), raster.rasterize_backward(probe, state)))
    out = {}
    for key, g in grads.items():
        holder = ag.Tensor(sc[key])
        sc[key] = holder.value
        # conic entries are ~1/scale^2, so the step is taken relative to them
        step = h * float(np.abs(holder.value).max()) if key == "conic" else h
        num = ag.numerical_grad(f, holder, range(holder.value.size), step)
        out[key] = ag.relative_error(g.reshape(-1), num)
    return out


def suite_gradients() -> list[Check]:
    t0 = time.perf_counter()
    checks = [_check(f"raster adjoint d/{k}", v, GRAD_TOL) for k, v in raster_gradient_errors().items()]
    checks += [_check(f"loss gradient [{k}]", v, GRAD_TOL) for k, v in loss_gradient_errors().items()]
    checks.append(_check("gradient suite runtime (s)", time.perf_counter() - t0, 120.0))
    return checks


# ---------------------------------------------------------------------------
# bilinear


def suite_bilinear(seed: int = 0) -> list[Check]:
    rng = np.random.default_rng(seed)
    grid = bst.ClusterGrid(64)
    gphi, gtheta = grid.points()
    # interior: at least one elevation step away from the outer grid rows
    az = rng.uniform(0, 360, 500)
    el = rng.uniform(gtheta.min(), gtheta.max(), 500)
    w = bst.weight_matrix(grid, az, el)
    pou = float(np.abs(w.sum(axis=0) - 1).max())
    wrap = bst.bilinear_weight((355.0, gtheta[0]), (0.0, gtheta[0]), grid)
    feats = np.tile(rng.normal(size=(1, 16)), (500, 1))
    wt = ag.Tensor(w)
    g = bst.aggregate(ag.Tensor(feats), wt).value
    nonempty = w.sum(axis=1) > 0
    f2 = bst.distribute(ag.Tensor(g), wt).value
    return [
        _check("partition of unity (interior)", pou, 1e-6),
        _check("azimuth wrap weight |w - 0.8889|", abs(wrap - 8 / 9), 1e-4),
        _check("aggregate constant fixed point", np.abs(g[nonempty] - feats[0]).max(), 1e-6),
        _check("distribute constant fixed point", np.abs(f2 - feats[0]).max(), 1e-6),
    ]


# ---------------------------------------------------------------------------
# rasterizer oracle


def raster_oracle_errors(n_scenes: int = 50, max_prims: int = 32, seed: int = 0) -> list[float]:
    rng = np.random.default_rng(seed)
    cfg = raster.RasterConfig(culling=False)
    errs = []
    for _ in range(n_scenes):
        n = int(rng.integers(1, max_prims + 1))
        sc = tiny_scene(rng, n)
        out, _ = raster.rasterize_arrays(sc["mean"], sc["conic"], sc["opacity"], sc["coef"], sc["depth"], cfg)
        ref = oracles.brute_force_field(sc["mean"], sc["cov"], sc["opacity"], sc["coef"][:, 0] + 1j * sc["coef"][:, 1],
                                        sc["depth"])
        errs.append(float(np.abs(out[..., 0] + 1j * out[..., 1] - ref).max()))
    return errs


def suite_raster() -> list[Check]:
    errs = raster_oracle_errors()
    return [_check("tiled vs brute force, 50 scenes (max abs)", max(errs), 1e-6)]


# ---------------------------------------------------------------------------
# ssim


def ssim_pairs(seed: int = 0, shape=(48, 40)):
    rng = np.random.default_rng(seed)
    pairs = []
    for _ in range(3):
        x = rng.uniform(0, 1, shape)
        y = np.clip(x + rng.normal(0, 0.2, shape), 0, 1)
        pairs.append((x, y))
    return pairs


def suite_ssim() -> list[Check]:
    cfg = losses.SsimConfig()
    rng = np.random.default_rng(1)
    x = rng.uniform(0, 1, (40, 30))
    self_err = abs(losses.ssim(x, x) - 1.0)
    a, b = 0.7, 0.2
    closed = (2 * a * b + cfg.c1) / (a * a + b * b + cfg.c1)
    const_err = abs(losses.ssim(np.full((20, 20), a), np.full((20, 20), b)) - closed)
    ref_err = max(abs(losses.ssim(p, q) - oracles.ssim_direct(p, q)) for p, q in ssim_pairs())
    return [
        _check("ssim(x, x) = 1", self_err, 1e-9),
        _check("constant-image closed form", const_err, 1e-9),
        _check("vs direct window reference (3 pairs)", ref_err, 1e-6),
    ]


SUITES = {
    "gradients": suite_gradients,
    "bilinear": suite_bilinear,
    "raster": suite_raster,
    "ssim": suite_ssim,
}


def run_suite(name: str) -> list[Check]:
    if name == "all":
        return [c for key in SUITES for c in SUITES[key]()]
    if name not in SUITES:
        raise KeyError(f"unknown suite {name!r}; choose from {', '.join([*SUITES, 'all'])}")
    return SUITES[name]()
