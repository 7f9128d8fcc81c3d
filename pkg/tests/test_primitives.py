import numpy as np
import pytest
from hypothesis import given, strategies as st

from bisplat import autograd as ag
from bisplat.primitives import (COARSE, FINE, InitConfig, apply_offsets, covariance_from_params, depth_scale,
                                init_primitives, project_domain)


def test_coarse_fraction_500():
    p = init_primitives(500, seed=0)
    assert (p.group == COARSE).sum() == 150
    assert (p.group == FINE).sum() == 350
    assert np.all(p.w_scale[p.group == COARSE] == np.float32(0.3))
    assert np.all(p.w_scale[p.group == FINE] == 1.0)


def test_depth_floor_gives_s_max():
    cfg = InitConfig()
    assert depth_scale(0.1, cfg.s_min, cfg.s_max) == pytest.approx(cfg.s_max)


def test_init_deterministic():
    a = init_primitives(1000, seed=7)
    b = init_primitives(1000, seed=7)
    for k, v in a.arrays().items():
        assert v.tobytes() == getattr(b, k).tobytes()
    assert a.group.tobytes() == b.group.tobytes()


@given(st.integers(1, 400), st.integers(0, 2**31 - 1))
def test_depth_strata_and_ranges(n, seed):
    p = init_primitives(n, seed)
    coarse = p.depth[p.group == COARSE]
    fine = p.depth[p.group == FINE]
    if coarse.size:
        assert coarse.min() >= 20
    if fine.size:
        assert fine.max() <= 20
    assert np.all((p.azimuth_deg >= 0) & (p.azimuth_deg < 360))
    assert np.all((p.elevation_deg >= 0) & (p.elevation_deg <= 90))
    assert np.all((p.rotation_rad >= 0) & (p.rotation_rad <= np.pi))
    assert np.all(p.scale_x > 0) and np.all(p.scale_y > 0)
    assert np.allclose(p.opacity, 0.3, atol=1e-6)


def test_anisotropy_relative_to_base():
    cfg = InitConfig()
    p = init_primitives(2000, seed=3, dtype=np.float64)
    base = depth_scale(p.depth, cfg.s_min, cfg.s_max)
    ratio = np.r_[p.scale_x / base, p.scale_y / base]
    assert ratio.min() >= 1.0 - 1e-12 and ratio.max() <= 1.5 + 1e-12


@pytest.mark.parametrize("kw", [dict(s_min=0.0), dict(s_min=-1.0), dict(s_min=9.0, s_max=8.0)])
def test_init_rejects_bad_config(kw):
    with pytest.raises(ValueError):
        init_primitives(10, 0, InitConfig(**kw))


def test_init_rejects_zero():
    with pytest.raises(ValueError):
        init_primitives(0, 0)


@pytest.mark.parametrize("sx,sy,rho,expected", [
    (1.0, 1.0, 0.7, np.eye(2)),
    (2.0, 1.0, 0.0, np.diag([4.0, 1.0])),
    (2.0, 1.0, np.pi / 2, np.diag([1.0, 4.0])),
])
def test_covariance_examples(sx, sy, rho, expected):
    assert np.allclose(covariance_from_params(sx, sy, rho), expected, atol=1e-12)


def test_covariance_spd_bulk():
    rng = np.random.default_rng(0)
    n = 100_000
    sx = np.exp(rng.uniform(-3, 3, n))
    sy = np.exp(rng.uniform(-3, 3, n))
    rho = rng.uniform(-10, 10, n)
    cov = covariance_from_params(sx, sy, rho)
    assert np.allclose(cov, np.swapaxes(cov, 1, 2))
    np.linalg.cholesky(cov)  # raises if any matrix is not SPD
    ev = np.linalg.eigvalsh(cov)
    assert np.allclose(np.sort(ev, axis=1), np.sort(np.c_[sx**2, sy**2], axis=1), rtol=1e-8)


def _base(n=5, seed=0):
    p = init_primitives(n, seed, dtype=np.float64)
    return p, {k: ag.Tensor(v.copy()) for k, v in p.arrays().items()}


def test_zero_offsets_identity():
    p, base = _base()
    coef = ag.Tensor(np.ones((5, 2)))
    a0 = apply_offsets(base, None, coef)
    a1 = apply_offsets(base, ag.Tensor(np.zeros((5, 4))), coef)
    for name in ("mean", "conic", "opacity"):
        assert np.array_equal(getattr(a0, name).value, getattr(a1, name).value)
    assert np.allclose(a0.opacity.value, p.opacity)
    assert np.allclose(a0.covariance(), covariance_from_params(p.scale_x, p.scale_y, p.rotation_rad))
    inv = np.linalg.inv(a0.covariance())
    assert np.allclose(a0.conic.value, np.c_[inv[:, 0, 0], inv[:, 0, 1], inv[:, 1, 1]])


def test_log_scale_offset_doubles():
    p, base = _base()
    d = np.zeros((5, 4))
    d[2, 1] = np.log(2.0)
    a = apply_offsets(base, ag.Tensor(d), ag.Tensor(np.zeros((5, 2))))
    assert a.scale_x.value[2] == pytest.approx(2 * p.scale_x[2])
    assert a.scale_y.value[2] == pytest.approx(p.scale_y[2])
    assert np.allclose(np.delete(a.scale_x.value, 2), np.delete(p.scale_x, 2))


def test_opacity_offset_monotone_in_unit_interval():
    _, base = _base(1)
    vals = []
    for off in (-30.0, -2.0, 0.0, 2.0, 30.0):
        d = np.zeros((1, 4))
        d[0, 3] = off
        vals.append(float(apply_offsets(base, ag.Tensor(d), ag.Tensor(np.zeros((1, 2)))).opacity.value[0]))
    assert all(0 < v < 1 for v in vals[1:-1])
    assert vals == sorted(vals)
    assert vals[-1] > 1 - 1e-9


def test_offsets_length_mismatch():
    _, base = _base()
    with pytest.raises(ValueError):
        apply_offsets(base, ag.Tensor(np.zeros((4, 4))), ag.Tensor(np.zeros((5, 2))))
    with pytest.raises(ValueError):
        apply_offsets(base, None, ag.Tensor(np.zeros((3, 2))))


def test_project_domain():
    prims = {"azimuth_deg": np.array([-1e-9, 365.0, 720.5]), "elevation_deg": np.array([-3.0, 45.0, 91.0]),
             "depth": np.array([0.0, 5.0, 200.0])}
    project_domain(prims)
    assert np.all((prims["azimuth_deg"] >= 0) & (prims["azimuth_deg"] < 360))
    assert np.allclose(prims["azimuth_deg"][1:], [5.0, 0.5])
    assert np.array_equal(prims["elevation_deg"], [0.0, 45.0, 90.0])
    assert np.array_equal(prims["depth"], [0.1, 5.0, 100.0])
