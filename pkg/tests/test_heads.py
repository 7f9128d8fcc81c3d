import numpy as np
import pytest
from hypothesis import given, strategies as st

from bisplat import autograd as ag
from bisplat import heads, nn
from bisplat.heads import HeadConfig
from bisplat.model import Bypass, WrfModel, profile_config


def T(v, grad=False):
    return ag.Tensor(np.asarray(v, dtype=np.float64), requires_grad=grad)


def _ffn(n_in=8, n_out=3, depth=4, width=16, seed=0):
    store = ag.ParamStore()
    nn.init_residual_ffn(store, "f", n_in, n_out, depth, width, np.random.default_rng(seed), dtype=np.float64)
    return store


def test_zero_blocks_pure_skip(rng):
    store = _ffn()
    for name, t in store:
        if ".block" in name:
            t.value[...] = 0
    x = T(rng.normal(size=(5, 8)))
    expect = nn.linear(nn.linear(x, store, "f.in"), store, "f.out").value
    assert np.allclose(nn.residual_ffn(x, store, "f", 4).value, expect)


def test_param_count_closed_form():
    store = _ffn(51, 2, 4, 128)
    assert store.count() == nn.residual_ffn_param_count(51, 2, 4, 128)
    assert store.count() == 52 * 128 + 4 * 2 * 129 * 128 + 129 * 2


def test_ffn_gradient(rng):
    store = _ffn()
    x = T(rng.normal(size=(1, 8)), True)
    probe = T(rng.normal(size=(1, 3)))
    f = lambda: ag.reduce_sum(nn.residual_ffn(x, store, "f", 4) * probe)
    f().backward()
    num = ag.numerical_grad(lambda: float(f().value), x, range(8), 1e-5)
    assert ag.relative_error(x.grad, num) < 1e-5


@pytest.fixture(scope="module")
def model():
    return WrfModel(profile_config("base", n_primitives=60, n_clusters=16), seed=0, dtype=np.float64)


def test_static_tx_independent_and_nonnegative(model):
    a = model.forward([0.1, 0.2, 0.3])
    b = model.forward([-0.9, 0.5, 0.0])
    assert a.bst.features.shape == (60, 128)
    assert not np.allclose(a.coef.value, b.coef.value)
    gs = None
    from bisplat.encoding import normalize_primitive_coords, positional_encode_graph
    p = model.primitives()
    gs = positional_encode_graph(normalize_primitive_coords(p["azimuth_deg"], p["elevation_deg"], p["depth"]), 8)
    amp, phase = heads.static_head(gs, model.store, model.cfg.head)
    assert amp.shape == phase.shape == (60,)
    assert np.all(amp.value >= 0)


def test_static_shape_500():
    store = ag.ParamStore()
    heads.init_heads(store, 51, 39, 128, HeadConfig(), np.random.default_rng(0))
    gs = ag.Tensor(np.random.default_rng(1).normal(size=(500, 51)).astype(np.float32))
    amp, phase = heads.static_head(gs, store, HeadConfig())
    assert np.stack([amp.value, phase.value], 1).shape == (500, 2)


def test_dynamic_constant_input_constant_output():
    store = ag.ParamStore()
    heads.init_heads(store, 51, 39, 16, HeadConfig(depth=2, width=16), np.random.default_rng(0), dtype=np.float64)
    amp, phase = heads.dynamic_head(T(np.zeros((7, 16))), store, HeadConfig(depth=2, width=16))
    assert amp.shape == (7,) and np.all(amp.value == amp.value[0]) and np.all(phase.value == phase.value[0])


def test_dynamic_gradient_wrt_features(rng):
    cfg = HeadConfig(depth=2, width=16)
    store = ag.ParamStore()
    heads.init_heads(store, 51, 39, 8, cfg, rng, dtype=np.float64)
    f_in = T(rng.normal(size=(3, 8)), True)
    f = lambda: ag.reduce_sum(ag.stack_columns(list(heads.dynamic_head(f_in, store, cfg))) * T([[1.0, -0.5]] * 3))
    f().backward()
    num = ag.numerical_grad(lambda: float(f().value), f_in, range(24), 1e-5)
    assert ag.relative_error(f_in.grad, num) < 1e-5


def _delta_setup(rng, zero_last=False, scale=1.0):
    cfg = HeadConfig(depth=2, width=16)
    store = ag.ParamStore()
    heads.init_heads(store, 51, 39, 8, cfg, rng, dtype=np.float64)
    if zero_last:
        store["delta.out.w"].value[...] = 0
        store["delta.out.b"].value[...] = 0
    joint = T(rng.normal(size=(5, 90)) * scale)
    feats = T(rng.normal(size=(5, 8)) * scale)
    return heads.delta_head(joint, feats, store, cfg), cfg


def test_delta_zero_final_layer(rng):
    out, _ = _delta_setup(rng, zero_last=True)
    assert out.shape == (5, 4) and np.all(out.value == 0)


@given(st.floats(0.1, 1e3))
def test_delta_bounded(scale):
    out, cfg = _delta_setup(np.random.default_rng(0), scale=scale)
    assert np.all(np.abs(out.value) <= cfg.bounds + 1e-12)


def test_mix_examples():
    c = heads.mix(T([2.0]), T([0.7]), T([5.0]), T([0.0]), np.array([0.0])).value
    assert np.allclose(c, [[2 * np.cos(0.7), 2 * np.sin(0.7)]])
    c = heads.mix(T([1.0]), T([0.3]), T([-1.0]), T([1.1]), np.array([1.0])).value
    assert np.allclose(np.hypot(*c[0]), 0.0)
    c = heads.mix(T([2.0]), T([0.0]), T([1.0]), T([0.0]), np.array([0.5])).value
    assert np.allclose(c, [[2.5, 0.0]])


@given(st.lists(st.tuples(st.floats(0, 5), st.floats(-5, 5), st.floats(-3, 3), st.floats(-9, 9),
                          st.floats(-9, 9)), min_size=1, max_size=10))
def test_mix_modulus(rows):
    a_s, a_m, w, p_s, p_m = (np.array(c) for c in zip(*rows))
    c = heads.mix(T(a_s), T(p_s), T(a_m), T(p_m), w).value
    assert np.allclose(np.hypot(c[:, 0], c[:, 1]), np.abs(a_s + w * a_m), atol=1e-9)


def test_bypass_parsing():
    assert Bypass.parse(["bst", "delta"]) == Bypass(bst=True, delta=True)
    assert Bypass.parse(None).names() == []
    with pytest.raises(ValueError):
        Bypass.parse(["attention"])


def test_bypass_branches(model):
    tx = [0.3, -0.2, 0.1]
    full = model.forward(tx)
    no_delta = model.forward(tx, Bypass(delta=True))
    assert no_delta.deltas is None
    base = model.primitives()
    assert np.allclose(no_delta.attrs.opacity.value, 1 / (1 + np.exp(-base["opacity_logit"].value)))
    no_dyn = model.forward(tx, Bypass(dynamic=True))
    other = model.forward([-0.4, 0.6, 0.2], Bypass(dynamic=True))
    assert np.allclose(no_dyn.coef.value, other.coef.value)   # only the static field remains
    no_bst = model.forward(tx, Bypass(bst=True))
    assert np.array_equal(no_bst.bst.features.value, no_bst.bst.local.value)
    assert not np.allclose(no_bst.spectrum.value, full.spectrum.value)
