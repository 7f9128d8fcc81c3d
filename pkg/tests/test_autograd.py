import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bisplat import autograd as ag


def leaf(v):
    return ag.Tensor(np.asarray(v, dtype=np.float64), requires_grad=True)


def gradcheck(build, x, h=1e-4, others=()):
    for t in (x, *others):
        t.grad = None
    build().backward()
    num = ag.numerical_grad(lambda: float(build().value), x, range(x.value.size), h)
    return ag.relative_error(x.grad.reshape(-1), num)


def test_matmul_identity(rng):
    a = rng.normal(size=(3, 5))
    assert np.array_equal((ag.Tensor(np.eye(3)) @ ag.Tensor(a)).value, a)


def test_softmax_constant_row():
    out = ag.softmax(ag.Tensor(np.full((2, 7), 3.3))).value
    assert np.allclose(out, 1 / 7)
    assert np.allclose(out.sum(axis=1), 1.0)


def test_layer_norm_moments(rng):
    x = rng.normal(3, 5, size=(6, 32))
    out = ag.layer_norm(ag.Tensor(x), ag.Tensor(np.ones(32)), ag.Tensor(np.zeros(32))).value
    assert np.allclose(out.mean(axis=1), 0, atol=1e-12)
    assert np.allclose(out.var(axis=1), 1, atol=1e-3)


def test_linear_form_adjoint(rng):
    x = rng.normal(size=(4, 3))
    w = leaf(rng.normal(size=(4, 3)))
    ag.reduce_sum(w * ag.Tensor(x)).backward()
    assert np.array_equal(w.grad, x)


def test_relu_dead_region():
    x = leaf(-np.linspace(0.1, 2, 10))
    ag.reduce_sum(ag.relu(x)).backward()
    assert np.array_equal(x.grad, np.zeros(10))


def test_non_scalar_root_rejected():
    x = leaf(np.ones(3))
    with pytest.raises(ag.GraphError):
        (x * 2.0).backward()


def test_double_backward_rejected():
    x = leaf(np.ones(3))
    y = ag.reduce_sum(x * x)
    y.backward()
    with pytest.raises(ag.GraphError):
        y.backward()
    # a fresh graph over the same leaf also refuses to accumulate silently
    with pytest.raises(ag.GraphError):
        ag.reduce_sum(x * x).backward()
    x.grad = None
    ag.reduce_sum(x * x).backward()
    assert np.allclose(x.grad, 2.0)


def test_shape_error_names_both_shapes():
    with pytest.raises(ag.ShapeError) as exc:
        ag.Tensor(np.ones((2, 3))) + ag.Tensor(np.ones((3, 2)))
    assert "(2, 3)" in str(exc.value) and "(3, 2)" in str(exc.value)
    with pytest.raises(ag.ShapeError):
        ag.Tensor(np.ones((2, 3))) @ ag.Tensor(np.ones((2, 3)))


def test_row_broadcast_only():
    a = ag.Tensor(np.ones((4, 3)))
    assert (a + ag.Tensor(np.arange(3.0))).shape == (4, 3)
    with pytest.raises(ag.ShapeError):
        a + ag.Tensor(np.ones(4))


def test_safe_div_zero_rows():
    a = leaf(np.ones((3, 2)))
    b = leaf(np.array([2.0, 0.0, 4.0]))
    out = ag.safe_div(a, b)
    assert np.array_equal(out.value, [[0.5, 0.5], [0, 0], [0.25, 0.25]])
    ag.reduce_sum(out).backward()
    assert b.grad[1] == 0 and np.all(np.isfinite(b.grad))


UNARY = {
    "relu": (ag.relu, lambda v: v + np.sign(v) * 0.5),  # keep samples away from the kink
    "sin": (ag.sin, None), "cos": (ag.cos, None), "exp": (ag.exp, None), "square": (ag.square, None),
    "logistic": (ag.logistic, None), "tanh": (ag.tanh, None), "softplus": (ag.softplus, None),
    "softmax": (ag.softmax, None),
}


@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_gradcheck(name, rng):
    fn, prep = UNARY[name]
    v = rng.normal(size=(4, 5))
    x = leaf(prep(v) if prep else v)
    probe = ag.Tensor(rng.normal(size=(4, 5)))
    assert gradcheck(lambda: ag.reduce_sum(fn(x) * probe), x) < 1e-6


def test_structural_ops_gradcheck(rng):
    a = leaf(rng.normal(size=(4, 6)))
    b = ag.Tensor(rng.normal(size=(6, 3)))
    gain = leaf(rng.normal(size=6))
    bias = leaf(rng.normal(size=6))
    probe = ag.Tensor(rng.normal(size=(4, 9)))

    def build():
        ln = ag.layer_norm(a, gain, bias)
        cat = ag.concat([ln @ b, ag.transpose(ag.reshape(a, (6, 4)))[:, :3] * 2.0, ln[:, 1:4]], axis=1)
        return ag.reduce_sum(cat * probe) + ag.mean(ag.reduce_sum(a, axis=1) * ag.reduce_sum(a, axis=1))

    for t in (a, gain, bias):
        assert gradcheck(build, t, others=(a, gain, bias)) < 1e-6


def random_graph(seed):
    """A random composition of ops over one 4x5 leaf (20 parameters)."""
    r = np.random.default_rng(seed)
    x = leaf(r.normal(size=(4, 5)))
    consts = [ag.Tensor(r.normal(size=(5, 5))) for _ in range(3)]
    row = ag.Tensor(r.normal(size=5))
    gain, bias = ag.Tensor(r.uniform(0.5, 1.5, 5)), ag.Tensor(r.normal(size=5))
    ops = r.integers(0, 11, size=int(r.integers(2, 8)))

    def build():
        h = x
        for k, op in enumerate(ops):
            c = consts[k % 3]
            if op == 0:
                h = ag.tanh(h @ c)
            elif op == 1:
                h = ag.sin(h) + row
            elif op == 2:
                h = h * ag.logistic(h)
            elif op == 3:
                h = ag.softmax(h) * 3.0
            elif op == 4:
                h = ag.layer_norm(h, gain, bias)
            elif op == 5:
                h = ag.concat([h[:, :2], ag.cos(h[:, 2:])], axis=1)
            elif op == 6:
                h = ag.softplus(h) - h * 0.5
            elif op == 7:
                h = ag.exp(ag.tanh(h)) @ c
            elif op == 8:
                h = ag.safe_div(h, ag.reduce_sum(ag.square(h), axis=1) + 1.0)
            elif op == 9:
                h = h + x * 0.3
            else:
                h = ag.square(ag.tanh(h)) - h
        return ag.reduce_sum(h * ag.Tensor(np.linspace(-1, 1, 20).reshape(4, 5)))

    return x, build


@settings(max_examples=100)
@given(st.integers(0, 2**32 - 1))
def test_random_graph_gradcheck(seed):
    x, build = random_graph(seed)
    assert gradcheck(build, x) < 1e-5


def test_param_store_order_and_groups():
    s = ag.ParamStore()
    s.add("b", np.zeros(2), group="shape")
    s.add("a", np.zeros((2, 3)))
    assert s.names() == ["b", "a"]
    assert s.count() == 8
    assert s.groups == {"b": "shape", "a": "networks"}
    with pytest.raises(KeyError):
        s.add("a", np.zeros(1))
