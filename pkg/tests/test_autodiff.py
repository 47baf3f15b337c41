"""Gradient engine tests: primitives against finite differences, shape
validation, parameter store behavior."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from paretoltv import autodiff as ad


def _rng(seed):
    return np.random.default_rng(seed)


def fd_grad(f, x, h=1e-6):
    """Central differences of a scalar function of a flat vector."""
    g = np.zeros_like(x)
    for i in range(x.size):
        up = x.copy()
        up[i] += h
        dn = x.copy()
        dn[i] -= h
        g[i] = (f(up) - f(dn)) / (2 * h)
    return g


def check_unary(op, seed, shape=(4, 3), shift=0.0, scale=1.0):
    rng = _rng(seed)
    x0 = scale * rng.standard_normal(shape) + shift
    params = ad.ParamStore().add("x", x0)

    def block(_, pv):
        return ad.reduce_sum(ad.mul(op(pv["x"]), ad.const(rng0)))

    rng0 = _rng(seed + 1).standard_normal(shape)
    rec = ad.backward(block, None, params)

    def f(flat):
        p = params.copy()
        p["x"] = flat.reshape(shape)
        return float(ad.forward(block, None, p))

    fd = fd_grad(f, x0.ravel()).reshape(shape)
    assert np.max(np.abs(fd - rec.grads["x"])) < 1e-6


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("op,shift", [
    (ad.sigmoid, 0.0), (ad.tanh, 0.0), (ad.exp, 0.0),
    (ad.log, 5.0), (ad.softmax, 0.0), (ad.softplus, 0.0),
    (ad.log_sigmoid, 0.0), (ad.square, 0.0),
    (ad.recip_pos, 4.0), (ad.sqrt_pos, 4.0),
])
def test_unary_grads(op, shift, seed):
    check_unary(op, seed, shift=shift)


@pytest.mark.parametrize("seed", range(5))
def test_relu_grad_off_kink(seed):
    # keep probes away from the origin where relu is not differentiable
    check_unary(ad.relu, seed, shift=3.0, scale=0.5)


def test_softplus_derivative_at_zero():
    # the stable composition must give sigmoid(0) = 0.5 exactly at the kink
    params = ad.ParamStore().add("x", np.zeros(3))

    def block(_, pv):
        return ad.reduce_sum(ad.softplus(pv["x"]))

    rec = ad.backward(block, None, params)
    assert np.allclose(rec.grads["x"], 0.5)
    assert np.allclose(ad.softplus(ad.const(np.zeros(3))).value, np.log(2.0))


@pytest.mark.parametrize("seed", range(20))
def test_mlp_block_finite_difference(seed):
    rng = _rng(seed)
    x = rng.standard_normal((5, 4))
    y = rng.standard_normal(5)
    params = ad.ParamStore()
    params.add("w1", rng.standard_normal((4, 6)) * 0.5)
    params.add("b1", rng.standard_normal(6) * 0.1)
    params.add("w2", rng.standard_normal((6, 1)) * 0.5)
    params.add("b2", rng.standard_normal(1) * 0.1)

    def block(inputs, pv):
        h = ad.tanh(ad.affine(ad.const(inputs["x"]), pv["w1"], pv["b1"]))
        out = ad.reshape(ad.affine(h, pv["w2"], pv["b2"]), (5,))
        return ad.reduce_mean(ad.square(ad.sub(out, ad.const(inputs["y"]))))

    report = ad.finite_diff_check(block, {"x": x, "y": y}, params)
    assert report["passed"], report


@pytest.mark.parametrize("seed", range(5))
def test_matmul_concat_softmax_composite(seed):
    rng = _rng(seed)
    params = ad.ParamStore()
    params.add("a", rng.standard_normal((3, 4)))
    params.add("b", rng.standard_normal((4, 2)))
    mask = rng.standard_normal((3, 4))

    def block(_, pv):
        m = ad.matmul(pv["a"], pv["b"])
        joined = ad.concat(
            [m, ad.transpose(ad.matmul(ad.transpose(pv["b"]),
                                       ad.transpose(pv["a"])))], axis=1)
        probs = ad.softmax(joined, axis=1)
        return ad.reduce_sum(ad.mul(probs, ad.const(mask)))

    report = ad.finite_diff_check(block, None, params)
    assert report["passed"], report


def test_broadcast_add_mul_unbroadcast():
    params = ad.ParamStore().add("v", np.array([1.0, 2.0, 3.0]))

    def block(_, pv):
        m = ad.const(np.arange(12, dtype=float).reshape(4, 3))
        return ad.reduce_sum(ad.add(ad.mul(m, pv["v"]), pv["v"]))

    rec = ad.backward(block, None, params)
    expected = np.arange(12, dtype=float).reshape(4, 3).sum(axis=0) + 4.0
    assert np.allclose(rec.grads["v"], expected)


def test_scaled_dot_value_and_grad():
    a = np.array([1.0, 2.0, 2.0, 0.0])
    params = ad.ParamStore().add("b", np.array([0.5, -1.0, 1.0, 3.0]))

    def block(_, pv):
        return ad.scaled_dot(ad.const(a), pv["b"])

    rec = ad.backward(block, None, params)
    assert rec.loss == pytest.approx((a @ params["b"]) / 2.0)
    assert np.allclose(rec.grads["b"], a / 2.0)


def test_shared_node_gradient_accumulates():
    params = ad.ParamStore().add("x", np.array(2.0))

    def block(_, pv):
        y = ad.mul(pv["x"], pv["x"])  # x^2
        return ad.add(y, y)           # 2 x^2 -> grad 4x

    rec = ad.backward(block, None, params)
    assert rec.grads["x"] == pytest.approx(8.0)


def test_shape_errors():
    with pytest.raises(ad.ShapeError):
        ad.matmul(ad.const(np.ones((2, 3))), ad.const(np.ones((2, 3))))
    with pytest.raises(ad.ShapeError):
        ad.add(ad.const(np.ones((2, 3))), ad.const(np.ones((4,))))
    with pytest.raises(ad.ShapeError):
        ad.reshape(ad.const(np.ones(6)), (4, 2))
    with pytest.raises(ad.ShapeError):
        ad.affine(ad.const(np.ones((2, 3))), ad.const(np.ones((4, 2))))


def test_backward_requires_scalar():
    params = ad.ParamStore().add("x", np.ones(3))
    with pytest.raises(ad.ShapeError):
        ad.backward(lambda _, pv: pv["x"], None, params)


def test_tensor_rejects_nonfinite():
    with pytest.raises(ValueError):
        ad.tensor([1.0, np.nan])
    with pytest.raises(ValueError):
        ad.ParamStore().add("x", [np.inf])


def test_param_store_contract():
    store = ad.ParamStore()
    store.add("a", np.ones((2, 2)))
    store.add("b", np.zeros(3))
    with pytest.raises(ValueError):
        store.add("a", np.ones(1))
    with pytest.raises(ad.ShapeError):
        store["b"] = np.zeros((3, 1))
    with pytest.raises(KeyError):
        store["missing"] = np.zeros(1)
    assert store.names() == ["a", "b"]
    assert store.size == 7
    flat = store.flat()
    store.assign_flat(flat + 1.0)
    assert np.allclose(store["a"], 2.0)
    clone = store.copy()
    clone["b"] = np.ones(3)
    assert np.allclose(store["b"], 1.0)  # copies are independent


def test_unused_parameter_gets_zero_grad():
    params = ad.ParamStore().add("used", np.array(1.0)).add("idle", np.ones(4))

    def block(_, pv):
        return ad.mul(pv["used"], pv["used"])

    rec = ad.backward(block, None, params)
    assert np.allclose(rec.grads["idle"], 0.0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-30, 30), min_size=1, max_size=8))
def test_softplus_matches_reference(xs):
    x = np.asarray(xs)
    out = ad.softplus(ad.const(x)).value
    ref = np.maximum(x, 0) + np.log1p(np.exp(-np.abs(x)))
    assert np.allclose(out, ref, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_softmax_rows_sum_to_one(seed):
    x = np.random.default_rng(seed).standard_normal((3, 5)) * 10
    out = ad.softmax(ad.const(x), axis=1).value
    assert np.allclose(out.sum(axis=1), 1.0)
    assert np.all(out >= 0)


def test_determinism_bitwise():
    rng = _rng(0)
    params = ad.ParamStore().add("w", rng.standard_normal((3, 3)))

    def block(_, pv):
        return ad.reduce_sum(ad.tanh(ad.matmul(pv["w"], pv["w"])))

    r1 = ad.backward(block, None, params)
    r2 = ad.backward(block, None, params)
    assert r1.loss == r2.loss
    assert np.array_equal(r1.grads["w"], r2.grads["w"])
