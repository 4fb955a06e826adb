import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from difo import autodiff as ad

from oracles import analytic_grads, central_diff, grad_error, graph_fn, loop_matmul

finite = st.floats(-5, 5, allow_nan=False, allow_infinity=False)


def test_sigmoid_and_softplus_at_zero():
    g = ad.Graph(record=False)
    z = g.const(0.0)
    assert ad.sigmoid(z).data == 0.5
    assert math.isclose(float(ad.softplus(z).data), math.log(2), rel_tol=0, abs_tol=1e-15)


def test_matmul_matches_triple_loop():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(2, 3)), rng.normal(size=(3, 4))
    g = ad.Graph(record=False)
    out = ad.matmul(g.const(a), g.const(b)).data
    assert out.shape == (2, 4)
    np.testing.assert_allclose(out, loop_matmul(a, b), rtol=1e-14, atol=1e-14)


def test_shape_mismatch_names_op_and_shapes():
    g = ad.Graph()
    with pytest.raises(ad.ShapeError, match=r"matmul.*\(2, 3\).*\(2, 3\)"):
        ad.matmul(g.leaf(np.ones((2, 3))), g.leaf(np.ones((2, 3))))
    with pytest.raises(ad.ShapeError, match="add"):
        ad.add(g.leaf(np.ones((2, 3))), g.leaf(np.ones((3, 2))))


def test_unknown_op_kind():
    g = ad.Graph()
    with pytest.raises(ValueError, match="unknown op"):
        ad.forward_op("conv", [g.leaf(1.0)])


@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 4)), elements=finite))
@settings(max_examples=30, deadline=None)
def test_grad_of_sum_is_ones(x):
    g = ad.Graph()
    leaf = g.leaf(x)
    grads = g.backward(ad.sum_(leaf))
    assert np.array_equal(grads[leaf.id], np.ones_like(x))


@given(arrays(np.float64, st.integers(1, 8), elements=finite))
@settings(max_examples=30, deadline=None)
def test_grad_of_mean_square(x):
    g = ad.Graph()
    leaf = g.leaf(x)
    grads = g.backward(ad.mean(ad.square(leaf)))
    np.testing.assert_allclose(grads[leaf.id], 2 * x / len(x), rtol=1e-14, atol=0)


def test_non_scalar_root_rejected():
    g = ad.Graph()
    x = g.leaf(np.ones(3))
    with pytest.raises(ad.ShapeError, match="scalar"):
        g.backward(ad.square(x))


def test_backward_requires_recording():
    g = ad.Graph(record=False)
    with pytest.raises(RuntimeError):
        g.backward(ad.sum_(g.leaf(np.ones(2))))


def test_unused_leaf_gets_zero_gradient():
    g = ad.Graph()
    x, y = g.leaf(np.arange(3.0)), g.leaf(np.ones((2, 2)))
    ad.tanh(y)  # built but not on the path to the root
    grads = g.backward(ad.sum_(ad.square(x)))
    assert np.array_equal(grads[y.id], np.zeros((2, 2)))


def test_topological_ids_and_determinism():
    rng = np.random.default_rng(3)
    w, x = rng.normal(size=(3, 2)), rng.normal(size=(4, 3))

    def run():
        g = ad.Graph()
        wl, xl = g.leaf(w), g.leaf(x)
        loss = ad.mean(ad.softplus(ad.matmul(xl, wl)))
        for i, node in enumerate(g.nodes):
            assert all(j < i for j in node.inputs)
        gr = g.backward(loss)
        return loss.data.copy(), gr[wl.id].copy(), gr[xl.id].copy()

    a, b = run(), run()
    for u, v in zip(a, b):
        assert u.tobytes() == v.tobytes()


def test_relu_derivative_at_zero_is_zero():
    g = ad.Graph()
    x = g.leaf(np.array([-1.0, 0.0, 2.0]))
    grads = g.backward(ad.sum_(ad.relu(x)))
    assert grads[x.id].tolist() == [0.0, 0.0, 1.0]


def test_stable_forms_do_not_overflow():
    big = np.array([-800.0, 800.0])
    assert np.all(np.isfinite(ad.stable_sigmoid(big)))
    np.testing.assert_allclose(ad.stable_softplus(big), [0.0, 800.0])


def test_two_layer_mlp_gradients_match_finite_differences():
    rng = np.random.default_rng(0)
    xs = [rng.normal(size=(5, 3)), rng.normal(size=(3, 4)), rng.normal(size=4),
          rng.normal(size=(4, 1))]

    def build(g, x, w1, b1, w2):
        h = ad.silu(x @ w1 + ad.broadcast(b1, (5, 4)))
        return ad.mean(ad.square(h @ w2))

    for a, n in zip(analytic_grads(build, xs), central_diff(graph_fn(build), xs)):
        assert grad_error(a, n) < 1


@pytest.mark.parametrize("kind", ["sigmoid", "silu", "tanh", "softplus", "exp", "square", "neg"])
def test_unary_grads(kind):
    rng = np.random.default_rng(1)
    xs = [rng.normal(size=(3, 2))]

    def build(g, x):
        return ad.sum_(ad.forward_op(kind, [x]) * x)

    (a,), (n,) = analytic_grads(build, xs), central_diff(graph_fn(build), xs)
    assert grad_error(a, n) < 1


def test_log_clip_minimum_concat_slice_reshape_grads():
    rng = np.random.default_rng(2)
    xs = [rng.uniform(0.5, 2.0, size=(2, 3)), rng.normal(size=(2, 3))]

    def build(g, a, b):
        m = ad.minimum(a, b)
        c = ad.concat([ad.log(a), ad.clip(b, -0.5, 0.5), m], axis=1)
        r = ad.reshape(c[:, 1:], (4, 4))
        return ad.sum_(ad.mean(ad.square(r), axis=0))

    for a, n in zip(analytic_grads(build, xs), central_diff(graph_fn(build), xs)):
        assert grad_error(a, n) < 1


def test_adam_moves_against_gradient():
    opt = ad.Adam(lr=0.1)
    p = {"w": np.array([1.0, -1.0])}
    new = opt.step(p, {"w": np.array([2.0, -3.0])})
    np.testing.assert_allclose(new["w"], [0.9, -0.9], atol=1e-6)
    assert p["w"].tolist() == [1.0, -1.0]  # old snapshot untouched


def test_clip_by_global_norm():
    grads = {"a": np.array([3.0]), "b": np.array([4.0])}
    clipped, norm = ad.clip_by_global_norm(grads, 1.0)
    assert norm == 5.0
    np.testing.assert_allclose(ad.global_norm(clipped), 1.0)
    same, _ = ad.clip_by_global_norm(grads, 10.0)
    assert same["a"][0] == 3.0
