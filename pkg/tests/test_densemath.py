import math

import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from protogen import kernels
from protogen.densemath import Tape, backward, layer_norm, matmul, softmax_rows
from protogen.errors import ShapeError, UsageError

from reference import central_differences, max_relative_error

finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)


def test_matmul_identity():
    m = np.array([[1.0, 2.0], [3.0, 4.0]])
    npt.assert_array_equal(matmul(np.eye(2), m), m)


def test_matmul_zero():
    npt.assert_array_equal(matmul([[1.0, 2.0]], [[0.0], [0.0]]), [[0.0]])


def test_matmul_hand_computed():
    npt.assert_array_equal(matmul([[1, 2], [3, 4]], [[5], [6]]), [[17.0], [39.0]])


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match="2x3 @ 2x3"):
        matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_matmul_associative(rng):
    for _ in range(50):
        n, m, p, q = rng.integers(1, 7, size=4)
        a, b, c = rng.normal(size=(n, m)), rng.normal(size=(m, p)), rng.normal(size=(p, q))
        npt.assert_allclose(matmul(matmul(a, b), c), matmul(a, matmul(b, c)), atol=1e-9, rtol=0)


def test_softmax_examples():
    npt.assert_allclose(softmax_rows([[0.0, 0.0, 0.0]]), [[1 / 3] * 3], atol=1e-15)
    npt.assert_array_equal(softmax_rows([[7.5]]), [[1.0]])
    npt.assert_allclose(softmax_rows([[0.0, math.log(3.0)]]), [[0.25, 0.75]], atol=1e-15)


def test_softmax_large_logits_stay_finite():
    out = softmax_rows([[1000.0, 0.0], [-1000.0, -1000.0]])
    npt.assert_allclose(out, [[1.0, 0.0], [0.5, 0.5]])


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 6)), elements=finite), finite)
def test_softmax_rows_sum_to_one_and_shift_invariant(m, c):
    y = softmax_rows(m)
    assert np.all(y >= 0)
    npt.assert_allclose(y.sum(axis=1), 1.0, atol=1e-12, rtol=0)
    npt.assert_allclose(softmax_rows(m + c), y, atol=1e-12, rtol=0)


def test_layer_norm_constant_input_returns_beta():
    out = layer_norm(np.ones(4), np.ones(4), np.zeros(4), 1e-5)
    assert np.all(np.abs(out) < 1e-2)
    beta = np.array([0.5, -1.0, 2.0, 0.0])
    npt.assert_array_equal(layer_norm(np.full(4, 3.0), np.ones(4), beta), beta)


def test_layer_norm_already_normalised():
    npt.assert_allclose(layer_norm([1.0, -1.0], np.ones(2), np.zeros(2), 0.0), [1.0, -1.0])


def test_layer_norm_closed_form():
    s = math.sqrt(8.0 / 3.0 + 1e-5)
    out = layer_norm([0.0, 2.0, 4.0], np.ones(3), np.zeros(3), 1e-5)
    npt.assert_allclose(out, [-2 / s, 0.0, 2 / s], atol=1e-12)
    npt.assert_allclose(out, [-1.2247, 0.0, 1.2247], atol=1e-4)


def test_layer_norm_rowwise_on_matrix(rng):
    x = rng.normal(size=(3, 5))
    g, b = rng.normal(size=5), rng.normal(size=5)
    full = layer_norm(x, g, b)
    for i in range(3):
        npt.assert_allclose(full[i], layer_norm(x[i], g, b), atol=1e-14)


def test_layer_norm_dimension_mismatch():
    with pytest.raises(ShapeError):
        layer_norm(np.ones(3), np.ones(4), np.zeros(3))


@pytest.mark.parametrize("c", [819.59344619, -1e3, 0.1, 3.0])
def test_layer_norm_constant_row_maps_to_beta(c):
    beta = np.linspace(-1, 1, 11)
    out = layer_norm(np.full(11, c), np.full(11, 2.0), beta)
    assert out.tobytes() == beta.tobytes()


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, st.integers(2, 12), elements=st.floats(-1e3, 1e3)))
def test_layer_norm_standardises(v):
    var = v.var()
    out = layer_norm(v, np.ones(v.size), np.zeros(v.size), 1e-5)
    assert abs(out.mean()) < 1e-10
    # a "constant" vector that only differs by rounding is not what the property is about
    assume(var == 0 or var > 1e-9 * (np.abs(v).max() ** 2))
    if var > 0:
        eps = 1e-8 * var
        out = layer_norm(v, np.ones(v.size), np.zeros(v.size), eps)
        assert abs(out.var() - 1.0) < 1e-6


# -- tape ---------------------------------------------------------------------

def test_backward_linear_map_gives_ones():
    tape = Tape()
    w = tape.param(np.arange(6.0).reshape(2, 3), name="w")
    loss = tape.sum(tape.matmul(tape.constant(np.eye(2)), w))
    grads = backward(tape, loss)
    npt.assert_array_equal(grads["w"], np.ones((2, 3)))


def test_backward_quadratic():
    v0 = np.array([[1.0, -2.0, 0.5]])
    tape = Tape()
    v = tape.param(v0, name="v")
    grads = backward(tape, tape.sumsq(v))
    npt.assert_array_equal(grads["v"], 2 * v0)


def test_backward_before_forward_is_usage_error():
    tape = Tape()
    w = tape.param(np.ones((2, 2)), name="w")
    with pytest.raises(UsageError):
        backward(tape, w)


def test_backward_twice_is_usage_error():
    tape = Tape()
    w = tape.param(np.ones((2, 2)), name="w")
    loss = tape.sum(w)
    backward(tape, loss)
    with pytest.raises(UsageError):
        backward(tape, loss)
    with pytest.raises(UsageError):
        tape.param(np.ones(1))


def test_foreign_tensor_rejected():
    a, b = Tape(), Tape()
    x = a.param(np.ones((1, 1)))
    with pytest.raises(UsageError):
        b.sum(x)


def test_backward_visits_each_op_once():
    calls = []
    tape = Tape()
    w = tape.param(np.ones((2, 2)), name="w")
    y = tape.matmul(w, w)
    loss = tape.sum(tape.add(y, y))
    for i, (back, inputs, out) in enumerate(tape._ops):
        def wrapped(g, back=back, i=i):
            calls.append(i)
            back(g)
        tape._ops[i] = (wrapped, inputs, out)
    backward(tape, loss)
    assert calls == [2, 1, 0]


def _check_op(build, inputs, rng, tol=1e-4):
    """Compare tape gradients with central differences for ``build(tape, *nodes)``."""
    weights = None

    def loss_value():
        tape = Tape()
        nodes = [tape.param(v, name=n) for n, v in inputs.items()]
        out = build(tape, *nodes)
        return float((out.value * weights).sum())

    tape = Tape()
    nodes = [tape.param(v, name=n) for n, v in inputs.items()]
    out = build(tape, *nodes)
    weights = rng.normal(size=out.value.shape)
    loss = tape.sum(tape.mask(out, weights))
    grads = backward(tape, loss)
    numeric = central_differences(loss_value, inputs)
    for name in inputs:
        assert max_relative_error(grads[name], numeric[name]) < tol, name


def test_kernel_gradients_match_finite_differences(rng):
    """At least 100 random instances across every differentiable primitive."""
    count = 0
    for _ in range(15):
        n, m, p = rng.integers(1, 5, size=3)
        _check_op(lambda t, a, b: t.matmul(a, b),
                  {"a": rng.normal(size=(n, m)), "b": rng.normal(size=(m, p))}, rng)
        _check_op(lambda t, a: t.softmax_rows(a), {"a": 3 * rng.normal(size=(n, m + 1))}, rng)
        d = int(m) + 1
        _check_op(lambda t, x, g, b: t.layer_norm(x, g, b),
                  {"x": rng.normal(size=(n, d)), "g": rng.normal(size=d), "b": rng.normal(size=d)}, rng)
        k = int(p)
        _check_op(lambda t, a, b, k=k: t.block_scores(a, b, k),
                  {"a": rng.normal(size=(2 * k, m)), "b": rng.normal(size=(2 * k, m))}, rng)
        _check_op(lambda t, a, v, k=k: t.block_attend(a, v, k),
                  {"a": rng.normal(size=(2 * k, k)), "v": rng.normal(size=(2 * k, m))}, rng)
        _check_op(lambda t, x, k=k: t.group_mean(x, k), {"x": rng.normal(size=(3 * k, m))}, rng)
        _check_op(lambda t, x: t.row_norms(x), {"x": rng.normal(size=(n, m))}, rng)
        count += 7
    assert count >= 100


# -- backends -------------------------------------------------------------------

@pytest.mark.skipif(not kernels.NUMBA_KERNELS, reason="numba not installed")
def test_numba_and_numpy_kernels_agree(rng):
    nb, npk = kernels.NUMBA_KERNELS, kernels.NUMPY_KERNELS
    a, b = rng.normal(size=(6, 4)), rng.normal(size=(4, 3))
    npt.assert_allclose(nb["matmul"](a, b), npk["matmul"](a, b), atol=1e-12)
    s = 5 * rng.normal(size=(6, 3))
    y = npk["softmax_rows"](s)
    npt.assert_allclose(nb["softmax_rows"](s), y, atol=1e-14)
    g = rng.normal(size=s.shape)
    npt.assert_allclose(nb["softmax_rows_backward"](y, g), npk["softmax_rows_backward"](y, g), atol=1e-14)
    x, gam, bet = rng.normal(size=(6, 4)), rng.normal(size=4), rng.normal(size=4)
    for u, v in zip(nb["layer_norm_rows"](x, gam, bet, 1e-5), npk["layer_norm_rows"](x, gam, bet, 1e-5)):
        npt.assert_allclose(u, v, atol=1e-12)
    _, xhat, inv = npk["layer_norm_rows"](x, gam, bet, 1e-5)
    g = rng.normal(size=x.shape)
    for u, v in zip(nb["layer_norm_rows_backward"](g, xhat, inv, gam),
                    npk["layer_norm_rows_backward"](g, xhat, inv, gam)):
        npt.assert_allclose(u, v, atol=1e-12)
    q, kk = rng.normal(size=(6, 4)), rng.normal(size=(6, 4))
    npt.assert_allclose(nb["block_scores"](q, kk, 3), npk["block_scores"](q, kk, 3), atol=1e-12)
    p = rng.normal(size=(6, 3))
    npt.assert_allclose(nb["block_attend"](p, q, 3), npk["block_attend"](p, q, 3), atol=1e-12)
    npt.assert_array_equal(nb["block_transpose"](p, 3), npk["block_transpose"](p, 3))
    npt.assert_allclose(nb["group_mean"](q, 3), npk["group_mean"](q, 3), atol=1e-14)
    protos = rng.normal(size=(5, 4))
    npt.assert_allclose(nb["sq_dists"](q, protos), npk["sq_dists"](q, protos), atol=1e-12)
    npt.assert_array_equal(nb["nearest"](q, protos), npk["nearest"](q, protos))
