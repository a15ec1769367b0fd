import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sdcf import linops
from sdcf.errors import SingularTransformError
from sdcf.linops import Activation, ConvSpec

from oracles import central_diff, loop_conv, loop_pool, lu_logabsdet, rel_err

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


# conv1d --------------------------------------------------------------------


def test_conv1d_identity_kernel():
    np.testing.assert_array_equal(linops.conv1d([1], [1, 2, 3], padding=0), [1, 2, 3])


def test_conv1d_centered_delta():
    np.testing.assert_array_equal(linops.conv1d([0, 1, 0], [4, 5, 6], padding=1), [4, 5, 6])


def test_conv1d_box_kernel():
    np.testing.assert_array_equal(linops.conv1d([1, 1, 1], [1, 2, 3], padding=1), [3, 6, 5])


@settings(max_examples=60, deadline=None)
@given(
    st.integers(0, 3).flatmap(
        lambda h: st.tuples(
            arrays(np.float64, 2 * h + 1, elements=finite),
            st.integers(2 * h + 1, 12).flatmap(lambda d: arrays(np.float64, d, elements=finite)),
        )
    )
)
def test_conv1d_matches_loop(args):
    k, s = args
    np.testing.assert_allclose(linops.conv1d(k, s), loop_conv(k, s), atol=1e-10)


def test_conv1d_rejects_bad_arguments():
    with pytest.raises(ValueError):
        linops.conv1d([1, 1], [1, 2, 3])
    with pytest.raises(ValueError):
        linops.conv1d([1, 1, 1], [1, 2, 3], padding=0)


def test_conv_spec():
    spec = ConvSpec(2, 4, 5)
    assert spec.stride == 1 and spec.padding == 2
    assert spec.weight_shape == (10, 4)
    with pytest.raises(ValueError):
        ConvSpec(1, 2, 4)


# conv_bank -----------------------------------------------------------------


def test_conv_bank_single_unit_filter_is_identity():
    S = np.random.default_rng(0).normal(size=(3, 6))
    np.testing.assert_array_equal(linops.conv_bank([[1.0]], S), S)


def test_conv_bank_scalar_filters():
    out = linops.conv_bank([[1.0, 2.0]], [[1.0, 1.0]])
    np.testing.assert_array_equal(out, [[1, 1, 2, 2]])


def test_conv_bank_matches_loop():
    rng = np.random.default_rng(1)
    T = rng.normal(size=(3, 2))
    S = rng.normal(size=(2, 7))
    out = linops.conv_bank(T, S)
    for k in range(2):
        want = np.concatenate([loop_conv(T[:, m], S[k]) for m in range(2)])
        np.testing.assert_allclose(out[k], want, atol=1e-12)


def test_conv_forward_multichannel_matches_loop():
    rng = np.random.default_rng(2)
    K, Cin, D, P, M = 2, 3, 6, 3, 4
    x = rng.normal(size=(K, Cin, D))
    W = rng.normal(size=(Cin * P, M))
    out, _ = linops.conv_forward(x, W, P)
    for k in range(K):
        for m in range(M):
            want = sum(loop_conv(W[i * P : (i + 1) * P, m], x[k, i]) for i in range(Cin))
            np.testing.assert_allclose(out[k, m], want, atol=1e-12)


def test_conv_backward_finite_differences():
    rng = np.random.default_rng(3)
    K, Cin, D, P, M = 2, 2, 5, 3, 3
    x = rng.normal(size=(K, Cin, D))
    W = rng.normal(size=(Cin * P, M))
    G = rng.normal(size=(K, M, D))
    out, cols = linops.conv_forward(x, W, P)
    dx, dW = linops.conv_backward(G, cols, W, x.shape, P)
    fx = lambda v: np.sum(linops.conv_forward(v, W, P)[0] * G)
    fW = lambda v: np.sum(linops.conv_forward(x, v, P)[0] * G)
    assert rel_err(dx, central_diff(fx, x)) < 1e-8
    assert rel_err(dW, central_diff(fW, W)) < 1e-8


# pooling -------------------------------------------------------------------


@pytest.mark.parametrize(
    "x, want", [([1, 3, 2, 5], [3, 5]), ([7, 7, 7, 7], [7, 7]), ([1, 2, 3], [2])]
)
def test_maxpool_examples(x, want):
    np.testing.assert_array_equal(linops.maxpool1d(x), want)


def test_maxpool_too_short():
    with pytest.raises(ValueError):
        linops.maxpool1d([1.0])


@given(arrays(np.float64, st.integers(2, 15), elements=finite))
def test_maxpool_matches_loop(x):
    np.testing.assert_array_equal(linops.maxpool1d(x), loop_pool(x))


def test_maxpool_backward_routes_to_argmax():
    x = np.array([[[1.0, 3.0, 5.0, 2.0, 9.0]]])
    out, idx = linops.maxpool_forward(x)
    dx = linops.maxpool_backward(np.array([[[10.0, 20.0]]]), idx, 5)
    np.testing.assert_array_equal(dx, [[[0, 10, 20, 0, 0]]])


# log-det -------------------------------------------------------------------


def test_logdet_examples():
    assert linops.logdet_rect(np.eye(2)) == 0.0
    assert linops.logdet_rect(np.diag([2.0, 3.0])) == pytest.approx(math.log(6), abs=1e-12)
    with pytest.raises(SingularTransformError):
        linops.logdet_rect(np.array([[1.0, 2.0], [0.0, 0.0]]))


def test_logdet_nonstrict_clamps():
    v = linops.logdet_rect(np.zeros((2, 3)), strict=False)
    assert v == pytest.approx(2 * math.log(linops.SV_CLAMP))


def test_logdet_grad_examples():
    np.testing.assert_allclose(linops.logdet_grad(np.eye(3)), np.eye(3), atol=1e-14)
    np.testing.assert_allclose(
        linops.logdet_grad(np.diag([2.0, 4.0])), np.diag([0.5, 0.25]), atol=1e-14
    )


@pytest.mark.parametrize("shape", [(4, 6), (6, 4), (5, 5)])
def test_logdet_grad_finite_differences(shape):
    T = np.random.default_rng(4).normal(size=shape)
    fd = central_diff(linops.logdet_rect, T, h=1e-6)
    assert rel_err(linops.logdet_grad(T), fd) < 1e-5


def test_logdet_square_matches_lu():
    rng = np.random.default_rng(5)
    for _ in range(20):
        A = rng.normal(size=(4, 4))
        assert linops.logdet_rect(A) == pytest.approx(lu_logabsdet(A), abs=1e-9)


def test_logdet_grad_square_is_inverse_transpose():
    A = np.random.default_rng(6).normal(size=(3, 3))
    np.testing.assert_allclose(linops.logdet_grad(A), np.linalg.inv(A).T, atol=1e-10)


# activations ---------------------------------------------------------------


def test_activation_examples():
    np.testing.assert_array_equal(linops.activate("relu", [-1, 0, 2]), [0, 0, 2])
    assert linops.activate(Activation.SELU, [0.0])[0] == 0.0
    assert linops.activate(Activation.SELU, [1.0])[0] == pytest.approx(1.050701, abs=1e-6)


@pytest.mark.parametrize("kind", list(Activation))
def test_activation_grad_finite_differences(kind):
    x = np.array([-2.0, -0.3, 0.4, 1.7])
    fd = np.array([central_diff(lambda v: linops.activate(kind, v)[i], x)[i] for i in range(4)])
    np.testing.assert_allclose(linops.activation_grad(kind, x), fd, atol=1e-7)


@given(arrays(np.float64, st.integers(1, 20), elements=finite))
def test_prox_is_nearest_nonnegative_point(x):
    p = linops.nonneg_prox(x)
    assert np.all(p >= 0)
    # any other feasible point is at least as far away
    other = np.abs(x)
    assert np.sum((p - x) ** 2) <= np.sum((other - x) ** 2) + 1e-12
