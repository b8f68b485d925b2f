import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from covdiff import numkernel as nk


def naive_matmul(x, W):
    out = np.zeros((x.shape[0], W.shape[0]))
    for i in range(x.shape[0]):
        for j in range(W.shape[0]):
            acc = 0.0
            for k in range(x.shape[1]):
                acc += x[i, k] * W[j, k]
            out[i, j] = acc
    return out


class TestLinear:
    def test_identity(self):
        y, _ = nk.linear_forward(np.eye(2), np.zeros(2), np.array([[3.0, -1.0]]))
        np.testing.assert_array_equal(y, [[3.0, -1.0]])

    def test_hand_arithmetic(self):
        y, _ = nk.linear_forward(np.array([[1.0, 1.0]]), np.array([0.5]), np.array([[2.0, 3.0]]))
        np.testing.assert_array_equal(y, [[5.5]])

    def test_matches_triple_loop(self):
        rng = nk.Rng(42)
        W = rng.uniform((7, 5), -1, 1)
        b = rng.uniform(7, -1, 1)
        x = rng.uniform((4, 5), -1, 1)
        y, _ = nk.linear_forward(W, b, x)
        np.testing.assert_allclose(y, naive_matmul(x, W) + b, rtol=0, atol=1e-12)

    def test_shape_error_names_both_shapes(self):
        with pytest.raises(nk.ShapeError, match=r"\(3, 2\).*\(1, 4\)"):
            nk.linear_forward(np.zeros((3, 2)), np.zeros(3), np.zeros((1, 4)))

    def test_backward_finite_differences(self):
        rng = nk.Rng(1)
        W = rng.uniform((3, 4), -1, 1)
        b = rng.uniform(3, -1, 1)
        x = rng.uniform((2, 4), -1, 1)
        up = rng.uniform((2, 3), -1, 1)
        _, cache = nk.linear_forward(W, b, x)
        dx, dW, db = nk.linear_backward(cache, up)
        f_W = lambda w: float((nk.linear_forward(w, b, x)[0] * up).sum())
        f_x = lambda v: float((nk.linear_forward(W, b, v)[0] * up).sum())
        f_b = lambda v: float((nk.linear_forward(W, v, x)[0] * up).sum())
        assert nk.grad_check(f_W, W, dW) <= 1e-6
        assert nk.grad_check(f_x, x, dx) <= 1e-6
        assert nk.grad_check(f_b, b, db) <= 1e-6


class TestRelu:
    def test_forward(self):
        y, _ = nk.relu_forward(np.array([-1.0, 0.0, 2.0]))
        np.testing.assert_array_equal(y, [0.0, 0.0, 2.0])

    def test_subgradient_zero_at_zero(self):
        _, cache = nk.relu_forward(np.array([-1.0, 0.0, 2.0]))
        np.testing.assert_array_equal(nk.relu_backward(cache, np.array([5.0, 5.0, 5.0])), [0.0, 0.0, 5.0])

    def test_sum_gradient_finite_differences(self):
        rng = nk.Rng(3)
        x = rng.uniform(50, -1, 1)
        x = x[np.abs(x) > 1e-3]  # stay away from the kink
        _, cache = nk.relu_forward(x)
        analytic = nk.relu_backward(cache, np.ones_like(x))
        assert nk.grad_check(lambda v: float(nk.relu_forward(v)[0].sum()), x, analytic) <= 1e-6


class TestLayerNorm:
    def test_constant_input_gives_zero(self):
        y, _ = nk.layernorm_forward(np.full(5, 3.7), np.ones(5), np.zeros(5))
        np.testing.assert_array_equal(y, np.zeros(5))

    def test_unit_variance_input_is_fixed_point(self):
        y, _ = nk.layernorm_forward(np.array([1.0, -1.0]), np.ones(2), np.zeros(2), eps=0.0)
        np.testing.assert_array_equal(y, [1.0, -1.0])

    def test_needs_two_features(self):
        with pytest.raises(ValueError):
            nk.layernorm_forward(np.array([1.0]), np.ones(1), np.zeros(1))

    def test_backward_finite_differences(self):
        rng = nk.Rng(5)
        x = rng.uniform(8, -1, 1)
        g = rng.uniform(8, -1, 1)
        b = rng.uniform(8, -1, 1)
        up = rng.uniform(8, -1, 1)
        _, cache = nk.layernorm_forward(x, g, b)
        dx, dg, db = nk.layernorm_backward(cache, up)
        assert nk.grad_check(lambda v: float(nk.layernorm_forward(v, g, b)[0] @ up), x, dx) <= 1e-6
        assert nk.grad_check(lambda v: float(nk.layernorm_forward(x, v, b)[0] @ up), g, dg) <= 1e-6
        assert nk.grad_check(lambda v: float(nk.layernorm_forward(x, g, v)[0] @ up), b, db) <= 1e-6

    def test_rows_normalized_independently(self):
        rng = nk.Rng(6)
        x = rng.uniform((3, 6), -1, 1)
        y, _ = nk.layernorm_forward(x, np.ones(6), np.zeros(6))
        for i in range(3):
            yi, _ = nk.layernorm_forward(x[i], np.ones(6), np.zeros(6))
            np.testing.assert_allclose(y[i], yi, rtol=0, atol=1e-15)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_backward_passes_match_finite_differences(seed):
    rng = nk.Rng(seed)
    W = rng.uniform((4, 6), -1, 1)
    b = rng.uniform(4, -1, 1)
    g = rng.uniform(4, -1, 1)
    beta = rng.uniform(4, -1, 1)
    x = rng.uniform((3, 6), -1, 1)
    up = rng.uniform((3, 4), -1, 1)

    def f(xv):
        z, _ = nk.linear_forward(W, b, xv)
        a, _ = nk.relu_forward(z)
        y, _ = nk.layernorm_forward(a, g, beta)
        return float((y * up).sum())

    z, lc = nk.linear_forward(W, b, x)
    a, rc = nk.relu_forward(z)
    if np.min(np.abs(z)) < 1e-4:
        return  # finite differences straddle the ReLU kink
    _, nc = nk.layernorm_forward(a, g, beta)
    da, _, _ = nk.layernorm_backward(nc, up)
    dx, _, _ = nk.linear_backward(lc, nk.relu_backward(rc, da))
    assert nk.grad_check(f, x, dx) <= 1e-4


class TestAdam:
    def test_zero_gradient_leaves_params(self):
        params = {"w": np.array([1.0, -2.0])}
        state = nk.AdamState(params)
        nk.adam_step(params, {"w": np.zeros(2)}, state, lr=0.1)
        np.testing.assert_array_equal(params["w"], [1.0, -2.0])
        assert state.t == 1

    def test_first_step_closed_form(self):
        # m_hat = g, v_hat = g^2 on step one, so the update is -lr * g / (|g| + eps)
        params = {"w": np.array([0.0])}
        state = nk.AdamState(params)
        nk.adam_step(params, {"w": np.array([1.0])}, state, lr=0.1)
        assert params["w"][0] == pytest.approx(-0.1 / (1.0 + 1e-8), rel=1e-12)

    def test_deterministic(self):
        def run():
            rng = nk.Rng(9)
            params = {"w": rng.uniform((3, 3), -1, 1)}
            state = nk.AdamState(params)
            for _ in range(10):
                nk.adam_step(params, {"w": rng.normal((3, 3))}, state, lr=1e-2)
            return params["w"]

        assert run().tobytes() == run().tobytes()

    def test_nonfinite_gradient_names_parameter(self):
        params = {"enc.W": np.zeros(2)}
        state = nk.AdamState(params)
        with pytest.raises(nk.NonFiniteError, match="enc.W"):
            nk.adam_step(params, {"enc.W": np.array([1.0, np.nan])}, state, lr=0.1)
        assert state.t == 0

    def test_rejects_nonpositive_lr(self):
        params = {"w": np.zeros(1)}
        with pytest.raises(ValueError):
            nk.adam_step(params, {"w": np.ones(1)}, nk.AdamState(params), lr=0.0)


class TestRng:
    def test_reproducible(self):
        a, b = nk.Rng(123), nk.Rng(123)
        assert a.uniform(100).tobytes() == b.uniform(100).tobytes()
        assert a.normal(101).tobytes() == b.normal(101).tobytes()

    def test_uniform_range(self):
        u = nk.Rng(0).uniform(10000)
        assert u.min() >= 0.0 and u.max() < 1.0

    def test_gaussian_moments(self):
        z = nk.Rng(2024).normal(100_000)
        assert abs(z.mean()) <= 0.02
        assert abs(z.var() - 1.0) <= 0.05

    def test_permutation_is_permutation(self):
        p = nk.Rng(5).permutation(257)
        np.testing.assert_array_equal(np.sort(p), np.arange(257))

    def test_integers_range(self):
        k = nk.Rng(8).integers(1, 101, 5000)
        assert k.min() == 1 and k.max() == 100


class TestGradCheck:
    def test_exact_quadratic(self):
        x = np.array([1.0, 2.0])
        assert nk.grad_check(lambda v: float((v * v).sum()), x, 2 * x) <= 1e-8

    def test_detects_corrupted_gradient(self):
        x = np.array([1.0, 2.0, -0.5])
        g = 2 * x
        g[1] *= 2
        assert nk.grad_check(lambda v: float((v * v).sum()), x, g) > 0.1

    def test_subset_of_coordinates(self):
        x = np.array([1.0, 2.0])
        g = np.array([2.0, 999.0])
        assert nk.grad_check(lambda v: float((v * v).sum()), x, g, indices=[0]) <= 1e-8
