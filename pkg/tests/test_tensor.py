import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from specrecon.errors import ShapeError
from specrecon.tensor import (add, center_crop, center_crop_backward, conv2d_valid_backward,
                              conv2d_valid_forward, prelu_backward, prelu_forward)

from conftest import brute_conv, fd_grad, max_rel


class TestConvForward:
    @pytest.mark.parametrize("k, c_out, out_hw", [(5, 128, 32), (7, 31, 30)])
    def test_network_shapes(self, k, c_out, out_hw):
        x = np.zeros((1, 3, 36, 36), np.float32)
        w = np.zeros((c_out, 3, k, k), np.float32)
        assert conv2d_valid_forward(x, w, np.zeros(c_out, np.float32)).shape == (1, c_out, out_hw, out_hw)

    def test_sum_of_ones(self):
        out = conv2d_valid_forward(np.ones((1, 1, 3, 3)), np.ones((1, 1, 3, 3)), np.zeros(1))
        assert out.shape == (1, 1, 1, 1)
        assert out[0, 0, 0, 0] == 9.0

    @pytest.mark.parametrize("method", ["gemm", "direct"])
    def test_matches_brute_force(self, rng, method):
        x = rng.standard_normal((2, 3, 8, 8))
        w = rng.standard_normal((4, 3, 3, 3))
        b = rng.standard_normal(4)
        assert max_rel(conv2d_valid_forward(x, w, b, method=method), brute_conv(x, w, b), floor=1e-12) < 1e-5

    def test_is_cross_correlation(self):
        # A kernel with a single 1 at the top-left picks x[i, j], not x[i+2, j+2].
        x = np.arange(25, dtype=np.float64).reshape(1, 1, 5, 5)
        w = np.zeros((1, 1, 3, 3))
        w[0, 0, 0, 0] = 1
        np.testing.assert_array_equal(conv2d_valid_forward(x, w, np.zeros(1))[0, 0], x[0, 0, :3, :3])

    def test_float32_stays_float32(self, rng):
        x = rng.standard_normal((1, 2, 6, 6)).astype(np.float32)
        w = rng.standard_normal((3, 2, 3, 3)).astype(np.float32)
        assert conv2d_valid_forward(x, w, np.zeros(3, np.float32)).dtype == np.float32

    @pytest.mark.parametrize("x_shape, w_shape, axis", [
        ((1, 2, 8, 8), (4, 3, 3, 3), "c"),
        ((1, 3, 2, 8), (4, 3, 3, 3), "h"),
        ((1, 3, 8, 2), (4, 3, 3, 3), "w"),
        ((1, 3, 8, 8), (4, 3, 2, 2), "kernel"),
    ])
    def test_dimension_errors_name_axis(self, x_shape, w_shape, axis):
        with pytest.raises(ShapeError) as info:
            conv2d_valid_forward(np.zeros(x_shape), np.zeros(w_shape), np.zeros(w_shape[0]))
        assert info.value.axis == axis

    def test_large_batch_is_chunked_consistently(self, rng, monkeypatch):
        import specrecon.tensor as T
        x = rng.standard_normal((5, 3, 9, 9))
        w = rng.standard_normal((2, 3, 3, 3))
        b = rng.standard_normal(2)
        whole = conv2d_valid_forward(x, w, b)
        monkeypatch.setattr(T, "MAX_COL_ELEMENTS", 27 * 49 * 2)
        np.testing.assert_allclose(conv2d_valid_forward(x, w, b), whole, rtol=1e-12, atol=1e-12)
        g = rng.standard_normal(whole.shape)
        chunked = conv2d_valid_backward(x, w, g)
        monkeypatch.setattr(T, "MAX_COL_ELEMENTS", 1 << 23)
        for a, e in zip(chunked, conv2d_valid_backward(x, w, g)):
            np.testing.assert_allclose(a, e, rtol=1e-12, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(n=st.integers(1, 2), c=st.integers(1, 4), co=st.integers(1, 4),
       h=st.integers(1, 12), w=st.integers(1, 12),
       kh=st.sampled_from([1, 3, 5, 7]), kw=st.sampled_from([1, 3, 5, 7]))
def test_valid_conv_shape_law(n, c, co, h, w, kh, kw):
    if h < kh or w < kw:
        with pytest.raises(ShapeError):
            conv2d_valid_forward(np.zeros((n, c, h, w)), np.zeros((co, c, kh, kw)), np.zeros(co))
        return
    out = conv2d_valid_forward(np.ones((n, c, h, w)), np.ones((co, c, kh, kw)), np.zeros(co))
    assert out.shape == (n, co, h - kh + 1, w - kw + 1)
    assert np.all(out == c * kh * kw)


class TestConvBackward:
    def test_zero_grad_out(self, rng):
        x = rng.standard_normal((2, 3, 6, 6))
        w = rng.standard_normal((4, 3, 3, 3))
        gx, gw, gb = conv2d_valid_backward(x, w, np.zeros((2, 4, 4, 4)))
        assert not gx.any() and not gw.any() and not gb.any()

    def test_one_by_one_is_scalar_multiply(self, rng):
        x = rng.standard_normal((2, 1, 5, 4))
        g = rng.standard_normal((2, 1, 5, 4))
        gx, _, _ = conv2d_valid_backward(x, np.full((1, 1, 1, 1), 0.75), g)
        np.testing.assert_array_equal(gx, 0.75 * g)

    @pytest.mark.parametrize("x_shape, w_shape", [((2, 3, 6, 5), (4, 3, 3, 3)), ((1, 4, 5, 5), (2, 4, 1, 1)),
                                                  ((1, 2, 7, 7), (3, 2, 5, 3))])
    def test_finite_differences(self, rng, x_shape, w_shape):
        x = rng.standard_normal(x_shape)
        w = rng.standard_normal(w_shape)
        b = rng.standard_normal(w_shape[0])
        g = rng.standard_normal(conv2d_valid_forward(x, w, b).shape)
        gx, gw, gb = conv2d_valid_backward(x, w, g)

        def f():
            return float(np.sum(conv2d_valid_forward(x, w, b) * g))

        assert max_rel(gx, fd_grad(f, x)) < 1e-4
        assert max_rel(gw, fd_grad(f, w)) < 1e-4
        assert max_rel(gb, fd_grad(f, b)) < 1e-4

    def test_grad_out_shape_mismatch(self, rng):
        with pytest.raises(ShapeError) as info:
            conv2d_valid_backward(np.zeros((1, 3, 6, 6)), np.zeros((2, 3, 3, 3)), np.zeros((1, 2, 4, 5)))
        assert info.value.axis == "w"


class TestPrelu:
    @pytest.mark.parametrize("x, slope, expected", [(2.0, 0.3, 2.0), (-1.0, 0.25, -0.25), (0.0, 0.9, 0.0)])
    def test_forward_values(self, x, slope, expected):
        out = prelu_forward(np.full((1, 1, 1, 1), x), np.array([slope]))
        assert out[0, 0, 0, 0] == expected

    def test_per_channel_slopes(self):
        x = -np.ones((1, 3, 2, 2))
        out = prelu_forward(x, np.array([0.1, 0.2, -0.3]))
        np.testing.assert_array_equal(out[0, :, 0, 0], [-0.1, -0.2, 0.3])

    def test_backward_hand_case(self):
        gx, ga = prelu_backward(np.full((1, 1, 1, 1), -2.0), np.array([0.5]), np.ones((1, 1, 1, 1)))
        assert gx[0, 0, 0, 0] == 0.5
        assert ga[0] == -2.0

    def test_backward_positive_inputs(self, rng):
        x = rng.uniform(0.1, 1, (2, 3, 4, 4))
        g = rng.standard_normal(x.shape)
        gx, ga = prelu_backward(x, np.array([0.2, 0.3, 0.4]), g)
        np.testing.assert_array_equal(gx, g)
        assert not ga.any()

    def test_zero_takes_slope_branch(self):
        gx, ga = prelu_backward(np.zeros((1, 1, 1, 1)), np.array([0.4]), np.ones((1, 1, 1, 1)))
        assert gx[0, 0, 0, 0] == np.float64(0.4)
        assert ga[0] == 0.0

    def test_finite_differences(self, rng):
        x = rng.standard_normal((2, 3, 4, 4))
        x[np.abs(x) < 1e-2] = 0.5
        a = rng.uniform(-0.5, 0.5, 3)
        g = rng.standard_normal(x.shape)
        gx, ga = prelu_backward(x, a, g)

        def f():
            return float(np.sum(prelu_forward(x, a) * g))

        assert max_rel(gx, fd_grad(f, x)) < 1e-4
        assert max_rel(ga, fd_grad(f, a)) < 1e-4

    def test_slope_count_mismatch(self):
        with pytest.raises(ShapeError):
            prelu_forward(np.zeros((1, 3, 2, 2)), np.zeros(2))

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**16), lam=st.floats(0.01, 100))
    def test_identity_and_positive_homogeneity(self, seed, lam):
        r = np.random.default_rng(seed)
        x = r.standard_normal((1, 3, 4, 4))
        a = r.standard_normal(3)
        pos = np.abs(x)
        np.testing.assert_array_equal(prelu_forward(pos, a), pos)
        np.testing.assert_allclose(prelu_forward(lam * x, a), lam * prelu_forward(x, a), rtol=1e-12)


class TestCrop:
    def test_skip_branch_crop(self):
        x = np.random.default_rng(0).standard_normal((1, 31, 30, 30))
        out = center_crop(x, 20, 20)
        assert out.shape == (1, 31, 20, 20)
        np.testing.assert_array_equal(out, x[:, :, 5:25, 5:25])

    def test_identity(self, rng):
        x = rng.standard_normal((2, 3, 6, 4))
        np.testing.assert_array_equal(center_crop(x, 6, 4), x)

    def test_hand_indexed_center(self):
        x = np.arange(1, 17, dtype=np.float64).reshape(1, 1, 4, 4)
        np.testing.assert_array_equal(center_crop(x, 2, 2)[0, 0], [[6, 7], [10, 11]])

    @pytest.mark.parametrize("target", [(3, 4), (4, 3), (6, 4), (4, 6)])
    def test_bad_targets(self, target):
        with pytest.raises(ShapeError):
            center_crop(np.zeros((1, 1, 4, 4)), *target)

    def test_backward_routes_to_interior(self):
        g = np.ones((1, 1, 2, 2))
        out = center_crop_backward(g, (1, 1, 4, 4))
        assert out.sum() == 4 and out[0, 0, 1:3, 1:3].all()

    @settings(max_examples=40, deadline=None)
    @given(h=st.integers(1, 16), d1=st.integers(0, 4), d2=st.integers(0, 4))
    def test_crops_compose(self, h, d1, d2):
        size = h + 2 * (d1 + d2)
        x = np.arange(size * size, dtype=np.float64).reshape(1, 1, size, size)
        once = center_crop(center_crop(x, h + 2 * d2, h + 2 * d2), h, h)
        np.testing.assert_array_equal(once, center_crop(x, h, h))


class TestAdd:
    def test_values(self):
        np.testing.assert_array_equal(add(np.array([1.0, 2.0]), np.array([3.0, 4.0])), [4.0, 6.0])

    def test_zero_identity_and_commutativity(self, rng):
        x, y = rng.standard_normal((2, 3, 4, 4)), rng.standard_normal((2, 3, 4, 4))
        np.testing.assert_array_equal(add(x, np.zeros_like(x)), x)
        np.testing.assert_array_equal(add(x, y), add(y, x))

    def test_mismatch(self):
        with pytest.raises(ShapeError):
            add(np.zeros((1, 2, 3, 3)), np.zeros((1, 2, 3, 4)))
