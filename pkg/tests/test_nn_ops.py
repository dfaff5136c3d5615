import numpy as np
import pytest

from glrdenoise import autodiff as ad
from glrdenoise import nn_ops as nn
from glrdenoise.autodiff import ShapeError, Tensor


def _zero_bias(n):
    return Tensor(np.zeros(n))


def direct_conv_same(x, k):
    """Independent sliding-window oracle for stride-1 same-padding conv,
    single channel in and out."""
    kh, kw = k.shape
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x, ((ph, ph), (pw, pw)))
    out = np.zeros_like(x)
    for i in range(x.shape[0]):
        for j in range(x.shape[1]):
            out[i, j] = np.sum(xp[i : i + kh, j : j + kw] * k)
    return out


class TestConv2d:
    def test_identity_kernel(self):
        x = Tensor(np.random.default_rng(0).standard_normal((1, 1, 4, 4)))
        k = Tensor(np.ones((1, 1, 1, 1)))
        out = nn.conv2d(x, k, _zero_bias(1))
        np.testing.assert_array_equal(out.data, x.data)

    def test_zero_kernel(self):
        x = Tensor(np.random.default_rng(0).standard_normal((1, 1, 5, 5)))
        k = Tensor(np.zeros((1, 1, 3, 3)))
        out = nn.conv2d(x, k, _zero_bias(1))
        np.testing.assert_array_equal(out.data, np.zeros((1, 1, 5, 5)))

    def test_all_ones_3x3_on_2x2(self):
        # every same-padded window covers all four pixels: 1+2+3+4 = 10
        x = np.array([[1.0, 2.0], [3.0, 4.0]])
        k = np.ones((3, 3))
        oracle = direct_conv_same(x, k)
        np.testing.assert_array_equal(oracle, [[10.0, 10.0], [10.0, 10.0]])
        out = nn.conv2d(Tensor(x[None, None]), Tensor(k[None, None]), _zero_bias(1))
        np.testing.assert_allclose(out.data[0, 0], oracle, atol=1e-12)

    def test_matches_direct_oracle_random(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal((6, 7))
        k = rng.standard_normal((3, 3))
        out = nn.conv2d(Tensor(x[None, None]), Tensor(k[None, None]), _zero_bias(1))
        np.testing.assert_allclose(out.data[0, 0], direct_conv_same(x, k), atol=1e-12)

    def test_same_padding_stride2_output_is_ceil(self):
        x = Tensor(np.zeros((1, 1, 7, 10)))
        k = Tensor(np.zeros((2, 1, 3, 3)))
        out = nn.conv2d(x, k, _zero_bias(2), stride=2)
        assert out.data.shape == (1, 2, 4, 5)

    def test_channel_mismatch_names_extents(self):
        x = Tensor(np.zeros((1, 3, 4, 4)))
        k = Tensor(np.zeros((1, 2, 3, 3)))
        with pytest.raises(ShapeError, match="2 input channels, input has 3"):
            nn.conv2d(x, k, _zero_bias(1))

    def test_even_kernel_same_padding_rejected(self):
        with pytest.raises(ShapeError, match="odd"):
            nn.conv2d(Tensor(np.zeros((1, 1, 4, 4))),
                      Tensor(np.zeros((1, 1, 2, 2))), _zero_bias(1))


class TestTransposedConv2d:
    def test_single_tap_scatter(self):
        v = 3.25
        x = Tensor(np.full((1, 1, 1, 1), v))
        k = Tensor(np.ones((1, 1, 2, 2)))
        out = nn.transposed_conv2d(x, k, _zero_bias(1))
        np.testing.assert_array_equal(out.data, np.full((1, 1, 2, 2), v))

    def test_zero_input(self):
        x = Tensor(np.zeros((1, 2, 3, 3)))
        k = Tensor(np.random.default_rng(0).standard_normal((2, 1, 2, 2)))
        out = nn.transposed_conv2d(x, k, _zero_bias(1))
        np.testing.assert_array_equal(out.data, np.zeros((1, 1, 6, 6)))

    def test_output_doubles_extents(self):
        x = Tensor(np.zeros((2, 3, 5, 7)))
        k = Tensor(np.zeros((3, 4, 2, 2)))
        assert nn.transposed_conv2d(x, k, _zero_bias(4)).data.shape == (2, 4, 10, 14)

    def test_adjoint_identity_with_stride2_conv(self):
        # <conv(x), y> == <x, transposed_conv(y)> for the shared 2x2 kernel
        rng = np.random.default_rng(3)
        kern = rng.standard_normal((3, 2, 2, 2))  # (O, C, 2, 2)
        x = rng.standard_normal((1, 2, 4, 4))
        y = rng.standard_normal((1, 3, 2, 2))
        cx = nn.conv2d(Tensor(x), Tensor(kern), _zero_bias(3), stride=2,
                       padding="valid")
        ty = nn.transposed_conv2d(Tensor(y), Tensor(kern), _zero_bias(2))
        lhs = float(np.sum(cx.data * y))
        rhs = float(np.sum(x * ty.data))
        assert lhs == pytest.approx(rhs, abs=1e-10)


class TestMaxPool:
    def test_2x2_window(self):
        out = nn.max_pool_2x2(Tensor([[[[1.0, 2.0], [3.0, 4.0]]]]))
        np.testing.assert_array_equal(out.data, [[[[4.0]]]])

    def test_constant_input_ties_to_top_left(self):
        x = Tensor(np.full((1, 1, 4, 4), 2.5))
        out = nn.max_pool_2x2(x)
        np.testing.assert_array_equal(out.data, np.full((1, 1, 2, 2), 2.5))
        ad.tensor_sum(out).backward()
        expected = np.zeros((4, 4))
        expected[::2, ::2] = 1.0
        np.testing.assert_array_equal(x.grad[0, 0], expected)

    def test_odd_extents_floor(self):
        x = Tensor(np.zeros((1, 1, 26, 26)))
        once = nn.max_pool_2x2(x)
        assert once.data.shape == (1, 1, 13, 13)
        twice = nn.max_pool_2x2(once)
        assert twice.data.shape == (1, 1, 6, 6)


class TestFullyConnected:
    def test_identity(self):
        x = Tensor(np.array([1.0, 2.0, 3.0]))
        out = nn.fully_connected(x, Tensor(np.eye(3)), _zero_bias(3))
        np.testing.assert_array_equal(out.data, x.data)

    def test_zero_weights_gives_bias(self):
        out = nn.fully_connected(Tensor(np.ones(4)), Tensor(np.zeros((2, 4))),
                                 Tensor(np.array([5.0, -1.0])))
        np.testing.assert_array_equal(out.data, [5.0, -1.0])

    def test_random_matches_matvec(self):
        rng = np.random.default_rng(4)
        w = rng.standard_normal((2, 3))
        b = rng.standard_normal(2)
        x = rng.standard_normal(3)
        out = nn.fully_connected(Tensor(x), Tensor(w), Tensor(b))
        np.testing.assert_allclose(out.data, w @ x + b, atol=1e-14)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            nn.fully_connected(Tensor(np.ones(4)), Tensor(np.zeros((2, 3))),
                               _zero_bias(2))


def test_linear_op_adjoint_consistency():
    # every linear op satisfies <op(x), y> = <x, op^T(y)> where op^T is its
    # backward applied to y
    rng = np.random.default_rng(5)
    kern = rng.standard_normal((2, 1, 3, 3))
    x = rng.standard_normal((1, 1, 6, 6))
    y = rng.standard_normal((1, 2, 6, 6))
    xt = Tensor(x)
    out = nn.conv2d(xt, Tensor(kern), _zero_bias(2))
    ad.tensor_sum(ad.mul(out, Tensor(y))).backward()
    lhs = float(np.sum(out.data * y))
    rhs = float(np.sum(x * xt.grad))
    assert abs(lhs - rhs) < 1e-10
