import numpy as np
import pytest

from lrnet.errors import DimensionError
from lrnet.tensor import Rng, col2im, im2col, matmul, sample_standard_normal

from helpers import conv2d_loops, matmul_loops


class TestMatmul:
    def test_identity(self):
        m = np.array([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_array_equal(matmul(np.eye(2), m), m)

    def test_basis_selection(self):
        out = matmul(np.array([[1.0, 0.0]]), np.array([[5.0], [7.0]]))
        np.testing.assert_array_equal(out, [[5.0]])

    def test_against_loop_oracle(self):
        rng = np.random.default_rng(0)
        a = rng.standard_normal((3, 4))
        b = rng.standard_normal((4, 2))
        np.testing.assert_allclose(matmul(a, b), matmul_loops(a, b), atol=1e-12)

    def test_random_shapes_match_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            m, k, n = rng.integers(1, 8, size=3)
            a = rng.standard_normal((m, k))
            b = rng.standard_normal((k, n))
            np.testing.assert_allclose(matmul(a, b), matmul_loops(a, b), atol=1e-12)

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 2\)"):
            matmul(np.zeros((2, 3)), np.zeros((2, 2)))


class TestIm2col:
    def test_single_patch(self):
        x = np.arange(4.0).reshape(1, 1, 2, 2)
        cols = im2col(x, (2, 2))
        assert cols.shape == (4, 1)
        np.testing.assert_array_equal(cols[:, 0], [0.0, 1.0, 2.0, 3.0])

    def test_patch_count(self):
        x = np.arange(9.0).reshape(1, 1, 3, 3)
        cols = im2col(x, (2, 2))
        assert cols.shape == (4, 4)

    def test_convolution_equals_loop_oracle(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            b = int(rng.integers(1, 3))
            c = int(rng.integers(1, 4))
            co = int(rng.integers(1, 4))
            h = int(rng.integers(3, 8))
            w = int(rng.integers(3, 8))
            kh = int(rng.integers(1, min(h, 4) + 1))
            kw = int(rng.integers(1, min(w, 4) + 1))
            stride = int(rng.integers(1, 3))
            pad = int(rng.integers(0, 2))
            x = rng.standard_normal((b, c, h, w))
            weights = rng.standard_normal((co, c, kh, kw))
            cols = im2col(x, (kh, kw), stride=stride, pad=pad)
            oh = (h + 2 * pad - kh) // stride + 1
            ow = (w + 2 * pad - kw) // stride + 1
            viaflat = (weights.reshape(co, -1) @ cols).reshape(co, b, oh, ow)
            via = viaflat.transpose(1, 0, 2, 3)
            np.testing.assert_allclose(
                via, conv2d_loops(x, weights, stride=stride, pad=pad), atol=1e-12
            )

    def test_kernel_too_large(self):
        with pytest.raises(DimensionError):
            im2col(np.zeros((1, 1, 2, 2)), (4, 4))

    def test_col2im_is_adjoint(self):
        # <im2col(x), g> == <x, col2im(g)> characterizes the scatter-add
        rng = np.random.default_rng(3)
        x = rng.standard_normal((2, 3, 6, 5))
        cols = im2col(x, (3, 2), stride=2, pad=1)
        g = rng.standard_normal(cols.shape)
        lhs = float(np.sum(cols * g))
        rhs = float(np.sum(x * col2im(g, x.shape, (3, 2), stride=2, pad=1)))
        assert abs(lhs - rhs) < 1e-9


class TestRng:
    def test_law_of_large_numbers(self):
        samples = sample_standard_normal(Rng(123), (10**6,))
        assert abs(samples.mean()) < 0.01
        assert abs(samples.var() - 1.0) < 0.01

    def test_same_seed_identical(self):
        a = sample_standard_normal(Rng(7, stream=2), (4, 5))
        b = sample_standard_normal(Rng(7, stream=2), (4, 5))
        np.testing.assert_array_equal(a, b)

    def test_counter_advances(self):
        rng = Rng(7)
        a = rng.normal((8,))
        b = rng.normal((8,))
        assert not np.array_equal(a, b)
        assert rng.counter == 2

    def test_distinct_streams_differ(self):
        a = sample_standard_normal(Rng(7, stream=0), (8,))
        b = sample_standard_normal(Rng(7, stream=1), (8,))
        assert not np.array_equal(a, b)

    def test_state_roundtrip(self):
        rng = Rng(99, stream=3)
        rng.normal((2,))
        clone = Rng.from_state(rng.state())
        np.testing.assert_array_equal(rng.normal((5,)), clone.normal((5,)))

    def test_uniform_and_permutation_deterministic(self):
        u1 = Rng(5, stream=1).uniform((6,))
        u2 = Rng(5, stream=1).uniform((6,))
        np.testing.assert_array_equal(u1, u2)
        p1 = Rng(5, stream=1).permutation(10)
        p2 = Rng(5, stream=1).permutation(10)
        np.testing.assert_array_equal(p1, p2)
        assert sorted(p1.tolist()) == list(range(10))
