import math

import numpy as np
import pytest

from edgederm.tensor import (
    ConvParams,
    Tensor,
    batchnorm_fold,
    conv2d,
    dense,
    depthwise_conv2d,
    global_avg_pool,
    relu6,
    same_padding,
    softmax,
)


def conv2d_oracle(x, kernel, bias, stride, padding):
    """Six-nested-loop direct convolution in float64."""
    pt, pb, pl, pr = padding
    xp = np.pad(x.astype(np.float64), ((0, 0), (pt, pb), (pl, pr), (0, 0)))
    kh, kw, cin, cout = kernel.shape
    b, h, w, _ = xp.shape
    oh = (h - kh) // stride + 1
    ow = (w - kw) // stride + 1
    out = np.zeros((b, oh, ow, cout))
    for n in range(b):
        for i in range(oh):
            for j in range(ow):
                for o in range(cout):
                    acc = 0.0
                    for u in range(kh):
                        for v in range(kw):
                            for c in range(cin):
                                acc += xp[n, i * stride + u, j * stride + v, c] * kernel[u, v, c, o]
                    out[n, i, j, o] = acc + bias[o]
    return out


def depthwise_oracle(x, kernel, bias, stride, padding):
    """Per-channel nested-loop convolution in float64."""
    pt, pb, pl, pr = padding
    xp = np.pad(x.astype(np.float64), ((0, 0), (pt, pb), (pl, pr), (0, 0)))
    kh, kw, ch, _ = kernel.shape
    b, h, w, _ = xp.shape
    oh = (h - kh) // stride + 1
    ow = (w - kw) // stride + 1
    out = np.zeros((b, oh, ow, ch))
    for n in range(b):
        for i in range(oh):
            for j in range(ow):
                for c in range(ch):
                    acc = 0.0
                    for u in range(kh):
                        for v in range(kw):
                            acc += xp[n, i * stride + u, j * stride + v, c] * kernel[u, v, c, 0]
                    out[n, i, j, c] = acc + bias[c]
    return out


class TestTensor:
    def test_valid_construction(self):
        t = Tensor(np.ones((2, 3)))
        assert t.shape == (2, 3)
        assert t.data.shape == (6,)
        assert t.array.dtype == np.float32

    def test_rejects_scalar(self):
        with pytest.raises(ValueError):
            Tensor(np.float32(1.0))

    def test_rejects_zero_dimension(self):
        with pytest.raises(ValueError):
            Tensor(np.ones((2, 0, 3)))

    def test_data_is_row_major(self):
        t = Tensor([[1, 2], [3, 4]])
        assert t.data.tolist() == [1, 2, 3, 4]


class TestConv2d:
    def test_identity_kernel(self):
        x = Tensor(np.arange(16, dtype=np.float32).reshape(1, 4, 4, 1))
        params = ConvParams(Tensor(np.ones((1, 1, 1, 1))), np.zeros(1))
        out = conv2d(x, params)
        assert np.array_equal(out.array, x.array)

    def test_zero_weights_give_bias(self, rng):
        x = Tensor(rng.normal(size=(2, 5, 5, 3)).astype(np.float32))
        params = ConvParams(Tensor(np.zeros((3, 3, 3, 4))), np.array([1.5, -2.0, 0.0, 3.0]))
        out = conv2d(x, params)
        assert np.allclose(out.array, np.array([1.5, -2.0, 0.0, 3.0]))

    def test_matches_nested_loop_oracle(self, rng):
        x = rng.normal(size=(1, 5, 5, 2)).astype(np.float32)
        k = rng.normal(size=(3, 3, 2, 2)).astype(np.float32)
        b = rng.normal(size=2).astype(np.float32)
        params = ConvParams(Tensor(k), b, stride=1)
        out = conv2d(Tensor(x), params)
        expected = conv2d_oracle(x, k, b, 1, (0, 0, 0, 0))
        assert np.abs(out.array - expected).max() < 1e-5

    def test_channel_mismatch_raises(self, rng):
        x = Tensor(rng.normal(size=(1, 4, 4, 3)).astype(np.float32))
        params = ConvParams(Tensor(np.zeros((3, 3, 2, 4))), np.zeros(4))
        with pytest.raises(ValueError, match="channels"):
            conv2d(x, params)

    def test_empty_output_raises(self):
        x = Tensor(np.zeros((1, 2, 2, 1), np.float32))
        params = ConvParams(Tensor(np.zeros((5, 5, 1, 1))), np.zeros(1))
        with pytest.raises(ValueError, match="empty"):
            conv2d(x, params)

    def test_100_random_cases_against_oracle(self, rng):
        for _ in range(100):
            b = int(rng.integers(1, 3))
            h = int(rng.integers(3, 8))
            w = int(rng.integers(3, 8))
            cin = int(rng.integers(1, 4))
            cout = int(rng.integers(1, 4))
            k = int(rng.integers(1, min(h, w) + 1))
            stride = int(rng.integers(1, 3))
            pad = tuple(int(p) for p in rng.integers(0, 2, size=4))
            x = rng.normal(size=(b, h, w, cin)).astype(np.float32)
            kern = rng.normal(size=(k, k, cin, cout)).astype(np.float32)
            bias = rng.normal(size=cout).astype(np.float32)
            if (h + pad[0] + pad[1] - k) // stride + 1 < 1:
                continue
            if (w + pad[2] + pad[3] - k) // stride + 1 < 1:
                continue
            params = ConvParams(Tensor(kern), bias, stride=stride, padding=pad)
            got = conv2d(Tensor(x), params).array
            want = conv2d_oracle(x, kern, bias, stride, pad)
            assert np.abs(got - want).max() < 1e-5

    def test_pure_and_deterministic(self, rng):
        x = Tensor(rng.normal(size=(1, 6, 6, 2)).astype(np.float32))
        params = ConvParams(Tensor(rng.normal(size=(3, 3, 2, 3)).astype(np.float32)), np.zeros(3))
        a = conv2d(x, params).array
        b = conv2d(x, params).array
        assert a.tobytes() == b.tobytes()


class TestDepthwiseConv2d:
    def test_identity(self, rng):
        x = Tensor(rng.normal(size=(1, 3, 3, 2)).astype(np.float32))
        params = ConvParams(Tensor(np.ones((1, 1, 2, 1))), np.zeros(2))
        out = depthwise_conv2d(x, params)
        assert np.array_equal(out.array, x.array)

    def test_matches_per_channel_oracle(self, rng):
        x = rng.normal(size=(1, 6, 6, 3)).astype(np.float32)
        k = rng.normal(size=(3, 3, 3, 1)).astype(np.float32)
        b = rng.normal(size=3).astype(np.float32)
        params = ConvParams(Tensor(k), b, stride=2)
        got = depthwise_conv2d(Tensor(x), params).array
        want = depthwise_oracle(x, k, b, 2, (0, 0, 0, 0))
        assert np.abs(got - want).max() < 1e-5

    def test_channel_independence(self, rng):
        x = rng.normal(size=(1, 5, 5, 3)).astype(np.float32)
        x[:, :, :, 1] = 0.0
        k = rng.normal(size=(3, 3, 3, 1)).astype(np.float32)
        bias = np.array([0.5, 2.5, -1.0], np.float32)
        out = depthwise_conv2d(Tensor(x), ConvParams(Tensor(k), bias))
        assert np.allclose(out.array[:, :, :, 1], 2.5)

    def test_multiplier_must_be_one(self):
        with pytest.raises(ValueError, match="multiplier"):
            depthwise_conv2d(
                Tensor(np.zeros((1, 4, 4, 2), np.float32)),
                ConvParams(Tensor(np.zeros((3, 3, 2, 2))), np.zeros(2)),
            )

    def test_100_random_cases_against_oracle(self, rng):
        for _ in range(100):
            h = int(rng.integers(3, 8))
            ch = int(rng.integers(1, 5))
            k = int(rng.integers(1, 4))
            stride = int(rng.integers(1, 3))
            if (h - k) // stride + 1 < 1:
                continue
            x = rng.normal(size=(1, h, h, ch)).astype(np.float32)
            kern = rng.normal(size=(k, k, ch, 1)).astype(np.float32)
            bias = rng.normal(size=ch).astype(np.float32)
            got = depthwise_conv2d(Tensor(x), ConvParams(Tensor(kern), bias, stride=stride)).array
            want = depthwise_oracle(x, kern, bias, stride, (0, 0, 0, 0))
            assert np.abs(got - want).max() < 1e-5


class TestDense:
    def test_identity_weights(self):
        x = np.array([1.0, -2.0, 3.0], np.float32)
        assert np.array_equal(dense(x, np.eye(3, dtype=np.float32), np.zeros(3)), x)

    def test_zero_input_gives_bias(self):
        bias = np.array([0.5, -1.5], np.float32)
        out = dense(np.zeros(4, np.float32), np.zeros((4, 2), np.float32), bias)
        assert np.array_equal(out, bias)

    def test_matches_double_loop_oracle(self, rng):
        x = rng.normal(size=8)
        w = rng.normal(size=(8, 3))
        b = rng.normal(size=3)
        want = np.array([sum(x[e] * w[e, k] for e in range(8)) + b[k] for k in range(3)])
        assert np.abs(dense(x, w, b) - want).max() < 1e-6

    def test_100_random_cases(self, rng):
        for _ in range(100):
            e = int(rng.integers(1, 16))
            k = int(rng.integers(1, 10))
            x = rng.normal(size=e).astype(np.float32)
            w = rng.normal(size=(e, k)).astype(np.float32)
            b = rng.normal(size=k).astype(np.float32)
            want = np.array(
                [sum(float(x[i]) * float(w[i, j]) for i in range(e)) + float(b[j]) for j in range(k)]
            )
            assert np.abs(dense(x, w, b) - want).max() < 1e-5

    def test_length_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            dense(np.zeros(3), np.zeros((4, 2)), np.zeros(2))


class TestRelu6:
    @pytest.mark.parametrize("value,expected", [(-1.0, 0.0), (3.0, 3.0), (9.0, 6.0)])
    def test_clamping(self, value, expected):
        out = relu6(Tensor(np.full((1, 1, 1, 1), value, np.float32)))
        assert out.array.item() == expected

    def test_range_invariant(self, rng):
        x = Tensor((rng.normal(size=(2, 4, 4, 3)) * 10).astype(np.float32))
        out = relu6(x).array
        assert out.min() >= 0.0 and out.max() <= 6.0


class TestGlobalAvgPool:
    def test_constant_tensor(self):
        out = global_avg_pool(Tensor(np.full((1, 3, 3, 2), 2.5, np.float32)))
        assert np.allclose(out, 2.5)

    def test_arithmetic_mean(self):
        x = Tensor(np.array([1, 2, 3, 4], np.float32).reshape(1, 2, 2, 1))
        assert np.allclose(global_avg_pool(x), [2.5])

    def test_matches_accumulate_and_divide(self, rng):
        x = rng.normal(size=(1, 5, 6, 4)).astype(np.float32)
        want = np.zeros(4)
        for i in range(5):
            for j in range(6):
                want += x[0, i, j]
        want /= 30
        assert np.abs(global_avg_pool(Tensor(x)) - want).max() < 1e-6

    def test_requires_4d(self):
        with pytest.raises(ValueError):
            global_avg_pool(Tensor(np.zeros((3, 3), np.float32)))


class TestSoftmax:
    def test_uniform_logits(self):
        out = softmax(np.zeros(7))
        assert np.allclose(out, 1 / 7)

    def test_shift_invariance(self, rng):
        x = rng.normal(size=9)
        assert np.abs(softmax(x) - softmax(x + 13.7)).max() < 1e-9

    def test_two_hot_value(self):
        out = softmax([2, 0, 0, 0, 0, 0, 0])
        expected_first = math.exp(2) / (math.exp(2) + 6)
        assert abs(out[0] - expected_first) < 1e-12
        assert np.allclose(out[1:], (1 - expected_first) / 6)

    def test_rejects_nan_inf(self):
        with pytest.raises(ValueError, match="finite"):
            softmax([1.0, float("nan")])
        with pytest.raises(ValueError, match="finite"):
            softmax([1.0, float("inf")])

    def test_properties_over_random_vectors(self, rng):
        for _ in range(200):
            n = int(rng.integers(1, 12))
            x = rng.normal(size=n) * 10
            p = softmax(x)
            assert abs(p.sum() - 1.0) < 1e-6
            assert (p > 0).all()
            assert np.argmax(p) == np.argmax(x)


class TestBatchnormFold:
    def test_identity_normalization(self, rng):
        k = rng.normal(size=(3, 3, 2, 4)).astype(np.float32)
        params = ConvParams(Tensor(k), rng.normal(size=4).astype(np.float32))
        folded = batchnorm_fold(params, np.ones(4), np.zeros(4), np.zeros(4), np.ones(4), eps=0.0)
        assert folded.kernel.array.tobytes() == k.tobytes()
        assert folded.bias.tobytes() == params.bias.tobytes()

    def test_gamma_two_doubles(self, rng):
        k = rng.normal(size=(1, 1, 2, 3)).astype(np.float32)
        params = ConvParams(Tensor(k), np.array([1.0, 2.0, 3.0], np.float32))
        folded = batchnorm_fold(params, np.full(3, 2.0), np.zeros(3), np.zeros(3), np.ones(3), eps=0.0)
        assert np.allclose(folded.kernel.array, k * 2)
        assert np.allclose(folded.bias, [2.0, 4.0, 6.0])

    def test_equivalent_to_two_step_oracle(self, rng):
        x = Tensor(rng.normal(size=(1, 6, 6, 3)).astype(np.float32))
        k = rng.normal(size=(3, 3, 3, 5)).astype(np.float32)
        params = ConvParams(Tensor(k), rng.normal(size=5).astype(np.float32), stride=1)
        gamma = rng.uniform(0.5, 2.0, 5)
        beta = rng.normal(size=5)
        mean = rng.normal(size=5)
        var = rng.uniform(0.1, 2.0, 5)
        eps = 1e-3
        folded = batchnorm_fold(params, gamma, beta, mean, var, eps=eps)
        got = conv2d(x, folded).array
        raw = conv2d(x, params).array.astype(np.float64)
        want = (raw - mean) / np.sqrt(var + eps) * gamma + beta
        assert np.abs(got - want).max() < 1e-4

    def test_depthwise_fold_equivalence(self, rng):
        x = Tensor(rng.normal(size=(1, 5, 5, 4)).astype(np.float32))
        k = rng.normal(size=(3, 3, 4, 1)).astype(np.float32)
        params = ConvParams(Tensor(k), rng.normal(size=4).astype(np.float32))
        gamma = rng.uniform(0.5, 2.0, 4)
        beta = rng.normal(size=4)
        mean = rng.normal(size=4)
        var = rng.uniform(0.1, 2.0, 4)
        folded = batchnorm_fold(params, gamma, beta, mean, var, eps=1e-3, depthwise=True)
        got = depthwise_conv2d(x, folded).array
        raw = depthwise_conv2d(x, params).array.astype(np.float64)
        want = (raw - mean) / np.sqrt(var + 1e-3) * gamma + beta
        assert np.abs(got - want).max() < 1e-4

    def test_length_mismatch(self, rng):
        params = ConvParams(Tensor(np.zeros((1, 1, 2, 4), np.float32)), np.zeros(4))
        with pytest.raises(ValueError, match="length"):
            batchnorm_fold(params, np.ones(3), np.zeros(4), np.zeros(4), np.ones(4))

    def test_negative_variance_rejected(self, rng):
        params = ConvParams(Tensor(np.zeros((1, 1, 2, 2), np.float32)), np.zeros(2))
        with pytest.raises(ValueError, match="variance"):
            batchnorm_fold(params, np.ones(2), np.zeros(2), np.zeros(2), np.array([1.0, -0.1]))


class TestSamePadding:
    def test_stride_one_3x3(self):
        assert same_padding(8, 8, 3, 3, 1) == (1, 1, 1, 1)

    def test_stride_two_extra_goes_top_left(self):
        # total padding 1 on each axis: top/left biased
        assert same_padding(224, 224, 3, 3, 2) == (1, 0, 1, 0)

    def test_output_size_is_ceil(self):
        for size in (7, 8, 9, 32):
            for stride in (1, 2):
                pt, pb, pl, pr = same_padding(size, size, 3, 3, stride)
                out = (size + pt + pb - 3) // stride + 1
                assert out == -(-size // stride)
