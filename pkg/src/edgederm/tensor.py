"""Dense float32 tensors and the small set of CNN kernels the runtime needs.

Layout is fixed to (batch, height, width, channels), row-major. All kernels
are pure functions: no shared state, identical inputs give bitwise-identical
outputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

Array = np.ndarray


class Tensor:
    """Contiguous float32 array with every dimension >= 1."""

    __slots__ = ("array",)

    def __init__(self, values) -> None:
        arr = np.asarray(values)
        if arr.ndim == 0:
            raise ValueError("tensor needs at least one dimension")
        if any(d < 1 for d in arr.shape):
            raise ValueError(f"all dimensions must be >= 1, got shape {arr.shape}")
        self.array = np.ascontiguousarray(arr, dtype=np.float32)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.array.shape

    @property
    def data(self) -> Array:
        """Flat row-major view of the values."""
        return self.array.reshape(-1)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape})"


@dataclass(frozen=True)
class ConvParams:
    """Weights and geometry for one convolution.

    kernel is (kh, kw, in_ch, out_ch) for a full convolution or
    (kh, kw, ch, 1) for a depthwise one (channel multiplier fixed at 1).
    padding is explicit per side: (top, bottom, left, right).
    """

    kernel: Tensor
    bias: Array
    stride: int = 1
    padding: tuple[int, int, int, int] = (0, 0, 0, 0)

    def __post_init__(self) -> None:
        if self.kernel.array.ndim != 4:
            raise ValueError(f"kernel must be 4-D, got shape {self.kernel.shape}")
        kh, kw = self.kernel.shape[:2]
        if kh < 1 or kw < 1:
            raise ValueError("kernel spatial dims must be >= 1")
        if self.stride < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")
        if len(self.padding) != 4 or any(p < 0 for p in self.padding):
            raise ValueError(f"padding must be four counts >= 0, got {self.padding}")
        bias = np.ascontiguousarray(self.bias, dtype=np.float32)
        if bias.ndim != 1:
            raise ValueError("bias must be a vector")
        object.__setattr__(self, "bias", bias)


def same_padding(in_h: int, in_w: int, kh: int, kw: int, stride: int) -> tuple[int, int, int, int]:
    """Per-side padding giving output size ceil(in/stride).

    When the total on an axis is odd the extra pixel goes to the top/left.
    """

    def per_axis(size: int, k: int) -> tuple[int, int]:
        out = -(-size // stride)
        total = max((out - 1) * stride + k - size, 0)
        return (total + 1) // 2, total // 2

    top, bottom = per_axis(in_h, kh)
    left, right = per_axis(in_w, kw)
    return top, bottom, left, right


def _out_dim(size: int, pad_a: int, pad_b: int, k: int, stride: int) -> int:
    return (size + pad_a + pad_b - k) // stride + 1


def _conv_geometry(x: Array, params: ConvParams) -> tuple[int, int]:
    if x.ndim != 4:
        raise ValueError(f"convolution input must be 4-D, got shape {x.shape}")
    kh, kw = params.kernel.shape[:2]
    pt, pb, pl, pr = params.padding
    oh = _out_dim(x.shape[1], pt, pb, kh, params.stride)
    ow = _out_dim(x.shape[2], pl, pr, kw, params.stride)
    if oh < 1 or ow < 1:
        raise ValueError(
            f"convolution output would be empty: input {x.shape[1]}x{x.shape[2]}, "
            f"kernel {kh}x{kw}, stride {params.stride}, padding {params.padding}"
        )
    return oh, ow


def conv2d(inp: Tensor, params: ConvParams) -> Tensor:
    """Full 2-D convolution plus bias.

    Output shape is (batch, (h + pad_t + pad_b - kh)//stride + 1, analogous w,
    out_ch); each output element is the dot product of the receptive field
    with the kernel plus the channel bias.
    """
    x = inp.array
    kh, kw, kin, kout = params.kernel.shape
    oh, ow = _conv_geometry(x, params)
    if x.shape[3] != kin:
        raise ValueError(f"input has {x.shape[3]} channels but kernel expects {kin}")
    if params.bias.shape != (kout,):
        raise ValueError(f"bias length {params.bias.shape[0]} != out channels {kout}")
    pt, pb, pl, pr = params.padding
    xp = np.pad(x, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
    k = params.kernel.array
    s = params.stride
    out = np.zeros((x.shape[0], oh, ow, kout), dtype=np.float32)
    # One matmul per kernel offset keeps memory flat and stays deterministic.
    for u in range(kh):
        for v in range(kw):
            window = xp[:, u : u + (oh - 1) * s + 1 : s, v : v + (ow - 1) * s + 1 : s, :]
            out += window @ k[u, v]
    out += params.bias
    return Tensor(out)


def depthwise_conv2d(inp: Tensor, params: ConvParams) -> Tensor:
    """Depthwise 2-D convolution: output channel c depends only on input channel c."""
    x = inp.array
    kh, kw, ch, mult = params.kernel.shape
    if mult != 1:
        raise ValueError(f"depthwise kernel must have channel multiplier 1, got {mult}")
    oh, ow = _conv_geometry(x, params)
    if x.shape[3] != ch:
        raise ValueError(f"input has {x.shape[3]} channels but depthwise kernel has {ch}")
    if params.bias.shape != (ch,):
        raise ValueError(f"bias length {params.bias.shape[0]} != channels {ch}")
    pt, pb, pl, pr = params.padding
    xp = np.pad(x, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
    k = params.kernel.array
    s = params.stride
    out = np.zeros((x.shape[0], oh, ow, ch), dtype=np.float32)
    for u in range(kh):
        for v in range(kw):
            window = xp[:, u : u + (oh - 1) * s + 1 : s, v : v + (ow - 1) * s + 1 : s, :]
            out += window * k[u, v, :, 0]
    out += params.bias
    return Tensor(out)


def dense(inp, weights: Array, bias: Array) -> Array:
    """Affine map of a vector: out[k] = sum_e inp[e] * weights[e, k] + bias[k]."""
    v = np.asarray(inp)
    w = np.asarray(weights)
    b = np.asarray(bias)
    if v.ndim != 1 or w.ndim != 2 or b.ndim != 1:
        raise ValueError("dense expects vector input, matrix weights, vector bias")
    if v.shape[0] != w.shape[0] or b.shape[0] != w.shape[1]:
        raise ValueError(
            f"dense shape mismatch: input {v.shape[0]}, weights {w.shape}, bias {b.shape[0]}"
        )
    return v @ w + b


def relu6(inp: Tensor) -> Tensor:
    """Elementwise min(max(x, 0), 6)."""
    return Tensor(np.clip(inp.array, 0.0, 6.0))


def global_avg_pool(inp: Tensor) -> Array:
    """Mean over batch and spatial positions; returns one value per channel."""
    if inp.array.ndim != 4:
        raise ValueError(f"global average pool needs a 4-D input, got shape {inp.shape}")
    return inp.array.mean(axis=(0, 1, 2), dtype=np.float64).astype(np.float32)


def softmax(logits) -> Array:
    """Stable softmax (max-subtracted, computed in float64)."""
    v = np.asarray(logits, dtype=np.float64)
    if v.ndim != 1 or v.size < 1:
        raise ValueError("softmax expects a non-empty vector")
    if not np.all(np.isfinite(v)):
        raise ValueError("softmax input must be finite")
    e = np.exp(v - v.max())
    return e / e.sum()


def batchnorm_fold(
    conv: ConvParams,
    gamma: Array,
    beta: Array,
    mean: Array,
    variance: Array,
    eps: float = 1e-3,
    depthwise: bool = False,
) -> ConvParams:
    """Fold a per-channel batch norm into the preceding convolution.

    Returns params such that conv(x, folded) == bn(conv(x, original)).
    """
    k = conv.kernel.array
    n = k.shape[2] if depthwise else k.shape[3]
    gamma, beta, mean, variance = (
        np.asarray(a, dtype=np.float64).reshape(-1) for a in (gamma, beta, mean, variance)
    )
    for name, vec in (("gamma", gamma), ("beta", beta), ("mean", mean), ("variance", variance)):
        if vec.shape != (n,):
            raise ValueError(f"batchnorm {name} has length {vec.shape[0]}, expected {n}")
    if np.any(variance < 0):
        raise ValueError("batchnorm variance must be non-negative")
    inv = gamma / np.sqrt(variance + eps)
    if depthwise:
        folded_kernel = (k * inv[None, None, :, None].astype(np.float32)).astype(np.float32)
    else:
        folded_kernel = (k * inv[None, None, None, :].astype(np.float32)).astype(np.float32)
    folded_bias = ((conv.bias - mean) * inv + beta).astype(np.float32)
    return ConvParams(
        kernel=Tensor(folded_kernel), bias=folded_bias, stride=conv.stride, padding=conv.padding
    )
