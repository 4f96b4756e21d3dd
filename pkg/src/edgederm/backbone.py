"""MobileNetV2-style feature extractor: layer table, weight init, forward pass.

The network is an inference-only graph of folded conv+bias ops with relu6
activations: a stem convolution, a stack of inverted-residual blocks
(pointwise expansion, depthwise 3x3, linear pointwise projection, skip
connection at stride 1 with matching channels), a final pointwise
convolution, and global average pooling down to the embedding vector.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tensor import ConvParams, Tensor, conv2d, depthwise_conv2d, global_avg_pool, relu6, same_padding

Array = np.ndarray

KIND_CONV = "conv"
KIND_INVERTED_RESIDUAL = "inverted_residual"
KIND_GLOBAL_POOL = "global_pool"


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    out_channels: int = 0
    kernel_size: int = 0
    stride: int = 1
    expansion: int = 1
    residual: bool = False


@dataclass(frozen=True)
class ArchitectureConfig:
    """Backbone description with channel counts already width-scaled."""

    resolution: int
    alpha: float
    layers: tuple[LayerSpec, ...]
    embedding_dim: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "layers", tuple(self.layers))
        validate_config(self)


def scale_channels(channels: int, alpha: float) -> int:
    """Width-scale a channel count: nearest multiple of 8 (half up), minimum 8."""
    return max(8, 8 * math.floor(channels * alpha / 8 + 0.5))


# Inverted-residual bottleneck table of the standard architecture:
# (expansion, channels, repeats, first stride). 17 blocks total.
_BOTTLENECKS = (
    (1, 16, 1, 1),
    (6, 24, 2, 2),
    (6, 32, 3, 2),
    (6, 64, 4, 2),
    (6, 96, 3, 1),
    (6, 160, 3, 2),
    (6, 320, 1, 1),
)
_STEM_CHANNELS = 32
_TOP_CHANNELS = 1280

# Reduced table for desk-scale tests: one block per stride pattern.
_TINY_BOTTLENECKS = (
    (1, 16, 1, 1),
    (6, 24, 1, 2),
    (6, 32, 1, 1),
)


def _build_config(alpha: float, resolution: int, bottlenecks) -> ArchitectureConfig:
    if alpha <= 0:
        raise ValueError(f"width multiplier must be positive, got {alpha}")
    if resolution % 32 != 0:
        raise ValueError(f"resolution must be divisible by 32, got {resolution}")
    layers = [
        LayerSpec(KIND_CONV, out_channels=scale_channels(_STEM_CHANNELS, alpha), kernel_size=3, stride=2)
    ]
    in_ch = layers[0].out_channels
    for t, c, n, s in bottlenecks:
        out = scale_channels(c, alpha)
        for i in range(n):
            stride = s if i == 0 else 1
            layers.append(
                LayerSpec(
                    KIND_INVERTED_RESIDUAL,
                    out_channels=out,
                    kernel_size=3,
                    stride=stride,
                    expansion=t,
                    residual=stride == 1 and in_ch == out,
                )
            )
            in_ch = out
    top = scale_channels(_TOP_CHANNELS, alpha)
    layers.append(LayerSpec(KIND_CONV, out_channels=top, kernel_size=1, stride=1))
    layers.append(LayerSpec(KIND_GLOBAL_POOL))
    return ArchitectureConfig(resolution=resolution, alpha=alpha, layers=tuple(layers), embedding_dim=top)


def build_default_config(alpha: float = 1.0, resolution: int = 224) -> ArchitectureConfig:
    """The standard 17-block inverted-residual table, width-scaled by alpha."""
    return _build_config(alpha, resolution, _BOTTLENECKS)


def build_tiny_config(alpha: float = 0.25, resolution: int = 32) -> ArchitectureConfig:
    """Three-block profile so full pipelines run in seconds."""
    return _build_config(alpha, resolution, _TINY_BOTTLENECKS)


def validate_config(config: ArchitectureConfig) -> None:
    if config.resolution < 1 or config.resolution % 32 != 0:
        raise ValueError(f"resolution must be a positive multiple of 32, got {config.resolution}")
    if config.alpha <= 0:
        raise ValueError("width multiplier must be positive")
    if not config.layers or config.layers[-1].kind != KIND_GLOBAL_POOL:
        raise ValueError("layer table must end with a global pool")
    in_ch = 3
    last_conv_out = None
    for spec in config.layers[:-1]:
        if spec.kind == KIND_GLOBAL_POOL:
            raise ValueError("global pool may only appear as the final layer")
        if spec.out_channels < 1 or spec.kernel_size < 1:
            raise ValueError(f"bad layer spec {spec}")
        if spec.kind == KIND_INVERTED_RESIDUAL:
            if spec.expansion < 1:
                raise ValueError(f"expansion must be >= 1, got {spec.expansion}")
            if spec.stride not in (1, 2):
                raise ValueError(f"inverted residual stride must be 1 or 2, got {spec.stride}")
            expected = spec.stride == 1 and in_ch == spec.out_channels
            if spec.residual != expected:
                raise ValueError(
                    f"residual flag {spec.residual} inconsistent with stride {spec.stride}, "
                    f"{in_ch}->{spec.out_channels} channels"
                )
        in_ch = spec.out_channels
        last_conv_out = spec.out_channels
    if last_conv_out != config.embedding_dim:
        raise ValueError(
            f"embedding dim {config.embedding_dim} != final conv channels {last_conv_out}"
        )


@dataclass(frozen=True)
class ConvOp:
    """One primitive convolution in the execution plan."""

    name: str
    depthwise: bool
    kernel_size: int
    stride: int
    in_channels: int
    out_channels: int
    relu6: bool


@dataclass(frozen=True)
class Stage:
    ops: tuple[ConvOp, ...]
    residual: bool = False


def plan_stages(config: ArchitectureConfig) -> tuple[Stage, ...]:
    """Expand the layer table into primitive conv ops grouped by skip connection."""
    stages = []
    in_ch = 3
    block = 0
    for idx, spec in enumerate(config.layers):
        if spec.kind == KIND_GLOBAL_POOL:
            continue
        if spec.kind == KIND_CONV:
            name = "stem" if idx == 0 else "top"
            stages.append(
                Stage(
                    ops=(
                        ConvOp(name, False, spec.kernel_size, spec.stride, in_ch, spec.out_channels, True),
                    )
                )
            )
        else:
            block += 1
            hidden = in_ch * spec.expansion
            ops = []
            if spec.expansion > 1:
                ops.append(ConvOp(f"ir{block}.expand", False, 1, 1, in_ch, hidden, True))
            ops.append(ConvOp(f"ir{block}.dw", True, spec.kernel_size, spec.stride, hidden, hidden, True))
            ops.append(ConvOp(f"ir{block}.project", False, 1, 1, hidden, spec.out_channels, False))
            stages.append(Stage(ops=tuple(ops), residual=spec.residual))
        in_ch = spec.out_channels
    return tuple(stages)


def plan_conv_ops(config: ArchitectureConfig) -> tuple[ConvOp, ...]:
    return tuple(op for stage in plan_stages(config) for op in stage.ops)


@dataclass
class ConvWeights:
    """Kernel and bias for one planned conv op."""

    name: str
    kernel: Array
    bias: Array


def _kernel_shape(op: ConvOp) -> tuple[int, int, int, int]:
    if op.depthwise:
        return (op.kernel_size, op.kernel_size, op.in_channels, 1)
    return (op.kernel_size, op.kernel_size, op.in_channels, op.out_channels)


def init_weights(config: ArchitectureConfig, seed: int) -> list[ConvWeights]:
    """He-style init: zero-mean normals with std sqrt(2/fan_in), zero biases."""
    rng = np.random.default_rng(seed)
    weights = []
    for op in plan_conv_ops(config):
        fan_in = op.kernel_size * op.kernel_size * (1 if op.depthwise else op.in_channels)
        std = math.sqrt(2.0 / fan_in)
        kernel = rng.normal(0.0, std, size=_kernel_shape(op)).astype(np.float32)
        bias = np.zeros(op.out_channels, dtype=np.float32)
        weights.append(ConvWeights(op.name, kernel, bias))
    return weights


def check_weights(config: ArchitectureConfig, weights: list[ConvWeights]) -> None:
    ops = plan_conv_ops(config)
    if len(weights) != len(ops):
        raise ValueError(f"weight set has {len(weights)} entries, plan needs {len(ops)}")
    for op, w in zip(ops, weights):
        if w.kernel.shape != _kernel_shape(op):
            raise ValueError(
                f"{op.name}: kernel shape {w.kernel.shape} != expected {_kernel_shape(op)}"
            )
        if w.bias.shape != (op.out_channels,):
            raise ValueError(f"{op.name}: bias length {w.bias.shape} != {op.out_channels}")


def forward(
    config: ArchitectureConfig,
    weights: list[ConvWeights],
    image: Tensor,
    trace: list | None = None,
) -> Array:
    """Map a preprocessed (1, r, r, 3) image to the embedding vector.

    When trace is a list, every intermediate activation tensor is appended
    to it (used by tests; has no effect on the result).
    """
    expected = (1, config.resolution, config.resolution, 3)
    if image.shape != expected:
        raise ValueError(f"input shape {image.shape} != expected {expected}")
    check_weights(config, weights)
    cursor = 0
    x = image
    for stage in plan_stages(config):
        block_in = x
        for op in stage.ops:
            w = weights[cursor]
            cursor += 1
            params = ConvParams(
                kernel=Tensor(w.kernel),
                bias=w.bias,
                stride=op.stride,
                padding=same_padding(x.shape[1], x.shape[2], op.kernel_size, op.kernel_size, op.stride),
            )
            x = depthwise_conv2d(x, params) if op.depthwise else conv2d(x, params)
            if op.relu6:
                x = relu6(x)
            if trace is not None:
                trace.append(x)
        if stage.residual:
            x = Tensor(x.array + block_in.array)
            if trace is not None:
                trace.append(x)
    return global_avg_pool(x)


def parameter_count(config: ArchitectureConfig) -> int:
    """Number of backbone weights (kernels plus biases) for the planned ops."""
    total = 0
    for op in plan_conv_ops(config):
        total += int(np.prod(_kernel_shape(op))) + op.out_channels
    return total


def activation_footprint(config: ArchitectureConfig) -> list[tuple[str, int, int]]:
    """Per planned op: (name, input bytes, output bytes) for float32 activations."""
    h = w = config.resolution
    c = 3
    rows = []
    for op in plan_conv_ops(config):
        in_bytes = 4 * h * w * c
        oh = -(-h // op.stride)
        ow = -(-w // op.stride)
        out_bytes = 4 * oh * ow * op.out_channels
        rows.append((op.name, in_bytes, out_bytes))
        h, w, c = oh, ow, op.out_channels
    return rows


def peak_activation_bytes(config: ArchitectureConfig) -> int:
    """Largest input+output activation pair across the planned ops."""
    return max(i + o for _, i, o in activation_footprint(config))


def output_spatial_size(config: ArchitectureConfig) -> int:
    size = config.resolution
    for op in plan_conv_ops(config):
        size = -(-size // op.stride)
    return size
