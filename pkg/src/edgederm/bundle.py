"""The offloadable model artifact and its compact binary format.

A bundle carries the backbone architecture and weights, the 7-way classifier
head, class labels, and preprocessing metadata, in float32 or int8 precision.
The on-disk `.edrm` layout is little-endian with a magic prefix, versioned
header, length-prefixed strings, 4-byte-aligned tensor payloads, and a
trailing CRC32; see docs/format.md for the byte-level description.
"""

from __future__ import annotations

import math
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .backbone import (
    KIND_CONV,
    KIND_GLOBAL_POOL,
    KIND_INVERTED_RESIDUAL,
    ArchitectureConfig,
    ConvWeights,
    LayerSpec,
    parameter_count,
    peak_activation_bytes,
    plan_conv_ops,
)

Array = np.ndarray

MAGIC = b"EDRM"
FORMAT_VERSION = 1

PRECISION_FLOAT32 = "float32"
PRECISION_INT8 = "int8"

_KIND_CODES = {KIND_CONV: 0, KIND_INVERTED_RESIDUAL: 1, KIND_GLOBAL_POOL: 2}
_KIND_NAMES = {v: k for k, v in _KIND_CODES.items()}
_DTYPE_CODES = {"float32": 0, "int8": 1}


class BundleError(Exception):
    """Base class for .edrm read/write failures."""


class MagicError(BundleError):
    pass


class VersionError(BundleError):
    pass


class ChecksumError(BundleError):
    pass


class TruncatedError(BundleError):
    pass


class LayoutError(BundleError):
    """Structurally valid file whose contents are inconsistent."""


@dataclass(frozen=True)
class QuantParams:
    scale: float
    zero_point: int

    def __post_init__(self) -> None:
        if not self.scale > 0:
            raise ValueError(f"quantization scale must be positive, got {self.scale}")
        if not -128 <= self.zero_point <= 127:
            raise ValueError(f"zero point {self.zero_point} outside [-128, 127]")


@dataclass
class WeightTensor:
    """Named weight array; quant is present exactly when values are int8."""

    name: str
    values: Array
    quant: QuantParams | None = None


@dataclass(frozen=True)
class Preprocessing:
    """How the device must prepare camera pixels before inference."""

    resolution: int
    mean: tuple[float, float, float] = (127.5, 127.5, 127.5)
    scale: tuple[float, float, float] = (127.5, 127.5, 127.5)


@dataclass(frozen=True)
class DeviceBudget:
    name: str
    memory_bytes: int
    clock_hz: float

    def __post_init__(self) -> None:
        if self.memory_bytes <= 0 or self.clock_hz <= 0:
            raise ValueError("device budget values must be positive")


GIB = 2**30
MIB = 2**20

# Catalog of easily available constrained devices (memory capacity, clock).
DEVICE_BUDGETS = (
    DeviceBudget("Raspberry Pi 2 Model B", 1 * GIB, 900e6),
    DeviceBudget("Raspberry Pi 3 Model B", 1 * GIB, 1.2e9),
    DeviceBudget("Raspberry Pi 4 Model B", 8 * GIB, 2.5e9),
    DeviceBudget("Xilinx PYNQ-Z1", 650 * MIB, 525e6),
    DeviceBudget("UDOO BOLT V3", 32 * GIB, 2.3e9),
    DeviceBudget("Orange Pi 5", 8 * GIB, 2.4e9),
    DeviceBudget("Nvidia Jetson Nano", 4 * GIB, 1.43e9),
)


@dataclass
class ModelBundle:
    config: ArchitectureConfig
    labels: tuple[str, ...]
    preprocessing: Preprocessing
    tensors: list[WeightTensor]
    precision: str = PRECISION_FLOAT32
    version: int = FORMAT_VERSION

    def __post_init__(self) -> None:
        self.labels = tuple(self.labels)
        validate_bundle(self)

    def checksum(self) -> str:
        """CRC32 of the serialized bundle, as 8 hex digits."""
        return f"{zlib.crc32(to_bytes(self)) & 0xFFFFFFFF:08x}"

    def tensor(self, name: str) -> WeightTensor:
        for t in self.tensors:
            if t.name == name:
                return t
        raise KeyError(name)

    def backbone_tensors(self) -> list[WeightTensor]:
        return [t for t in self.tensors if not t.name.startswith("classifier.")]

    def backbone_weights(self) -> list[ConvWeights]:
        """Float32 conv weights in plan order, dequantizing when int8."""
        out = []
        pairs = self.backbone_tensors()
        for kernel_t, bias_t in zip(pairs[0::2], pairs[1::2]):
            out.append(
                ConvWeights(
                    kernel_t.name.removesuffix(".kernel"),
                    _as_float(kernel_t),
                    _as_float(bias_t),
                )
            )
        return out

    def head_arrays(self) -> tuple[Array, Array]:
        """(weights E x n_labels, bias n_labels) as float32."""
        return _as_float(self.tensor("classifier.weight")), _as_float(self.tensor("classifier.bias"))

    def sparsity_report(self) -> "SparsityReport":
        return sparsity_report(self)


def _as_float(t: WeightTensor) -> Array:
    if t.quant is None:
        return t.values
    return dequantize_tensor(t.values, t.quant)


def _expected_tensor_shapes(config: ArchitectureConfig, n_labels: int) -> list[tuple[str, tuple[int, ...]]]:
    shapes = []
    for op in plan_conv_ops(config):
        kin = op.in_channels
        kshape = (op.kernel_size, op.kernel_size, kin, 1 if op.depthwise else op.out_channels)
        shapes.append((f"{op.name}.kernel", kshape))
        shapes.append((f"{op.name}.bias", (op.out_channels,)))
    shapes.append(("classifier.weight", (config.embedding_dim, n_labels)))
    shapes.append(("classifier.bias", (n_labels,)))
    return shapes


def validate_bundle(bundle: ModelBundle) -> None:
    if len(bundle.labels) != 7:
        raise LayoutError(f"expected 7 labels, got {len(bundle.labels)}")
    if len(set(bundle.labels)) != len(bundle.labels):
        raise LayoutError("labels must be unique")
    if bundle.precision not in (PRECISION_FLOAT32, PRECISION_INT8):
        raise LayoutError(f"unknown precision {bundle.precision!r}")
    if bundle.preprocessing.resolution != bundle.config.resolution:
        raise LayoutError("preprocessing resolution differs from the architecture's")
    expected = _expected_tensor_shapes(bundle.config, len(bundle.labels))
    if len(bundle.tensors) != len(expected):
        raise LayoutError(
            f"bundle has {len(bundle.tensors)} tensors, architecture needs {len(expected)}"
        )
    want_dtype = np.float32 if bundle.precision == PRECISION_FLOAT32 else np.int8
    for t, (name, shape) in zip(bundle.tensors, expected):
        if t.name != name:
            raise LayoutError(f"tensor {t.name!r} out of order, expected {name!r}")
        if tuple(t.values.shape) != shape:
            raise LayoutError(f"tensor {name}: shape {t.values.shape} != expected {shape}")
        if t.values.dtype != want_dtype:
            raise LayoutError(f"tensor {name}: dtype {t.values.dtype} != {want_dtype}")
        if (t.quant is None) == (bundle.precision == PRECISION_INT8):
            raise LayoutError(f"tensor {name}: quant params inconsistent with precision")


def new_float_bundle(
    config: ArchitectureConfig,
    backbone_weights: list[ConvWeights],
    labels: tuple[str, ...],
    head_weights: Array | None = None,
    head_bias: Array | None = None,
    preprocessing: Preprocessing | None = None,
) -> ModelBundle:
    """Assemble a float32 bundle; the head defaults to zeros."""
    n = len(labels)
    if head_weights is None:
        head_weights = np.zeros((config.embedding_dim, n), dtype=np.float32)
    if head_bias is None:
        head_bias = np.zeros(n, dtype=np.float32)
    tensors = []
    for w in backbone_weights:
        tensors.append(WeightTensor(f"{w.name}.kernel", np.ascontiguousarray(w.kernel, np.float32)))
        tensors.append(WeightTensor(f"{w.name}.bias", np.ascontiguousarray(w.bias, np.float32)))
    tensors.append(WeightTensor("classifier.weight", np.ascontiguousarray(head_weights, np.float32)))
    tensors.append(WeightTensor("classifier.bias", np.ascontiguousarray(head_bias, np.float32)))
    return ModelBundle(
        config=config,
        labels=tuple(labels),
        preprocessing=preprocessing or Preprocessing(resolution=config.resolution),
        tensors=tensors,
    )


def with_head(bundle: ModelBundle, head_weights: Array, head_bias: Array) -> ModelBundle:
    """Copy of the bundle with the classifier replaced (float32 bundles only)."""
    if bundle.precision != PRECISION_FLOAT32:
        raise ValueError("can only swap the head of a float32 bundle")
    tensors = [WeightTensor(t.name, t.values.copy(), t.quant) for t in bundle.tensors[:-2]]
    tensors.append(WeightTensor("classifier.weight", np.ascontiguousarray(head_weights, np.float32)))
    tensors.append(WeightTensor("classifier.bias", np.ascontiguousarray(head_bias, np.float32)))
    return ModelBundle(
        config=bundle.config,
        labels=bundle.labels,
        preprocessing=bundle.preprocessing,
        tensors=tensors,
        precision=bundle.precision,
    )


# --- quantization ---------------------------------------------------------


def quantize_tensor(values: Array) -> tuple[Array, QuantParams]:
    """Per-tensor affine int8 quantization: q = clamp(round(x/scale) + zp).

    scale = (max - min)/255 over the value range extended to include zero,
    with a symmetric shortcut (scale = max|x|/127, zp = 0) when min == -max
    and a constant-tensor fallback (scale = 1, zp = round(-value), clamped).
    """
    x = np.asarray(values, dtype=np.float32)
    mn = float(x.min())
    mx = float(x.max())
    if mx == mn:
        params = QuantParams(1.0, int(np.clip(round(-mn), -128, 127)))
    elif mn == -mx:
        params = QuantParams(mx / 127.0, 0)
    else:
        lo = min(mn, 0.0)
        hi = max(mx, 0.0)
        scale = (hi - lo) / 255.0
        params = QuantParams(scale, int(-128 - round(lo / scale)))
    q = np.clip(np.round(x.astype(np.float64) / params.scale) + params.zero_point, -128, 127)
    return q.astype(np.int8), params


def dequantize_tensor(q: Array, params: QuantParams) -> Array:
    return ((q.astype(np.int32) - params.zero_point) * np.float64(params.scale)).astype(np.float32)


def quantize_int8(bundle: ModelBundle) -> ModelBundle:
    """Quantize every weight tensor to int8; labels and metadata unchanged."""
    if bundle.precision != PRECISION_FLOAT32:
        raise ValueError("bundle is already quantized")
    tensors = []
    for t in bundle.tensors:
        q, params = quantize_tensor(t.values)
        tensors.append(WeightTensor(t.name, q, params))
    return ModelBundle(
        config=bundle.config,
        labels=bundle.labels,
        preprocessing=bundle.preprocessing,
        tensors=tensors,
        precision=PRECISION_INT8,
    )


def dequantize_bundle(bundle: ModelBundle) -> ModelBundle:
    """Float32 bundle whose values are the dequantized int8 ones."""
    if bundle.precision != PRECISION_INT8:
        raise ValueError("bundle is not quantized")
    tensors = [WeightTensor(t.name, dequantize_tensor(t.values, t.quant)) for t in bundle.tensors]
    return ModelBundle(
        config=bundle.config,
        labels=bundle.labels,
        preprocessing=bundle.preprocessing,
        tensors=tensors,
        precision=PRECISION_FLOAT32,
    )


@dataclass(frozen=True)
class AgreementStats:
    top1_agreement: float
    max_logit_deviation: float
    n_images: int


def dequantized_forward_check(
    bundle_a: ModelBundle, bundle_b: ModelBundle, images
) -> AgreementStats:
    """Compare end-to-end class decisions of two bundles on the same images.

    Int8 bundles run in dequantize-then-float mode. Returns the fraction of
    images whose top-1 class matches and the largest absolute logit gap.
    """
    from .tensor import dense
    from .backbone import forward

    if bundle_a.config != bundle_b.config:
        raise ValueError("bundles have different architectures")
    runs = []
    for b in (bundle_a, bundle_b):
        weights = b.backbone_weights()
        hw, hb = b.head_arrays()
        runs.append((weights, hw, hb))
    matches = 0
    max_dev = 0.0
    count = 0
    for image in images:
        logits = []
        for weights, hw, hb in runs:
            emb = forward(bundle_a.config, weights, image)
            logits.append(dense(emb, hw, hb))
        matches += int(np.argmax(logits[0]) == np.argmax(logits[1]))
        max_dev = max(max_dev, float(np.max(np.abs(logits[0] - logits[1]))))
        count += 1
    if count == 0:
        raise ValueError("no images given")
    return AgreementStats(matches / count, max_dev, count)


# --- pruning --------------------------------------------------------------


@dataclass(frozen=True)
class SparsityReport:
    per_tensor: tuple[tuple[str, int, int], ...]  # (name, zero count, size)
    overall: float

    def __str__(self) -> str:
        lines = [f"{name}: {zeros}/{size} zero" for name, zeros, size in self.per_tensor]
        lines.append(f"overall backbone kernel sparsity: {self.overall:.4f}")
        return "\n".join(lines)


def _prunable(bundle: ModelBundle) -> list[WeightTensor]:
    # Backbone conv kernels only; biases and the classifier head stay dense.
    return [t for t in bundle.backbone_tensors() if t.name.endswith(".kernel")]


def sparsity_report(bundle: ModelBundle) -> SparsityReport:
    rows = []
    zeros = total = 0
    for t in _prunable(bundle):
        z = int(np.count_nonzero(t.values == 0))
        rows.append((t.name, z, t.values.size))
        zeros += z
        total += t.values.size
    return SparsityReport(tuple(rows), zeros / total if total else 0.0)


def prune_magnitude(bundle: ModelBundle, fraction: float) -> ModelBundle:
    """Zero the globally smallest-magnitude backbone kernel weights.

    Exactly round(fraction * N) weights are zeroed; ties go to the earlier
    layer, then the lower flat index.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"prune fraction must be in [0, 1], got {fraction}")
    if bundle.precision != PRECISION_FLOAT32:
        raise ValueError("pruning requires a float32 bundle")
    tensors = [WeightTensor(t.name, t.values.copy(), t.quant) for t in bundle.tensors]
    pruned = ModelBundle(
        config=bundle.config,
        labels=bundle.labels,
        preprocessing=bundle.preprocessing,
        tensors=tensors,
        precision=bundle.precision,
    )
    kernels = _prunable(pruned)
    mags = np.concatenate([np.abs(t.values.reshape(-1)) for t in kernels])
    layer_idx = np.concatenate(
        [np.full(t.values.size, i, dtype=np.int64) for i, t in enumerate(kernels)]
    )
    flat_idx = np.concatenate([np.arange(t.values.size, dtype=np.int64) for t in kernels])
    k = int(math.floor(fraction * mags.size + 0.5))
    if k == 0:
        return pruned
    order = np.lexsort((flat_idx, layer_idx, mags))
    chosen = order[:k]
    for i, t in enumerate(kernels):
        local = flat_idx[chosen[layer_idx[chosen] == i]]
        if local.size:
            flat = t.values.reshape(-1)
            flat[local] = 0.0
    return pruned


# --- size reporting -------------------------------------------------------


@dataclass(frozen=True)
class DeviceVerdict:
    budget: DeviceBudget
    fits: bool


@dataclass(frozen=True)
class SizeReport:
    serialized_bytes: int
    param_count: int
    peak_activation_bytes: int
    verdicts: tuple[DeviceVerdict, ...]

    @property
    def required_bytes(self) -> int:
        return self.serialized_bytes + self.peak_activation_bytes


def size_report(bundle: ModelBundle, budgets=DEVICE_BUDGETS) -> SizeReport:
    """Serialized size plus activation headroom, checked against each device."""
    size = len(to_bytes(bundle))
    params = parameter_count(bundle.config) + sum(
        t.values.size for t in bundle.tensors if t.name.startswith("classifier.")
    )
    act = peak_activation_bytes(bundle.config)
    verdicts = tuple(DeviceVerdict(b, size + act <= b.memory_bytes) for b in budgets)
    return SizeReport(size, params, act, verdicts)


def render_size_report(report: SizeReport) -> str:
    lines = [
        f"serialized size:   {report.serialized_bytes} bytes",
        f"parameters:        {report.param_count}",
        f"peak activations:  {report.peak_activation_bytes} bytes",
        "",
        "device fit (model + activations vs memory):",
    ]
    for v in report.verdicts:
        verdict = "fits" if v.fits else "does NOT fit"
        mem = v.budget.memory_bytes / GIB
        clock = v.budget.clock_hz / 1e9
        lines.append(f"  {v.budget.name:<24} {mem:7.2f} GiB @ {clock:.2f} GHz  ->  {verdict}")
    return "\n".join(lines)


# --- serialization --------------------------------------------------------


class _Writer:
    def __init__(self) -> None:
        self.buf = bytearray()

    def pack(self, fmt: str, *vals) -> None:
        self.buf += struct.pack("<" + fmt, *vals)

    def string(self, s: str) -> None:
        raw = s.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise LayoutError("string too long to serialize")
        self.pack("H", len(raw))
        self.buf += raw

    def align(self, n: int = 4) -> None:
        self.buf += b"\x00" * (-len(self.buf) % n)


def to_bytes(bundle: ModelBundle) -> bytes:
    """Serialize to the .edrm wire format."""
    w = _Writer()
    w.buf += MAGIC
    w.pack("H", bundle.version)
    w.pack("BB", 0 if bundle.precision == PRECISION_FLOAT32 else 1, 0)
    w.pack("I", bundle.config.resolution)
    w.pack("d", bundle.config.alpha)
    w.pack("I", bundle.config.embedding_dim)
    w.pack("H", len(bundle.config.layers))
    for spec in bundle.config.layers:
        w.pack("B", _KIND_CODES[spec.kind])
        if spec.kind == KIND_CONV:
            w.pack("HBB", spec.out_channels, spec.kernel_size, spec.stride)
        elif spec.kind == KIND_INVERTED_RESIDUAL:
            w.pack("HBBB", spec.out_channels, spec.expansion, spec.stride, int(spec.residual))
    w.pack("H", len(bundle.labels))
    for label in bundle.labels:
        w.string(label)
    w.pack("I", bundle.preprocessing.resolution)
    w.pack("3d", *bundle.preprocessing.mean)
    w.pack("3d", *bundle.preprocessing.scale)
    w.pack("I", len(bundle.tensors))
    for t in bundle.tensors:
        w.string(t.name)
        w.pack("B", _DTYPE_CODES[str(t.values.dtype)])
        w.pack("B", t.values.ndim)
        w.pack(f"{t.values.ndim}I", *t.values.shape)
        if t.quant is not None:
            w.pack("di", t.quant.scale, t.quant.zero_point)
        w.align()
        w.buf += np.ascontiguousarray(t.values).tobytes()
        w.align()
    crc = zlib.crc32(bytes(w.buf[6:])) & 0xFFFFFFFF
    w.pack("I", crc)
    return bytes(w.buf)


class _Reader:
    def __init__(self, data: bytes, end: int) -> None:
        self.data = data
        self.pos = 0
        self.end = end

    def take(self, n: int) -> bytes:
        if self.pos + n > self.end:
            raise TruncatedError(f"file ends inside a field at offset {self.pos}")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        fmt = "<" + fmt
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def string(self) -> str:
        (n,) = self.unpack("H")
        raw = self.take(n)
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise LayoutError(f"invalid utf-8 in string at offset {self.pos - n}: {exc}") from exc

    def align(self, n: int = 4) -> None:
        self.take(-self.pos % n)


def from_bytes(data: bytes) -> ModelBundle:
    """Parse a serialized bundle, verifying magic, version, and checksum."""
    if len(data) < 4:
        raise TruncatedError(f"file is only {len(data)} bytes")
    if data[:4] != MAGIC:
        raise MagicError(f"bad magic bytes {data[:4]!r}, expected {MAGIC!r}")
    if len(data) < 10:
        raise TruncatedError(f"file is only {len(data)} bytes")
    (version,) = struct.unpack("<H", data[4:6])
    if version != FORMAT_VERSION:
        raise VersionError(f"format version {version} unsupported (expected {FORMAT_VERSION})")

    r = _Reader(data, end=len(data) - 4)
    r.pos = 6
    precision_code, _ = r.unpack("BB")
    if precision_code not in (0, 1):
        raise LayoutError(f"unknown precision code {precision_code}")
    precision = PRECISION_FLOAT32 if precision_code == 0 else PRECISION_INT8
    resolution, = r.unpack("I")
    alpha, = r.unpack("d")
    embedding_dim, = r.unpack("I")
    n_layers, = r.unpack("H")
    layers = []
    for _ in range(n_layers):
        (code,) = r.unpack("B")
        if code not in _KIND_NAMES:
            raise LayoutError(f"unknown layer kind code {code}")
        kind = _KIND_NAMES[code]
        if kind == KIND_CONV:
            out_ch, ksize, stride = r.unpack("HBB")
            layers.append(LayerSpec(kind, out_channels=out_ch, kernel_size=ksize, stride=stride))
        elif kind == KIND_INVERTED_RESIDUAL:
            out_ch, expansion, stride, residual = r.unpack("HBBB")
            layers.append(
                LayerSpec(
                    kind,
                    out_channels=out_ch,
                    kernel_size=3,
                    stride=stride,
                    expansion=expansion,
                    residual=bool(residual),
                )
            )
        else:
            layers.append(LayerSpec(kind))
    (n_labels,) = r.unpack("H")
    labels = tuple(r.string() for _ in range(n_labels))
    (pre_resolution,) = r.unpack("I")
    mean = r.unpack("3d")
    scale = r.unpack("3d")
    (n_tensors,) = r.unpack("I")
    raw_tensors = []
    for _ in range(n_tensors):
        name = r.string()
        (dtype_code,) = r.unpack("B")
        if dtype_code not in (0, 1):
            raise LayoutError(f"tensor {name}: unknown dtype code {dtype_code}")
        (ndim,) = r.unpack("B")
        if ndim < 1 or ndim > 8:
            raise LayoutError(f"tensor {name}: implausible rank {ndim}")
        shape = r.unpack(f"{ndim}I")
        quant = None
        if dtype_code == 1:
            qscale, zp = r.unpack("di")
            try:
                quant = QuantParams(qscale, zp)
            except ValueError as exc:
                raise LayoutError(f"tensor {name}: {exc}") from exc
        r.align()
        dtype = np.float32 if dtype_code == 0 else np.int8
        count = 1
        for d in shape:  # exact python-int product; corrupt dims must not overflow
            count *= d
        payload = r.take(count * dtype().itemsize)
        r.align()
        values = np.frombuffer(payload, dtype=dtype).reshape(shape).copy()
        raw_tensors.append(WeightTensor(name, values, quant))
    if r.pos != r.end:
        raise LayoutError(f"{r.end - r.pos} unexpected trailing bytes before checksum")

    stored_crc = struct.unpack("<I", data[-4:])[0]
    actual_crc = zlib.crc32(data[6:-4]) & 0xFFFFFFFF
    if stored_crc != actual_crc:
        raise ChecksumError(f"checksum mismatch: stored {stored_crc:08x}, computed {actual_crc:08x}")

    try:
        config = ArchitectureConfig(
            resolution=resolution, alpha=alpha, layers=tuple(layers), embedding_dim=embedding_dim
        )
        return ModelBundle(
            config=config,
            labels=labels,
            preprocessing=Preprocessing(pre_resolution, mean, scale),
            tensors=raw_tensors,
            precision=precision,
        )
    except (ValueError, LayoutError) as exc:
        raise LayoutError(str(exc)) from exc


def save(bundle: ModelBundle, path) -> None:
    with open(path, "wb") as fh:
        fh.write(to_bytes(bundle))


def load(path) -> ModelBundle:
    with open(path, "rb") as fh:
        return from_bytes(fh.read())
