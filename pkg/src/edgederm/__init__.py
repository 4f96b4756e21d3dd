"""edgederm: offline skin-lesion classification for constrained devices."""

from .backbone import (
    ArchitectureConfig,
    LayerSpec,
    build_default_config,
    build_tiny_config,
    forward,
    init_weights,
    parameter_count,
)
from .bundle import (
    DEVICE_BUDGETS,
    DeviceBudget,
    ModelBundle,
    Preprocessing,
    QuantParams,
    dequantized_forward_check,
    load,
    new_float_bundle,
    prune_magnitude,
    quantize_int8,
    save,
    size_report,
)
from .dataset import (
    CLASS_NAMES,
    LabeledSample,
    SplitSpec,
    load_manifest,
    preprocess,
    stratified_split,
    synth_dataset,
)
from .evaluation import EvalReport, evaluate, macro_metrics, render_comparison, render_curves
from .service import (
    DISCLAIMER,
    BenchmarkReport,
    ClassificationResult,
    benchmark,
    classify,
    classify_stream,
    serve,
)
from .sources import FrameSource
from .tensor import ConvParams, Tensor, conv2d, dense, depthwise_conv2d, relu6, softmax
from .training import (
    EpochRecord,
    SoftmaxHead,
    TrainConfig,
    compute_embeddings,
    cross_entropy,
    predict,
    train_head,
)

__version__ = "0.1.0"
