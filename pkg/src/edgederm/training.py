"""Transfer learning for the classifier head.

The backbone stays frozen: images are mapped to embeddings once, then a
7-way softmax head is trained with plain minibatch SGD on cross-entropy.
The analytic gradient is softmax - onehot; shuffle and accumulation order
are pinned by the seed so runs are bitwise reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .backbone import forward
from .bundle import PRECISION_FLOAT32, ModelBundle
from .dataset import CLASS_NAMES, LabeledSample, preprocess, samples_digest
from .tensor import dense, softmax

Array = np.ndarray

LN_CLASSES = float(np.log(len(CLASS_NAMES)))


class TrainingError(Exception):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    learning_rate: float = 0.05
    batch_size: int = 32
    seed: int = 0
    l2: float = 0.0
    class_weighting: str = "none"  # or "inverse"

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not self.learning_rate >= 0:
            raise ValueError("learning rate must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if self.class_weighting not in ("none", "inverse"):
            raise ValueError(f"unknown class weighting {self.class_weighting!r}")


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float | None = None
    val_acc: float | None = None

    def __post_init__(self) -> None:
        for loss in (self.train_loss, self.val_loss):
            if loss is not None and loss < 0:
                raise ValueError("losses must be >= 0")
        for acc in (self.train_acc, self.val_acc):
            if acc is not None and not 0.0 <= acc <= 1.0:
                raise ValueError("accuracies must be in [0, 1]")


@dataclass
class SoftmaxHead:
    weights: Array  # (E, n_classes)
    bias: Array  # (n_classes,)

    @classmethod
    def zeros(cls, embedding_dim: int, n_classes: int = len(CLASS_NAMES)) -> "SoftmaxHead":
        return cls(
            np.zeros((embedding_dim, n_classes), dtype=np.float64),
            np.zeros(n_classes, dtype=np.float64),
        )


@dataclass
class EmbeddingSet:
    features: Array  # (N, E)
    labels: Array  # (N,) int


def head_from_bundle(bundle: ModelBundle) -> SoftmaxHead:
    w, b = bundle.head_arrays()
    return SoftmaxHead(w.astype(np.float64), b.astype(np.float64))


def compute_embeddings(
    bundle: ModelBundle, samples: list[LabeledSample], cache_dir=None
) -> EmbeddingSet:
    """Push every sample through the frozen backbone.

    With cache_dir set, results are stored in an .npz keyed by the bundle
    checksum and a digest of the samples, and reloaded on later calls.
    """
    if bundle.precision != PRECISION_FLOAT32:
        raise ValueError("embeddings require a float32 bundle")
    cache_path = None
    if cache_dir is not None:
        cache_path = Path(cache_dir) / f"emb_{bundle.checksum()}_{samples_digest(samples)}.npz"
        if cache_path.exists():
            data = np.load(cache_path)
            return EmbeddingSet(data["features"], data["labels"])
    weights = bundle.backbone_weights()
    features = np.empty((len(samples), bundle.config.embedding_dim), dtype=np.float32)
    labels = np.empty(len(samples), dtype=np.int64)
    for i, sample in enumerate(samples):
        x = preprocess(sample.load_pixels(), bundle.preprocessing)
        features[i] = forward(bundle.config, weights, x)
        labels[i] = sample.class_id
    if cache_path is not None:
        cache_path.parent.mkdir(parents=True, exist_ok=True)
        np.savez(cache_path, features=features, labels=labels)
    return EmbeddingSet(features, labels)


def cross_entropy(probabilities, true_class: int) -> float:
    """-ln p[true_class], with p clamped at 1e-12."""
    p = np.asarray(probabilities, dtype=np.float64)
    if not 0 <= true_class < p.shape[0]:
        raise ValueError(f"class {true_class} outside [0, {p.shape[0]})")
    return float(-np.log(max(p[true_class], 1e-12)))


def _batch_probs(x: Array, weights: Array, bias: Array) -> Array:
    logits = x @ weights + bias
    logits -= logits.max(axis=1, keepdims=True)
    e = np.exp(logits)
    return e / e.sum(axis=1, keepdims=True)


def head_objective_and_grads(
    weights: Array, bias: Array, x: Array, y: Array, l2: float = 0.0, sample_weight: Array | None = None
) -> tuple[float, Array, Array]:
    """Weighted mean cross-entropy (+ L2 on weights) and its analytic gradients."""
    n = x.shape[0]
    if sample_weight is None:
        sample_weight = np.ones(n, dtype=np.float64)
    probs = _batch_probs(x, weights, bias)
    picked = np.clip(probs[np.arange(n), y], 1e-12, None)
    loss = float(np.mean(sample_weight * -np.log(picked)))
    delta = probs.copy()
    delta[np.arange(n), y] -= 1.0
    delta *= sample_weight[:, None] / n
    grad_w = x.T @ delta + l2 * weights
    grad_b = delta.sum(axis=0)
    if l2:
        loss += 0.5 * l2 * float(np.sum(weights * weights))
    return loss, grad_w, grad_b


def dataset_loss_accuracy(head: SoftmaxHead, data: EmbeddingSet) -> tuple[float, float]:
    """Plain mean cross-entropy and accuracy over a whole embedding set."""
    x = data.features.astype(np.float64)
    probs = _batch_probs(x, head.weights, head.bias)
    picked = np.clip(probs[np.arange(x.shape[0]), data.labels], 1e-12, None)
    loss = float(np.mean(-np.log(picked)))
    acc = float(np.mean(np.argmax(probs, axis=1) == data.labels))
    return loss, acc


def train_head(
    train: EmbeddingSet, config: TrainConfig, val: EmbeddingSet | None = None
) -> tuple[SoftmaxHead, list[EpochRecord]]:
    """Minibatch SGD on the softmax head.

    Returns the head and one record per epoch, preceded by an epoch-0
    baseline measured before any update (so the zero-init starting loss,
    ln 7 on balanced data, is visible in the emitted curves).
    """
    x = train.features.astype(np.float64)
    y = np.asarray(train.labels, dtype=np.int64)
    n, dim = x.shape
    if n < config.batch_size:
        raise TrainingError(f"need at least batch_size={config.batch_size} samples, got {n}")
    present = np.unique(y)
    if present.size < 2:
        raise TrainingError("training data covers a single class")

    sample_weight = None
    if config.class_weighting == "inverse":
        counts = np.bincount(y, minlength=len(CLASS_NAMES)).astype(np.float64)
        class_w = np.zeros(len(CLASS_NAMES))
        class_w[counts > 0] = 1.0 / counts[counts > 0]
        per_sample = class_w[y]
        sample_weight = per_sample * (n / per_sample.sum())

    head = SoftmaxHead.zeros(dim)
    rng = np.random.default_rng(config.seed)

    def record(epoch: int) -> EpochRecord:
        train_loss, train_acc = dataset_loss_accuracy(head, train)
        if val is not None:
            val_loss, val_acc = dataset_loss_accuracy(head, val)
            return EpochRecord(epoch, train_loss, train_acc, val_loss, val_acc)
        return EpochRecord(epoch, train_loss, train_acc)

    records = [record(0)]
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        for bi, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start : start + config.batch_size]
            sw = sample_weight[idx] if sample_weight is not None else None
            loss, grad_w, grad_b = head_objective_and_grads(
                head.weights, head.bias, x[idx], y[idx], config.l2, sw
            )
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {bi}")
            head.weights -= config.learning_rate * grad_w
            head.bias -= config.learning_rate * grad_b
        records.append(record(epoch))
    return head, records


def predict(head: SoftmaxHead, embedding) -> Array:
    """Class probabilities for one embedding: softmax(dense(embedding))."""
    emb = np.asarray(embedding, dtype=np.float64)
    if emb.ndim != 1 or emb.shape[0] != head.weights.shape[0]:
        raise ValueError(
            f"embedding length {emb.shape} does not match head input {head.weights.shape[0]}"
        )
    return softmax(dense(emb, head.weights, head.bias))


# --- epoch-record CSV (the data behind the accuracy/loss curves) ----------

EPOCH_CSV_HEADER = "epoch,train_loss,train_acc,val_loss,val_acc"


def _fmt(value: float | None) -> str:
    return "" if value is None else repr(float(value))


def epoch_records_to_csv(records: list[EpochRecord]) -> str:
    lines = [EPOCH_CSV_HEADER]
    for r in records:
        lines.append(
            f"{r.epoch},{_fmt(r.train_loss)},{_fmt(r.train_acc)},{_fmt(r.val_loss)},{_fmt(r.val_acc)}"
        )
    return "\n".join(lines) + "\n"


def epoch_records_from_csv(text: str) -> list[EpochRecord]:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != EPOCH_CSV_HEADER:
        raise ValueError("unrecognized epoch csv header")
    records = []
    for ln in lines[1:]:
        parts = ln.split(",")
        if len(parts) != 5:
            raise ValueError(f"bad epoch csv row: {ln!r}")
        opt = lambda s: None if s == "" else float(s)
        records.append(
            EpochRecord(int(parts[0]), float(parts[1]), float(parts[2]), opt(parts[3]), opt(parts[4]))
        )
    return records


def write_epoch_csv(records: list[EpochRecord], path) -> None:
    Path(path).write_text(epoch_records_to_csv(records))


def read_epoch_csv(path) -> list[EpochRecord]:
    return epoch_records_from_csv(Path(path).read_text())
