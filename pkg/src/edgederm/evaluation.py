"""Model evaluation: confusion matrix, macro metrics, tables, and curves.

Precision/recall/F1 are macro-averaged by default (unweighted mean over the
seven classes) with zero-denominator ratios defined as 0 so reports stay
total; a frequency-weighted mode is available behind a flag. Rendered
tables show integer percentages rounded half up.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .backbone import forward
from .bundle import ModelBundle, PRECISION_INT8, dequantize_bundle
from .dataset import CLASS_NAMES, LabeledSample, preprocess
from .training import EpochRecord, SoftmaxHead, cross_entropy, epoch_records_to_csv, predict

Array = np.ndarray

N_CLASSES = len(CLASS_NAMES)

# Published accuracy anchors used for the model comparison table.
TABLE_REFERENCE_ROWS = (
    ("Benyahia et al.", 99.0),
    ("Qin et al.", 95.2),
    ("Ramlakhan & Shang", 66.7),
    ("Proposed Model", 78.0),
)


@dataclass(frozen=True)
class EvalReport:
    accuracy: float
    mean_loss: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    per_class_precision: tuple[float, ...]
    per_class_recall: tuple[float, ...]
    per_class_f1: tuple[float, ...]
    confusion: Array  # (7, 7) counts, rows = true class
    n: int


def confusion_matrix(y_true, y_pred, n_classes: int = N_CLASSES) -> Array:
    """Counts with entry (i, j) = samples of true class i predicted as j."""
    t = np.asarray(y_true, dtype=np.int64)
    p = np.asarray(y_pred, dtype=np.int64)
    if t.shape != p.shape:
        raise ValueError("prediction and truth lengths differ")
    if t.size and (t.min() < 0 or t.max() >= n_classes or p.min() < 0 or p.max() >= n_classes):
        raise ValueError(f"class ids outside [0, {n_classes})")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (t, p), 1)
    return cm


def per_class_metrics(cm: Array) -> tuple[Array, Array, Array]:
    """(precision, recall, f1) per class; zero denominators give 0."""
    tp = np.diag(cm).astype(np.float64)
    predicted = cm.sum(axis=0).astype(np.float64)
    actual = cm.sum(axis=1).astype(np.float64)
    precision = np.divide(tp, predicted, out=np.zeros_like(tp), where=predicted > 0)
    recall = np.divide(tp, actual, out=np.zeros_like(tp), where=actual > 0)
    pr = precision + recall
    f1 = np.divide(2 * precision * recall, pr, out=np.zeros_like(tp), where=pr > 0)
    return precision, recall, f1


def macro_metrics(cm: Array, average: str = "macro") -> tuple[float, float, float]:
    """Averaged (precision, recall, f1); "macro" is unweighted, "weighted" by support."""
    precision, recall, f1 = per_class_metrics(cm)
    if average == "macro":
        return float(precision.mean()), float(recall.mean()), float(f1.mean())
    if average == "weighted":
        support = cm.sum(axis=1).astype(np.float64)
        total = support.sum()
        if total == 0:
            return 0.0, 0.0, 0.0
        w = support / total
        return float((precision * w).sum()), float((recall * w).sum()), float((f1 * w).sum())
    raise ValueError(f"unknown averaging mode {average!r}")


def report_from_predictions(y_true, y_pred, mean_loss: float = float("nan")) -> EvalReport:
    cm = confusion_matrix(y_true, y_pred)
    n = int(cm.sum())
    if n == 0:
        raise ValueError("cannot evaluate an empty sample set")
    precision, recall, f1 = per_class_metrics(cm)
    macro_p, macro_r, macro_f1 = macro_metrics(cm)
    return EvalReport(
        accuracy=float(np.trace(cm)) / n,
        mean_loss=mean_loss,
        macro_precision=macro_p,
        macro_recall=macro_r,
        macro_f1=macro_f1,
        per_class_precision=tuple(precision),
        per_class_recall=tuple(recall),
        per_class_f1=tuple(f1),
        confusion=cm,
        n=n,
    )


def evaluate(bundle: ModelBundle, head: SoftmaxHead | None, samples: list[LabeledSample]) -> EvalReport:
    """Run the full pipeline over samples and compute the metric suite."""
    if not samples:
        raise ValueError("cannot evaluate an empty sample set")
    if bundle.precision == PRECISION_INT8:
        bundle = dequantize_bundle(bundle)
    if head is None:
        from .training import head_from_bundle

        head = head_from_bundle(bundle)
    weights = bundle.backbone_weights()
    y_true = []
    y_pred = []
    losses = []
    for s in samples:
        x = preprocess(s.load_pixels(), bundle.preprocessing)
        emb = forward(bundle.config, weights, x)
        probs = predict(head, emb)
        y_true.append(s.class_id)
        y_pred.append(int(np.argmax(probs)))
        losses.append(cross_entropy(probs, s.class_id))
    return report_from_predictions(y_true, y_pred, mean_loss=float(np.mean(losses)))


def percent_half_up(fraction: float) -> int:
    """0.785 -> 79; presentation rounding for tables."""
    return int(math.floor(fraction * 100 + 0.5))


def render_report(report: EvalReport, labels=CLASS_NAMES) -> str:
    lines = [
        f"samples:         {report.n}",
        f"accuracy:        {percent_half_up(report.accuracy)}%",
        f"mean loss:       {report.mean_loss:.4f}",
        f"macro precision: {percent_half_up(report.macro_precision)}%",
        f"macro recall:    {percent_half_up(report.macro_recall)}%",
        f"macro F1:        {percent_half_up(report.macro_f1)}%",
        "",
        f"{'class':<22} {'precision':>9} {'recall':>7} {'F1':>5}",
    ]
    for i, label in enumerate(labels):
        lines.append(
            f"{label:<22} {percent_half_up(report.per_class_precision[i]):>8}% "
            f"{percent_half_up(report.per_class_recall[i]):>6}% "
            f"{percent_half_up(report.per_class_f1[i]):>4}%"
        )
    return "\n".join(lines)


def report_to_kv(report: EvalReport) -> str:
    """Machine-readable key=value lines with full-precision floats."""
    lines = [
        f"n={report.n}",
        f"accuracy={report.accuracy!r}",
        f"mean_loss={report.mean_loss!r}",
        f"macro_precision={report.macro_precision!r}",
        f"macro_recall={report.macro_recall!r}",
        f"macro_f1={report.macro_f1!r}",
    ]
    for i in range(N_CLASSES):
        lines.append(f"precision_{i}={report.per_class_precision[i]!r}")
        lines.append(f"recall_{i}={report.per_class_recall[i]!r}")
        lines.append(f"f1_{i}={report.per_class_f1[i]!r}")
    for i in range(N_CLASSES):
        row = ",".join(str(int(v)) for v in report.confusion[i])
        lines.append(f"confusion_{i}={row}")
    return "\n".join(lines) + "\n"


def confusion_to_csv(cm: Array, labels=CLASS_NAMES) -> str:
    lines = ["true\\predicted," + ",".join(labels)]
    for i, label in enumerate(labels):
        lines.append(label + "," + ",".join(str(int(v)) for v in cm[i]))
    return "\n".join(lines) + "\n"


def render_comparison(rows) -> str:
    """Aligned accuracy table, sorted descending; equal scores keep input order."""
    ordered = sorted(rows, key=lambda r: -r[1])
    name_width = max(len("Model"), max((len(r[0]) for r in ordered), default=0))
    lines = [
        f"{'Model':<{name_width}}  Accuracy (%)",
        "-" * (name_width + 14),
    ]
    for name, acc in ordered:
        lines.append(f"{name:<{name_width}}  {acc:.1f}")
    return "\n".join(lines)


def render_curves(records: list[EpochRecord]) -> str:
    """Plain-text plot data (CSV) for the accuracy/loss-vs-epoch curves."""
    if not records:
        raise ValueError("need at least one epoch record")
    return epoch_records_to_csv(records)


def write_curve_artifacts(records: list[EpochRecord], out_dir, basename: str = "curves") -> tuple[Path, Path]:
    """Emit <basename>.csv and a rendered <basename>.png side by side."""
    from .figures import save_curve_figure

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / f"{basename}.csv"
    csv_path.write_text(render_curves(records))
    png_path = out_dir / f"{basename}.png"
    save_curve_figure(records, png_path)
    return csv_path, png_path


def write_report_artifacts(report: EvalReport, out_dir, labels=CLASS_NAMES) -> list[Path]:
    """Emit the human table, key=value dump, confusion CSV, and confusion figure."""
    from .figures import save_confusion_figure

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, text in (
        ("report.txt", render_report(report, labels) + "\n"),
        ("report.kv", report_to_kv(report)),
        ("confusion.csv", confusion_to_csv(report.confusion, labels)),
    ):
        p = out_dir / name
        p.write_text(text)
        paths.append(p)
    fig_path = out_dir / "confusion.png"
    save_confusion_figure(report.confusion, labels, fig_path)
    paths.append(fig_path)
    return paths
