"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 data error, 3 model-format error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import backbone, bundle as bundle_mod, dataset, evaluation, service as service_mod, training
from .bundle import BundleError
from .dataset import DatasetError
from .sources import SourceError, parse_source

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_MODEL = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2; we reserve that
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _load_bundle(path: str) -> bundle_mod.ModelBundle:
    try:
        return bundle_mod.load(path)
    except OSError as exc:
        raise BundleError(f"cannot read model file {path!r}: {exc}") from exc


def _load_samples(data_dir: str) -> list[dataset.LabeledSample]:
    manifest, image_dir = dataset.find_manifest(data_dir)
    return dataset.load_manifest(manifest, image_dir)


def _build_config(args) -> backbone.ArchitectureConfig:
    if args.profile == "tiny":
        return backbone.build_tiny_config(alpha=args.alpha or 0.25, resolution=args.resolution or 32)
    return backbone.build_default_config(alpha=args.alpha or 1.0, resolution=args.resolution or 224)


def _cmd_train(args) -> int:
    samples = _load_samples(args.data)
    split = dataset.stratified_split(samples, dataset.SplitSpec(seed=args.seed))
    train_samples, val_samples, test_samples = split
    if args.from_bundle:
        base = _load_bundle(args.from_bundle)
    else:
        config = _build_config(args)
        weights = backbone.init_weights(config, seed=args.seed)
        base = bundle_mod.new_float_bundle(config, weights, dataset.CLASS_NAMES)
    print(f"computing embeddings for {len(train_samples)} train / {len(val_samples)} val samples")
    train_set = training.compute_embeddings(base, train_samples, cache_dir=args.cache_dir)
    val_set = (
        training.compute_embeddings(base, val_samples, cache_dir=args.cache_dir)
        if val_samples
        else None
    )
    config_t = training.TrainConfig(
        epochs=args.epochs,
        learning_rate=args.lr,
        batch_size=min(args.batch_size, len(train_samples)),
        seed=args.seed,
        l2=args.l2,
        class_weighting="inverse" if args.balance else "none",
    )
    head, records = training.train_head(train_set, config_t, val_set)
    trained = bundle_mod.with_head(
        base, head.weights.astype(np.float32), head.bias.astype(np.float32)
    )
    bundle_mod.save(trained, args.output)
    out_dir = Path(args.output).resolve().parent
    stem = Path(args.output).stem
    csv_path, png_path = evaluation.write_curve_artifacts(records, out_dir, basename=f"{stem}_curves")
    last = records[-1]
    print(f"saved model to {args.output} (checksum {trained.checksum()})")
    print(f"epoch curves: {csv_path} and {png_path}")
    print(f"final train acc {last.train_acc:.3f}, loss {last.train_loss:.4f}", end="")
    if last.val_acc is not None:
        print(f"; val acc {last.val_acc:.3f}, loss {last.val_loss:.4f}")
    else:
        print()
    if test_samples:
        report = evaluation.evaluate(trained, head, test_samples)
        print(f"held-out test accuracy {report.accuracy:.3f}, loss {report.mean_loss:.4f}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    mdl = _load_bundle(args.model)
    samples = _load_samples(args.data)
    report = evaluation.evaluate(mdl, None, samples)
    print(evaluation.render_report(report))
    print()
    rows = list(evaluation.TABLE_REFERENCE_ROWS)
    rows.append(("This run", report.accuracy * 100))
    print(evaluation.render_comparison(rows))
    if args.out_dir:
        paths = evaluation.write_report_artifacts(report, args.out_dir)
        print()
        for p in paths:
            print(f"wrote {p}")
    return EXIT_OK


def _cmd_quantize(args) -> int:
    mdl = _load_bundle(args.input)
    try:
        quantized = bundle_mod.quantize_int8(mdl)
    except ValueError as exc:
        raise BundleError(str(exc)) from exc
    bundle_mod.save(quantized, args.output)
    before = len(bundle_mod.to_bytes(mdl))
    after = len(bundle_mod.to_bytes(quantized))
    print(f"quantized {args.input} ({before} bytes) -> {args.output} ({after} bytes)")
    return EXIT_OK


def _cmd_prune(args) -> int:
    if not 0.0 <= args.fraction <= 1.0:
        print(f"edgederm prune: --fraction must be in [0, 1], got {args.fraction}", file=sys.stderr)
        return EXIT_USAGE
    mdl = _load_bundle(args.input)
    try:
        pruned = bundle_mod.prune_magnitude(mdl, args.fraction)
    except ValueError as exc:
        raise BundleError(str(exc)) from exc
    bundle_mod.save(pruned, args.output)
    print(f"pruned {args.input} -> {args.output}")
    print(pruned.sparsity_report())
    return EXIT_OK


def _cmd_classify(args) -> int:
    mdl = _load_bundle(args.model)
    runtime = service_mod.Runtime(mdl)
    for path in args.images:
        pixels = dataset.load_rgb_pixels(path)
        probs = runtime.probabilities(pixels)
        result = service_mod.ClassificationResult(
            top=service_mod.top_k(probs, runtime.labels, k=args.top),
            timestamp=0.0,
            model_checksum=runtime.checksum,
        )
        print(f"{path}:")
        print(
            service_mod.render_result(
                result,
                full=probs if args.verbose else None,
                labels=runtime.labels if args.verbose else None,
            )
        )
    return EXIT_OK


def _cmd_serve(args) -> int:
    mdl = _load_bundle(args.model)
    source = parse_source(args.source, interval=args.interval)
    svc = service_mod.serve(mdl, source=source, port=args.port, host=args.host)
    print(f"serving {args.model} at {svc.url} (source: {args.source}); Ctrl-C to stop", flush=True)
    print(service_mod.DISCLAIMER, flush=True)
    try:
        while not svc.wait(3600):
            pass
    except KeyboardInterrupt:
        print("shutting down")
    finally:
        svc.stop()
    return EXIT_OK


def _cmd_bench(args) -> int:
    mdl = _load_bundle(args.model)
    report = service_mod.benchmark(mdl, frames=args.frames)
    print(service_mod.render_benchmark(report))
    return EXIT_OK


def _cmd_synth(args) -> int:
    samples = dataset.synth_dataset(args.per_class, seed=args.seed, size=args.size)
    manifest = dataset.write_dataset(samples, args.out_dir)
    print(f"wrote {len(samples)} images and {manifest}")
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="edgederm", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a classifier head on a dataset directory")
    p.add_argument("data", help="dataset directory (manifest csv + images)")
    p.add_argument("-o", "--output", required=True, help="output .edrm path")
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--alpha", type=float, default=None, help="width multiplier")
    p.add_argument("--resolution", type=int, default=None)
    p.add_argument("--profile", choices=("full", "tiny"), default="full")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--l2", type=float, default=0.0)
    p.add_argument("--balance", action="store_true", help="inverse-frequency class weighting")
    p.add_argument("--cache-dir", default=None, help="embedding cache directory")
    p.add_argument(
        "--from-bundle",
        default=None,
        help="reuse the backbone of an existing .edrm (e.g. imported pretrained weights)",
    )
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a model on a dataset directory")
    p.add_argument("model")
    p.add_argument("data")
    p.add_argument("--out-dir", default=None, help="write report artifacts here")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("quantize", help="post-training int8 quantization")
    p.add_argument("input")
    p.add_argument("output")
    p.set_defaults(func=_cmd_quantize)

    p = sub.add_parser("prune", help="global magnitude pruning of backbone kernels")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--fraction", type=float, required=True)
    p.set_defaults(func=_cmd_prune)

    p = sub.add_parser("classify", help="classify image files")
    p.add_argument("model")
    p.add_argument("images", nargs="+")
    p.add_argument("--top", type=int, default=5)
    p.add_argument("--verbose", action="store_true", help="show the full distribution")
    p.set_defaults(func=_cmd_classify)

    p = sub.add_parser("serve", help="run the local classification service")
    p.add_argument("model")
    p.add_argument("--source", default="synthetic", help="cam0 | directory | file | synthetic[:n]")
    p.add_argument("--port", type=int, default=8077)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--interval", type=float, default=0.5, help="seconds between frames")
    p.set_defaults(func=_cmd_serve)

    p = sub.add_parser("bench", help="latency/memory benchmark against device budgets")
    p.add_argument("model")
    p.add_argument("--frames", type=int, default=100)
    p.set_defaults(func=_cmd_bench)

    p = sub.add_parser("synth", help="generate a synthetic dataset directory")
    p.add_argument("out_dir")
    p.add_argument("--per-class", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=48)
    p.set_defaults(func=_cmd_synth)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        return args.func(args)
    except BundleError as exc:
        print(f"model error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except (DatasetError, SourceError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ValueError, training.TrainingError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
