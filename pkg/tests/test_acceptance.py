"""Acceptance suite: one test per release criterion, at its stated tolerance.

Run with `pytest tests/test_acceptance.py -v -s` to get one printed
pass/fail line per criterion (pytest -v shows the same per-test verdicts).
"""

import http.client
import io
import json
import math
import threading
import time

import numpy as np
import pytest
from PIL import Image

from edgederm import backbone, bundle as B, dataset as D, evaluation as EV, service as S, training as T
from edgederm.sources import FrameSource, synthetic_frame
from edgederm.tensor import ConvParams, Tensor, conv2d, dense, depthwise_conv2d, softmax

from conftest import bundles_bitwise_equal, make_random_bundle
from test_evaluation import counting_oracle
from test_tensor import conv2d_oracle, depthwise_oracle
from test_training import separable_embeddings


def _announce(name: str) -> None:
    print(f"\nACCEPTANCE PASS: {name}")


def test_kernel_oracles():
    """conv2d/depthwise/dense match nested-loop oracles within 1e-5, 100 cases each, < 30 s."""
    start = time.monotonic()
    rng = np.random.default_rng(2024)
    for _ in range(100):
        h = int(rng.integers(3, 8))
        cin = int(rng.integers(1, 4))
        cout = int(rng.integers(1, 4))
        k = int(rng.integers(1, 4))
        stride = int(rng.integers(1, 3))
        if (h - k) // stride + 1 < 1:
            k = 1
        x = rng.normal(size=(1, h, h, cin)).astype(np.float32)
        kern = rng.normal(size=(k, k, cin, cout)).astype(np.float32)
        bias = rng.normal(size=cout).astype(np.float32)
        got = conv2d(Tensor(x), ConvParams(Tensor(kern), bias, stride=stride)).array
        want = conv2d_oracle(x, kern, bias, stride, (0, 0, 0, 0))
        assert np.abs(got - want).max() < 1e-5
    for _ in range(100):
        h = int(rng.integers(3, 8))
        ch = int(rng.integers(1, 5))
        k = int(rng.integers(1, 4))
        stride = int(rng.integers(1, 3))
        if (h - k) // stride + 1 < 1:
            k = 1
        x = rng.normal(size=(1, h, h, ch)).astype(np.float32)
        kern = rng.normal(size=(k, k, ch, 1)).astype(np.float32)
        bias = rng.normal(size=ch).astype(np.float32)
        got = depthwise_conv2d(Tensor(x), ConvParams(Tensor(kern), bias, stride=stride)).array
        want = depthwise_oracle(x, kern, bias, stride, (0, 0, 0, 0))
        assert np.abs(got - want).max() < 1e-5
    for _ in range(100):
        e = int(rng.integers(1, 20))
        k = int(rng.integers(1, 10))
        x = rng.normal(size=e).astype(np.float32)
        w = rng.normal(size=(e, k)).astype(np.float32)
        b = rng.normal(size=k).astype(np.float32)
        want = np.array(
            [sum(float(x[i]) * float(w[i, j]) for i in range(e)) + float(b[j]) for j in range(k)]
        )
        assert np.abs(dense(x, w, b) - want).max() < 1e-5
    elapsed = time.monotonic() - start
    assert elapsed < 30.0
    _announce(f"kernel oracles (conv2d/depthwise/dense, 100 cases each, {elapsed:.1f}s)")


def test_softmax_properties():
    """Sum within 1e-6, shift invariance within 1e-9, argmax preserved, 1000 vectors."""
    rng = np.random.default_rng(99)
    for _ in range(1000):
        n = int(rng.integers(1, 16))
        x = rng.normal(size=n) * rng.uniform(0.1, 20)
        p = softmax(x)
        assert abs(p.sum() - 1.0) < 1e-6
        shift = float(rng.normal() * 50)
        assert np.abs(p - softmax(x + shift)).max() < 1e-9
        assert int(np.argmax(p)) == int(np.argmax(x))
    _announce("softmax: sum-to-1, shift invariance, argmax (1000 vectors)")


def test_gradient_check():
    """Analytic head gradients vs central finite differences, rel err <= 1e-4, 20 instances."""
    from test_training import numerical_gradients

    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(20):
        n = int(rng.integers(4, 12))
        dim = int(rng.integers(3, 8))
        x = rng.normal(size=(n, dim))
        y = rng.integers(0, 7, size=n)
        w = rng.normal(size=(dim, 7)) * 0.5
        b = rng.normal(size=7) * 0.2
        _, gw, gb = T.head_objective_and_grads(w, b, x, y)
        nw, nb = numerical_gradients(w, b, x, y, h=1e-4)
        scale = max(np.abs(nw).max(), np.abs(nb).max(), 1e-8)
        rel = max(np.abs(gw - nw).max(), np.abs(gb - nb).max()) / scale
        worst = max(worst, rel)
        assert rel <= 1e-4
    _announce(f"gradient check (20 instances, worst rel err {worst:.2e})")


def test_training_sanity():
    """Separable 7x50 embeddings: >= 95% within 50 epochs; zero-init loss ~ ln 7; CSV exact."""
    data = separable_embeddings(n_per_class=50, seed=0)
    head, records = T.train_head(data, T.TrainConfig(epochs=50, learning_rate=0.1, seed=0))
    assert records[-1].train_acc >= 0.95
    assert abs(records[0].train_loss - math.log(7)) < 0.05
    csv_text = T.epoch_records_to_csv(records)
    assert T.epoch_records_from_csv(csv_text) == records
    _announce(
        f"training sanity (final acc {records[-1].train_acc:.3f}, "
        f"initial loss {records[0].train_loss:.4f} ~ ln7, csv round-trip)"
    )


def test_end_to_end_tiny_pipeline():
    """synth 70 images -> tiny backbone -> 10-epoch head -> test acc >= 0.6, < 2 min."""
    start = time.monotonic()
    samples = D.synth_dataset(10, seed=7)
    assert len(samples) == 70
    train_s, val_s, test_s = D.stratified_split(samples, D.SplitSpec(seed=3))
    config = backbone.build_tiny_config()
    weights = backbone.init_weights(config, seed=1)
    base = B.new_float_bundle(config, weights, D.CLASS_NAMES)
    train_emb = T.compute_embeddings(base, train_s)
    val_emb = T.compute_embeddings(base, val_s)
    head, records = T.train_head(
        train_emb, T.TrainConfig(epochs=10, batch_size=32, seed=0), val_emb
    )
    trained = B.with_head(base, head.weights.astype(np.float32), head.bias.astype(np.float32))
    report = EV.evaluate(trained, head, test_s)
    elapsed = time.monotonic() - start
    assert report.accuracy >= 0.6
    assert report.accuracy > 1 / 7
    assert elapsed < 120.0
    _announce(f"end-to-end tiny pipeline (test acc {report.accuracy:.2f}, {elapsed:.1f}s)")


def test_metrics_oracle_and_comparison_table():
    """EvalReport equals counting oracle exactly, 1000 random sets; Table rows verbatim."""
    rng = np.random.default_rng(5)
    for _ in range(1000):
        n = int(rng.integers(1, 120))
        y_true = rng.integers(0, 7, n)
        y_pred = rng.integers(0, 7, n)
        report = EV.report_from_predictions(y_true, y_pred, mean_loss=0.0)
        want = counting_oracle(list(y_true), list(y_pred))
        assert report.confusion.tolist() == want["cm"]
        assert report.accuracy == want["accuracy"]
        assert list(report.per_class_precision) == want["precision"]
        assert list(report.per_class_recall) == want["recall"]
        assert list(report.per_class_f1) == want["f1"]
        assert report.macro_precision == want["macro_p"]
        assert report.macro_recall == want["macro_r"]
        assert report.macro_f1 == want["macro_f1"]
    table = EV.render_comparison(EV.TABLE_REFERENCE_ROWS)
    lines = table.splitlines()[2:]
    rows = {l.rsplit(None, 1)[0].strip(): l.split()[-1] for l in lines}
    assert rows == {
        "Benyahia et al.": "99.0",
        "Qin et al.": "95.2",
        "Ramlakhan & Shang": "66.7",
        "Proposed Model": "78.0",
    }
    accuracies = [float(l.split()[-1]) for l in lines]
    assert accuracies == sorted(accuracies, reverse=True)
    _announce("metrics oracle (1000 random sets exact) + comparison table rows verbatim")


def test_bundle_format():
    """50 random bundles round-trip bitwise; every byte flip detected; int8 1 byte/param;
    quant error <= scale/2; float-int8 top-1 agreement >= 95% on 50 images."""
    for seed in range(50):
        b = make_random_bundle(seed)
        assert bundles_bitwise_equal(b, B.from_bytes(B.to_bytes(b)))

    config = backbone.ArchitectureConfig(
        resolution=32,
        alpha=1.0,
        layers=(
            backbone.LayerSpec("conv", out_channels=8, kernel_size=3, stride=2),
            backbone.LayerSpec("global_pool"),
        ),
        embedding_dim=8,
    )
    small = B.new_float_bundle(config, backbone.init_weights(config, seed=0), D.CLASS_NAMES)
    raw = B.to_bytes(small)
    detected = 0
    for pos in range(len(raw)):
        corrupted = bytearray(raw)
        corrupted[pos] ^= 0x01
        try:
            B.from_bytes(bytes(corrupted))
        except B.BundleError:
            detected += 1
    assert detected == len(raw)

    float_bundle = make_random_bundle(123)
    q = B.quantize_int8(float_bundle)
    backbone_payload = sum(t.values.nbytes for t in q.backbone_tensors())
    assert backbone_payload == backbone.parameter_count(q.config)
    total_payload = sum(t.values.nbytes for t in q.tensors)
    total_params = sum(t.values.size for t in float_bundle.tensors)
    assert total_payload == total_params
    for ft, qt in zip(float_bundle.tensors, q.tensors):
        deq = B.dequantize_tensor(qt.values, qt.quant).astype(np.float64)
        err = np.abs(deq - ft.values.astype(np.float64)).max()
        assert err <= qt.quant.scale / 2

    rng = np.random.default_rng(11)
    images = [Tensor(rng.uniform(-1, 1, (1, 32, 32, 3)).astype(np.float32)) for _ in range(50)]
    stats = B.dequantized_forward_check(float_bundle, q, images)
    assert stats.top1_agreement >= 0.95
    _announce(
        f"bundle format (50 round-trips, {detected}/{len(raw)} byte flips detected, "
        f"1 byte/param, err <= scale/2, agreement {stats.top1_agreement:.2f})"
    )


def test_pruning():
    """p=0 identity, p=1 all-zero, p=0.5 matches the sort oracle, sparsity monotone."""
    b = make_random_bundle(31)
    assert B.to_bytes(B.prune_magnitude(b, 0.0)) == B.to_bytes(b)
    assert B.prune_magnitude(b, 1.0).sparsity_report().overall == 1.0

    config = backbone.ArchitectureConfig(
        resolution=32,
        alpha=1.0,
        layers=(
            backbone.LayerSpec("conv", out_channels=8, kernel_size=3, stride=2),
            backbone.LayerSpec("global_pool"),
        ),
        embedding_dim=8,
    )
    toy = B.new_float_bundle(config, backbone.init_weights(config, seed=4), D.CLASS_NAMES)
    flat = toy.tensors[0].values.reshape(-1)
    order = sorted(range(flat.size), key=lambda i: (abs(flat[i]), i))
    expect_zero = set(order[: round(0.5 * flat.size)])
    pruned_flat = B.prune_magnitude(toy, 0.5).tensors[0].values.reshape(-1)
    for i in range(flat.size):
        assert (pruned_flat[i] == 0.0) == (i in expect_zero) or flat[i] == 0.0

    previous = -1.0
    for p in np.linspace(0, 1, 11):
        s = B.prune_magnitude(b, float(p)).sparsity_report().overall
        assert s >= previous
        previous = s
    _announce("pruning (identity/all-zero/sort-oracle/monotone)")


def test_service_contract(tmp_path, capsys):
    """Labels order, disclaimer on every output path, concurrent == serial,
    monotone stream timestamps, benchmark order stats + activation oracle."""
    rng = np.random.default_rng(3)
    base = make_random_bundle(77)
    svc = S.ClassifyService(base, source=FrameSource("synthetic", interval=0.05), port=0).start()
    try:
        deadline = time.monotonic() + 10
        while svc.health_payload()["frames_seen"] == 0 and time.monotonic() < deadline:
            time.sleep(0.01)

        def get(path):
            conn = http.client.HTTPConnection("127.0.0.1", svc.port, timeout=10)
            conn.request("GET", path)
            resp = conn.getresponse()
            body = resp.read()
            conn.close()
            return resp.status, body

        def post(path, body=b""):
            conn = http.client.HTTPConnection("127.0.0.1", svc.port, timeout=10)
            conn.request("POST", path, body=body)
            resp = conn.getresponse()
            data = resp.read()
            conn.close()
            return resp.status, json.loads(data)

        status, body = get("/labels")
        assert status == 200
        assert json.loads(body)["labels"] == list(D.CLASS_NAMES)

        buf = io.BytesIO()
        Image.fromarray(synthetic_frame(1)).save(buf, format="PNG")
        png = buf.getvalue()
        _, serial = post("/classify", png)
        assert serial["disclaimer"] == S.DISCLAIMER
        results = [None] * 6
        def worker(i):
            results[i] = post("/classify", png)[1]
        threads = [threading.Thread(target=worker, args=(i,)) for i in range(6)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert all(r["top"] == serial["top"] for r in results)

        # SSE stream: monotone timestamps, disclaimer in every payload
        from test_service import read_sse_events

        events = read_sse_events(svc.port, 4)
        stream_results = [d for name, d in events if name == "result"]
        assert len(stream_results) >= 3
        stamps = [r["timestamp"] for r in stream_results]
        assert all(b > a for a, b in zip(stamps, stamps[1:]))
        assert all(r["disclaimer"] == S.DISCLAIMER for r in stream_results)

        _, capture_entry = post("/capture")
        assert capture_entry["result"]["disclaimer"] == S.DISCLAIMER
        status, body = get("/history")
        history = json.loads(body)
        assert all(e["result"]["disclaimer"] == S.DISCLAIMER for e in history["entries"])
    finally:
        svc.stop()

    # CLI text path carries the disclaimer too
    from edgederm.cli import main

    model_path = tmp_path / "m.edrm"
    B.save(base, model_path)
    image_path = tmp_path / "img.png"
    Image.fromarray(synthetic_frame(2)).save(image_path)
    assert main(["classify", str(model_path), str(image_path)]) == 0
    assert S.DISCLAIMER in capsys.readouterr().out

    report = S.benchmark(base, frames=12)
    assert report.p50_ms <= report.p95_ms <= report.max_ms
    # analytic per-layer walk of the tiny config (hand rule: 4-byte floats,
    # ceil(h/stride) spatial shrink, max over in+out pairs)
    def hand_peak(config):
        h = config.resolution
        c = 3
        best = 0
        for op in backbone.plan_conv_ops(config):
            oh = -(-h // op.stride)
            best = max(best, 4 * h * h * c + 4 * oh * oh * op.out_channels)
            h, c = oh, op.out_channels
        return best

    assert report.peak_activation_bytes == hand_peak(base.config)
    _announce("service contract (labels, disclaimer everywhere, concurrency, stream order, benchmark)")
