"""On-device classification: single images, live frame streams, HTTP service,
and the latency/memory benchmark.

Every emitted classification carries a fixed disclaimer; results list the
top five classes by probability. The service owns one capture loop; model
state is immutable and shared read-only, so inference endpoints can run
concurrently, and the only mutable state (latest frame and capture history)
is guarded by a single condition variable.
"""

from __future__ import annotations

import base64
import io
import json
import threading
import time
from collections import deque
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np

from .backbone import forward, peak_activation_bytes
from .bundle import (
    DEVICE_BUDGETS,
    DeviceVerdict,
    ModelBundle,
    PRECISION_INT8,
    dequantize_bundle,
    to_bytes,
)
from .dataset import load_rgb_pixels, preprocess
from .sources import FrameSource, SourceError, open_source
from .training import SoftmaxHead, head_from_bundle, predict

Array = np.ndarray

DISCLAIMER = (
    "Research prototype — not an approved medical device. "
    "Confirm any result with a medical professional."
)

TOP_K = 5


@dataclass(frozen=True)
class ClassificationResult:
    top: tuple[tuple[str, float], ...]  # (label, probability), descending
    timestamp: float
    model_checksum: str
    disclaimer: str = DISCLAIMER

    def to_payload(self) -> dict:
        return {
            "top": [{"label": l, "probability": p} for l, p in self.top],
            "timestamp": self.timestamp,
            "model_checksum": self.model_checksum,
            "disclaimer": self.disclaimer,
        }


@dataclass(frozen=True)
class StatusEvent:
    kind: str
    message: str
    timestamp: float

    def to_payload(self) -> dict:
        return {"kind": self.kind, "message": self.message, "timestamp": self.timestamp}


@dataclass(frozen=True)
class BenchmarkReport:
    latencies_ms: tuple[float, ...]
    p50_ms: float
    p95_ms: float
    max_ms: float
    throughput_fps: float
    model_bytes: int
    peak_activation_bytes: int
    verdicts: tuple[DeviceVerdict, ...]


class Runtime:
    """A bundle readied for inference: float weights, head, checksum."""

    def __init__(self, bundle: ModelBundle, head: SoftmaxHead | None = None) -> None:
        self.checksum = bundle.checksum()
        self.labels = bundle.labels
        if bundle.precision == PRECISION_INT8:
            bundle = dequantize_bundle(bundle)
        self.bundle = bundle
        self.weights = bundle.backbone_weights()
        self.head = head if head is not None else head_from_bundle(bundle)
        if self.head.weights.shape != (bundle.config.embedding_dim, len(bundle.labels)):
            raise ValueError(
                f"head shape {self.head.weights.shape} does not match bundle "
                f"({bundle.config.embedding_dim} x {len(bundle.labels)})"
            )

    def probabilities(self, pixels) -> Array:
        x = preprocess(pixels, self.bundle.preprocessing)
        emb = forward(self.bundle.config, self.weights, x)
        return predict(self.head, emb)


def top_k(probabilities: Array, labels, k: int = TOP_K) -> tuple[tuple[str, float], ...]:
    """Highest-probability classes, ties broken by label order."""
    order = np.argsort(-np.asarray(probabilities), kind="stable")
    return tuple((labels[i], float(probabilities[i])) for i in order[: min(k, len(labels))])


def classify(
    bundle: ModelBundle,
    head: SoftmaxHead | None,
    image,
    timestamp: float | None = None,
) -> ClassificationResult:
    """Preprocess, run the backbone and head, and rank the top five classes."""
    runtime = bundle if isinstance(bundle, Runtime) else Runtime(bundle, head)
    probs = runtime.probabilities(load_rgb_pixels(image))
    return ClassificationResult(
        top=top_k(probs, runtime.labels),
        timestamp=time.time() if timestamp is None else timestamp,
        model_checksum=runtime.checksum,
    )


def render_result(result: ClassificationResult, full: Array | None = None, labels=None) -> str:
    """Human-readable scores with integer percentages (half up)."""
    from .evaluation import percent_half_up

    lines = []
    for label, p in result.top:
        lines.append(f"  {label:<22} {percent_half_up(p):>3}%")
    if full is not None and labels is not None:
        lines.append("  full distribution:")
        for label, p in zip(labels, full):
            lines.append(f"    {label:<22} {float(p):.6f}")
    lines.append(f"  {result.disclaimer}")
    return "\n".join(lines)


class _Clock:
    """Wall-clock timestamps forced to be strictly increasing."""

    def __init__(self) -> None:
        self._last = 0.0
        self._lock = threading.Lock()

    def next(self) -> float:
        with self._lock:
            now = time.time()
            self._last = now if now > self._last else self._last + 1e-6
            return self._last


def stream_results(runtime: Runtime, source, stop_event: threading.Event | None = None):
    """Generator over (frame, event) pairs for a frame source.

    Yields (None, StatusEvent) on source failures and retries with capped
    exponential backoff; ends when the source is exhausted or stop is set.
    """
    stop_event = stop_event or threading.Event()
    clock = _Clock()
    backoff = 0.1
    stream = None
    try:
        while not stop_event.is_set():
            if stream is None:
                try:
                    stream = open_source(source) if isinstance(source, FrameSource) else source
                except SourceError as exc:
                    yield None, StatusEvent("disconnect", str(exc), clock.next())
                    if stop_event.wait(backoff):
                        return
                    backoff = min(backoff * 2, 2.0)
                    continue
            try:
                frame = stream.read()
            except SourceError as exc:
                yield None, StatusEvent("disconnect", str(exc), clock.next())
                if stop_event.wait(backoff):
                    return
                backoff = min(backoff * 2, 2.0)
                continue
            backoff = 0.1
            if frame is None:
                return
            if stop_event.is_set():
                return
            probs = runtime.probabilities(frame.pixels)
            result = ClassificationResult(
                top=top_k(probs, runtime.labels),
                timestamp=clock.next(),
                model_checksum=runtime.checksum,
            )
            yield frame, result
    finally:
        if stream is not None:
            stream.close()


def classify_stream(bundle, head, source, sink, stop_event: threading.Event | None = None) -> int:
    """Run the live loop, pushing results (and status events) into sink.

    Returns the number of classification results emitted.
    """
    runtime = bundle if isinstance(bundle, Runtime) else Runtime(bundle, head)
    count = 0
    for _, event in stream_results(runtime, source, stop_event):
        sink(event)
        if isinstance(event, ClassificationResult):
            count += 1
    return count


# --- HTTP service ---------------------------------------------------------


def _png_bytes(pixels: Array) -> bytes:
    from PIL import Image

    buf = io.BytesIO()
    Image.fromarray(pixels).save(buf, format="PNG")
    return buf.getvalue()


class ClassifyService:
    """Local HTTP face of the classifier.

    Endpoints: GET /health, /labels, /events (server-sent events), /frame,
    /history; POST /classify (raw image body) and /capture.
    """

    def __init__(
        self,
        bundle: ModelBundle,
        head: SoftmaxHead | None = None,
        source: FrameSource | None = None,
        port: int = 8077,
        host: str = "127.0.0.1",
    ) -> None:
        self.runtime = Runtime(bundle, head)
        self.source = source
        self.host = host
        self.requested_port = port
        self.port = None
        self._cond = threading.Condition()
        self._seq = 0
        self._latest_event = None  # ClassificationResult | StatusEvent
        self._latest_frame_png: bytes | None = None
        # short window of (timestamp, frame png, result) so a frozen console
        # can capture the exact reading it is showing, not a newer one
        self._recent: deque = deque(maxlen=64)
        self._history: list[dict] = []
        self._capture_count = 0
        self._stop = threading.Event()
        self._started = time.time()
        self._frames_seen = 0
        self._server = None
        self._threads: list[threading.Thread] = []
        self._clock = _Clock()

    # -- lifecycle --

    def start(self) -> "ClassifyService":
        handler = _make_handler(self)
        self._server = ThreadingHTTPServer((self.host, self.requested_port), handler)
        self._server.daemon_threads = True
        self.port = self._server.server_address[1]
        t = threading.Thread(target=self._server.serve_forever, name="edgederm-http", daemon=True)
        t.start()
        self._threads.append(t)
        if self.source is not None:
            c = threading.Thread(target=self._capture_loop, name="edgederm-capture", daemon=True)
            c.start()
            self._threads.append(c)
        return self

    def stop(self) -> None:
        self._stop.set()
        with self._cond:
            self._cond.notify_all()
        if self._server is not None:
            self._server.shutdown()
            self._server.server_close()
        for t in self._threads:
            t.join(timeout=5)
        with self._cond:
            self._history.clear()

    def wait(self, timeout: float | None = None) -> bool:
        """Block until stop() is called (or the timeout elapses)."""
        return self._stop.wait(timeout)

    @property
    def url(self) -> str:
        return f"http://{self.host}:{self.port}"

    # -- capture loop --

    def _capture_loop(self) -> None:
        for frame, event in stream_results(self.runtime, self.source, self._stop):
            with self._cond:
                self._latest_event = event
                if frame is not None:
                    self._latest_frame_png = _png_bytes(frame.pixels)
                    self._frames_seen += 1
                    if isinstance(event, ClassificationResult):
                        self._recent.append((event.timestamp, self._latest_frame_png, event))
                self._seq += 1
                self._cond.notify_all()

    # -- request logic (handler calls these) --

    def health_payload(self) -> dict:
        with self._cond:
            frames = self._frames_seen
        return {
            "status": "ok",
            "model_checksum": self.runtime.checksum,
            "uptime_s": time.time() - self._started,
            "frames_seen": frames,
        }

    def classify_upload(self, body: bytes) -> dict:
        from PIL import Image, UnidentifiedImageError

        try:
            with Image.open(io.BytesIO(body)) as img:
                pixels = np.asarray(img.convert("RGB"), dtype=np.uint8)
        except (OSError, UnidentifiedImageError) as exc:
            raise ValueError(f"cannot decode uploaded image: {exc}") from exc
        probs = self.runtime.probabilities(pixels)
        result = ClassificationResult(
            top=top_k(probs, self.runtime.labels),
            timestamp=self._clock.next(),
            model_checksum=self.runtime.checksum,
        )
        return result.to_payload()

    def capture(self, timestamp: float | None = None) -> dict | None:
        """Freeze a reading into history: the latest one, or, when a
        timestamp is given, the buffered reading it identifies."""
        with self._cond:
            if timestamp is None:
                if self._latest_frame_png is None or not isinstance(
                    self._latest_event, ClassificationResult
                ):
                    return None
                png, result = self._latest_frame_png, self._latest_event
            else:
                match = next((r for r in self._recent if r[0] == timestamp), None)
                if match is None:
                    return None
                _, png, result = match
            self._capture_count += 1
            entry = {
                "id": self._capture_count,
                "timestamp": result.timestamp,
                "result": result.to_payload(),
                "frame_png_base64": base64.b64encode(png).decode("ascii"),
            }
            self._history.append(entry)
            return entry

    def history_payload(self) -> dict:
        with self._cond:
            return {"entries": list(self._history)}

    def latest_frame(self) -> bytes | None:
        with self._cond:
            return self._latest_frame_png

    def wait_for_event(self, last_seq: int, timeout: float = 0.5):
        """(seq, event) once seq advances past last_seq, else (last_seq, None)."""
        with self._cond:
            self._cond.wait_for(lambda: self._seq > last_seq or self._stop.is_set(), timeout)
            if self._stop.is_set():
                return None
            if self._seq > last_seq:
                return self._seq, self._latest_event
            return last_seq, None

    @property
    def stopping(self) -> bool:
        return self._stop.is_set()


def _make_handler(service: ClassifyService):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, fmt, *args):  # silence per-request stderr noise
            pass

        def _send_json(self, payload: dict, status: int = 200) -> None:
            raw = json.dumps(payload).encode("utf-8")
            self.send_response(status)
            self._cors()
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(raw)))
            self.end_headers()
            self.wfile.write(raw)

        def _cors(self) -> None:
            self.send_header("Access-Control-Allow-Origin", "*")

        def do_OPTIONS(self) -> None:
            self.send_response(204)
            self._cors()
            self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
            self.send_header("Access-Control-Allow-Headers", "Content-Type")
            self.send_header("Content-Length", "0")
            self.end_headers()

        def do_GET(self) -> None:
            path = self.path.split("?", 1)[0]
            if path == "/health":
                self._send_json(service.health_payload())
            elif path == "/labels":
                self._send_json({"labels": list(service.runtime.labels)})
            elif path == "/frame":
                png = service.latest_frame()
                if png is None:
                    self._send_json({"error": "no frame captured yet"}, status=404)
                    return
                self.send_response(200)
                self._cors()
                self.send_header("Content-Type", "image/png")
                self.send_header("Content-Length", str(len(png)))
                self.end_headers()
                self.wfile.write(png)
            elif path == "/history":
                self._send_json(service.history_payload())
            elif path == "/events":
                self._serve_events()
            else:
                self._send_json({"error": f"unknown path {path}"}, status=404)

        def do_POST(self) -> None:
            path = self.path.split("?", 1)[0]
            if path == "/classify":
                length = int(self.headers.get("Content-Length") or 0)
                body = self.rfile.read(length) if length else b""
                if not body:
                    self._send_json({"error": "empty request body"}, status=400)
                    return
                try:
                    payload = service.classify_upload(body)
                except ValueError as exc:
                    self._send_json({"error": str(exc)}, status=400)
                    return
                self._send_json(payload)
            elif path == "/capture":
                length = int(self.headers.get("Content-Length") or 0)
                body = self.rfile.read(length) if length else b""
                timestamp = None
                if body:
                    try:
                        timestamp = json.loads(body).get("timestamp")
                    except (json.JSONDecodeError, AttributeError):
                        self._send_json({"error": "capture body must be JSON"}, status=400)
                        return
                entry = service.capture(timestamp)
                if entry is None:
                    message = (
                        "no frame captured yet"
                        if timestamp is None
                        else "requested reading is no longer buffered"
                    )
                    self._send_json({"error": message}, status=404)
                    return
                self._send_json(entry)
            else:
                self._send_json({"error": f"unknown path {path}"}, status=404)

        def _serve_events(self) -> None:
            self.send_response(200)
            self._cors()
            self.send_header("Content-Type", "text/event-stream")
            self.send_header("Cache-Control", "no-cache")
            self.end_headers()
            last = 0
            try:
                self.wfile.write(b"retry: 1000\n\n")
                self.wfile.flush()
                while not service.stopping:
                    step = service.wait_for_event(last)
                    if step is None:
                        break
                    seq, event = step
                    if event is None:
                        self.wfile.write(b": keepalive\n\n")
                    else:
                        name = "result" if isinstance(event, ClassificationResult) else "status"
                        data = json.dumps(event.to_payload())
                        self.wfile.write(f"event: {name}\ndata: {data}\n\n".encode("utf-8"))
                    self.wfile.flush()
                    last = seq
            except (BrokenPipeError, ConnectionResetError):
                pass

    return Handler


def serve(
    bundle: ModelBundle,
    head: SoftmaxHead | None = None,
    source: FrameSource | None = None,
    port: int = 8077,
    host: str = "127.0.0.1",
) -> ClassifyService:
    """Start the local service; returns the running instance (use .stop())."""
    return ClassifyService(bundle, head=head, source=source, port=port, host=host).start()


# --- benchmark ------------------------------------------------------------


def benchmark(
    bundle: ModelBundle,
    head: SoftmaxHead | None = None,
    frames: int = 100,
    budgets=DEVICE_BUDGETS,
    seed: int = 0,
) -> BenchmarkReport:
    """Latency distribution over synthetic frames plus device-fit verdicts."""
    if frames < 10:
        raise ValueError("benchmark needs at least 10 frames")
    runtime = Runtime(bundle, head)
    rng = np.random.default_rng(seed)
    r = bundle.preprocessing.resolution
    def frame() -> Array:
        return rng.integers(0, 256, size=(r, r, 3), dtype=np.uint8)

    for _ in range(3):  # warmup
        runtime.probabilities(frame())
    latencies = []
    for _ in range(frames):
        pixels = frame()
        start = time.perf_counter()
        runtime.probabilities(pixels)
        latencies.append((time.perf_counter() - start) * 1000.0)
    lat = np.asarray(latencies)
    model_bytes = len(to_bytes(bundle))
    act = peak_activation_bytes(bundle.config)
    verdicts = tuple(
        DeviceVerdict(b, model_bytes + act <= b.memory_bytes) for b in budgets
    )
    return BenchmarkReport(
        latencies_ms=tuple(latencies),
        p50_ms=float(np.percentile(lat, 50)),
        p95_ms=float(np.percentile(lat, 95)),
        max_ms=float(lat.max()),
        throughput_fps=1000.0 * frames / float(lat.sum()),
        model_bytes=model_bytes,
        peak_activation_bytes=act,
        verdicts=verdicts,
    )


def render_benchmark(report: BenchmarkReport) -> str:
    lines = [
        f"frames:           {len(report.latencies_ms)}",
        f"latency p50:      {report.p50_ms:.2f} ms",
        f"latency p95:      {report.p95_ms:.2f} ms",
        f"latency max:      {report.max_ms:.2f} ms",
        f"throughput:       {report.throughput_fps:.2f} frames/s",
        f"model size:       {report.model_bytes} bytes",
        f"peak activations: {report.peak_activation_bytes} bytes",
        "",
        "device fit (model + activations vs memory):",
    ]
    for v in report.verdicts:
        verdict = "fits" if v.fits else "does NOT fit"
        lines.append(
            f"  {v.budget.name:<24} {v.budget.memory_bytes / 2**30:7.2f} GiB @ "
            f"{v.budget.clock_hz / 1e9:.2f} GHz  ->  {verdict}"
        )
    return "\n".join(lines)
