"""Frame sources for the live classification loop.

A source yields uint8 RGB frames at a configured interval. Pacing is
latest-frame-wins: when the consumer is slower than the frame cadence,
intermediate frames are skipped instead of queueing, so the reading always
reflects the present.
"""

from __future__ import annotations

import glob as globlib
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

Array = np.ndarray


class SourceError(Exception):
    pass


@dataclass(frozen=True)
class FrameSource:
    kind: str  # "file" | "glob" | "camera" | "synthetic"
    target: str | int | None = None
    interval: float = 0.5
    count: int | None = None  # frame budget for synthetic sources; None = unbounded
    resolution: int = 64
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in ("file", "glob", "camera", "synthetic"):
            raise ValueError(f"unknown frame source kind {self.kind!r}")
        if self.interval <= 0:
            raise ValueError("frame interval must be positive")


def parse_source(text: str, interval: float = 0.5) -> FrameSource:
    """CLI spelling: "synthetic[:count]", "camN", a file, or a directory."""
    if text.startswith("synthetic"):
        count = None
        if ":" in text:
            count = int(text.split(":", 1)[1])
        return FrameSource("synthetic", interval=interval, count=count)
    if text.startswith("cam") and text[3:].isdigit():
        return FrameSource("camera", target=int(text[3:]), interval=interval)
    path = Path(text)
    if path.is_dir():
        return FrameSource("glob", target=str(path / "*"), interval=interval)
    if path.is_file():
        return FrameSource("file", target=str(path), interval=interval)
    raise SourceError(f"cannot resolve frame source {text!r}")


@dataclass
class Frame:
    pixels: Array  # uint8 (h, w, 3)
    index: int
    timestamp: float


class FrameStream:
    """Paced pull interface over an indexable frame provider."""

    def __init__(self, provider, interval: float, limit: int | None) -> None:
        self._provider = provider
        self._interval = interval
        self._limit = limit
        self._start = time.monotonic()
        self._last_index = -1

    def read(self) -> Frame | None:
        """Next frame, skipping any that became stale while the caller worked."""
        now = time.monotonic()
        available = int((now - self._start) / self._interval)
        index = max(self._last_index + 1, available)
        if self._limit is not None and index >= self._limit:
            index = self._last_index + 1
            if index >= self._limit:
                return None
        due = self._start + index * self._interval
        delay = due - time.monotonic()
        if delay > 0:
            time.sleep(delay)
        pixels = self._provider(index)
        if pixels is None:
            return None
        self._last_index = index
        return Frame(pixels, index, time.time())

    def close(self) -> None:
        pass


class CameraStream:
    """Thin wrapper over the platform video-device interface."""

    def __init__(self, device_id: int, interval: float) -> None:
        try:
            import cv2
        except ImportError as exc:
            raise SourceError("camera capture needs opencv (install the [camera] extra)") from exc
        self._cv2 = cv2
        self._cap = cv2.VideoCapture(device_id)
        if not self._cap.isOpened():
            raise SourceError(f"cannot open camera device {device_id}")
        self._interval = interval
        self._index = -1
        self._next_due = time.monotonic()

    def read(self) -> Frame | None:
        delay = self._next_due - time.monotonic()
        if delay > 0:
            time.sleep(delay)
        ok, frame = self._cap.read()
        if not ok:
            raise SourceError("camera read failed")
        self._index += 1
        self._next_due = time.monotonic() + self._interval
        rgb = self._cv2.cvtColor(frame, self._cv2.COLOR_BGR2RGB)
        return Frame(np.ascontiguousarray(rgb, dtype=np.uint8), self._index, time.time())

    def close(self) -> None:
        self._cap.release()


def _load_frame_file(path: str) -> Array:
    from .dataset import DatasetError, load_rgb_pixels

    try:
        return load_rgb_pixels(path)
    except DatasetError as exc:
        raise SourceError(str(exc)) from exc


def synthetic_frame(index: int, resolution: int = 64, seed: int = 0) -> Array:
    """Seeded frame cycling through the class-signature synthetic images."""
    from .dataset import CLASS_NAMES, synth_dataset

    c = index % len(CLASS_NAMES)
    sample = synth_dataset(1, seed=seed + index, size=resolution)[c]
    return sample.pixels


def open_source(source: FrameSource):
    """Create the stream for a source description."""
    if source.kind == "camera":
        return CameraStream(int(source.target), source.interval)
    if source.kind == "synthetic":
        provider = lambda i: synthetic_frame(i, source.resolution, source.seed)
        return FrameStream(provider, source.interval, source.count)
    if source.kind == "file":
        if not Path(source.target).is_file():
            raise SourceError(f"no such frame file {source.target!r}")
        paths = [str(source.target)]
    else:
        paths = sorted(p for p in globlib.glob(str(source.target)) if Path(p).is_file())
        if not paths:
            raise SourceError(f"no frames match {source.target!r}")
    provider = lambda i: _load_frame_file(paths[i]) if i < len(paths) else None
    return FrameStream(provider, source.interval, len(paths))
