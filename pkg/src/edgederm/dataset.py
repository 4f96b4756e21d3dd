"""Skin-lesion dataset handling: manifest loading, splits, preprocessing.

Covers the seven pigmented-lesion classes, HAM10000-style CSV manifests,
deterministic stratified splitting (lesion groups never straddle a split),
bilinear preprocessing to the model's input tensor, and a seeded synthetic
dataset generator for desk-scale end-to-end runs.
"""

from __future__ import annotations

import csv
import hashlib
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bundle import Preprocessing
from .tensor import Tensor

Array = np.ndarray

# Fixed class order; the class id of a sample is its index here.
CLASS_NAMES = (
    "benign keratosis",
    "melanocytic nevus",
    "dermatofibroma",
    "melanoma",
    "vascular lesion",
    "basal cell carcinoma",
    "actinic keratosis",
)

# HAM10000 diagnosis codes.
DIAGNOSIS_CODES = {
    "bkl": 0,
    "nv": 1,
    "df": 2,
    "mel": 3,
    "vasc": 4,
    "bcc": 5,
    "akiec": 6,
}
CODE_FOR_CLASS = {v: k for k, v in DIAGNOSIS_CODES.items()}

_IMAGE_EXTENSIONS = (".jpg", ".jpeg", ".png", ".bmp")


class DatasetError(Exception):
    """Problem with dataset files, rows, or images."""


def load_rgb_pixels(image) -> Array:
    """uint8 (h, w, 3) pixels from a path, PIL image, or array."""
    if isinstance(image, (str, Path)):
        from PIL import Image, UnidentifiedImageError

        try:
            with Image.open(image) as img:
                return np.asarray(img.convert("RGB"), dtype=np.uint8)
        except (OSError, UnidentifiedImageError) as exc:
            raise DatasetError(f"cannot read image {str(image)!r}: {exc}") from exc
    if hasattr(image, "convert"):
        return np.asarray(image.convert("RGB"), dtype=np.uint8)
    return np.asarray(image)


@dataclass
class LabeledSample:
    class_id: int
    image_id: str = ""
    path: str | None = None
    pixels: Array | None = None  # uint8 (h, w, 3)
    lesion_id: str | None = None

    def __post_init__(self) -> None:
        if not 0 <= self.class_id < len(CLASS_NAMES):
            raise DatasetError(f"class id {self.class_id} outside [0, {len(CLASS_NAMES)})")

    def load_pixels(self) -> Array:
        if self.pixels is not None:
            return self.pixels
        try:
            return load_rgb_pixels(self.path)
        except DatasetError as exc:
            raise DatasetError(f"sample {self.image_id!r}: {exc}") from exc


@dataclass(frozen=True)
class SplitSpec:
    train: float = 0.8
    val: float = 0.1
    test: float = 0.1
    seed: int = 0

    def __post_init__(self) -> None:
        fracs = (self.train, self.val, self.test)
        if any(not 0.0 <= f <= 1.0 for f in fracs):
            raise ValueError(f"split fractions must be in [0, 1], got {fracs}")
        if abs(sum(fracs) - 1.0) > 1e-9:
            raise ValueError(f"split fractions must sum to 1, got {sum(fracs)}")


def load_manifest(csv_path, image_dir) -> list[LabeledSample]:
    """Read a HAM10000-style manifest (image_id, dx, optional lesion_id)."""
    csv_path = Path(csv_path)
    image_dir = Path(image_dir)
    samples: list[LabeledSample] = []
    seen: set[str] = set()
    with open(csv_path, newline="") as fh:
        reader = csv.DictReader(fh)
        fields = reader.fieldnames or []
        rows = list(reader)
        if not rows:
            return []
        for col in ("image_id", "dx"):
            if col not in fields:
                raise DatasetError(f"manifest {csv_path} is missing the {col!r} column")
        for lineno, row in enumerate(rows, start=2):
            image_id = (row.get("image_id") or "").strip()
            dx = (row.get("dx") or "").strip().lower()
            if dx not in DIAGNOSIS_CODES:
                raise DatasetError(f"row {lineno}: unknown diagnosis code {dx!r}")
            if image_id in seen:
                raise DatasetError(f"row {lineno}: duplicate image id {image_id!r}")
            seen.add(image_id)
            path = _find_image(image_dir, image_id)
            if path is None:
                raise DatasetError(f"row {lineno}: no image file for id {image_id!r} in {image_dir}")
            samples.append(
                LabeledSample(
                    class_id=DIAGNOSIS_CODES[dx],
                    image_id=image_id,
                    path=str(path),
                    lesion_id=(row.get("lesion_id") or "").strip() or None,
                )
            )
    return samples


def _find_image(image_dir: Path, image_id: str) -> Path | None:
    for ext in _IMAGE_EXTENSIONS:
        candidate = image_dir / f"{image_id}{ext}"
        if candidate.exists():
            return candidate
    return None


def stratified_split(
    samples: list[LabeledSample], spec: SplitSpec
) -> tuple[list[LabeledSample], list[LabeledSample], list[LabeledSample]]:
    """Deterministic per-class split; samples sharing a lesion id stay together.

    With unique lesion ids the per-class counts land within one sample of
    fraction * class_count (largest-remainder allocation).
    """
    by_class: dict[int, list[LabeledSample]] = {c: [] for c in range(len(CLASS_NAMES))}
    for s in samples:
        by_class[s.class_id].append(s)
    for c, members in by_class.items():
        if not members:
            raise DatasetError(f"class {CLASS_NAMES[c]!r} has no samples")

    rng = np.random.default_rng(spec.seed)
    splits: tuple[list[LabeledSample], ...] = ([], [], [])
    fractions = (spec.train, spec.val, spec.test)
    for c in range(len(CLASS_NAMES)):
        members = by_class[c]
        groups: dict[str, list[LabeledSample]] = {}
        for i, s in enumerate(members):
            key = s.lesion_id if s.lesion_id else f"__solo_{i}"
            groups.setdefault(key, []).append(s)
        group_list = list(groups.values())
        order = rng.permutation(len(group_list))
        targets = _largest_remainder(len(members), fractions)
        assigned = [0, 0, 0]
        for gi in order:
            group = group_list[gi]
            deficits = [targets[k] - assigned[k] for k in range(3)]
            dest = max(range(3), key=lambda k: (deficits[k], -k))
            splits[dest].extend(group)
            assigned[dest] += len(group)
    return splits


def _largest_remainder(n: int, fractions: tuple[float, float, float]) -> list[int]:
    raw = [f * n for f in fractions]
    counts = [int(x) for x in raw]
    remainders = sorted(range(3), key=lambda k: (raw[k] - counts[k], -k), reverse=True)
    for k in remainders[: n - sum(counts)]:
        counts[k] += 1
    return counts


def bilinear_resize(image: Array, out_h: int, out_w: int) -> Array:
    """Resize (h, w, c) pixels with half-pixel-center bilinear sampling."""

    def axis(n_in: int, n_out: int):
        x = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
        x = np.clip(x, 0.0, n_in - 1.0)
        i0 = x.astype(np.int64)
        i1 = np.minimum(i0 + 1, n_in - 1)
        return i0, i1, x - i0

    img = np.asarray(image, dtype=np.float64)
    y0, y1, fy = axis(img.shape[0], out_h)
    x0, x1, fx = axis(img.shape[1], out_w)
    top = img[y0][:, x0] * (1 - fx)[None, :, None] + img[y0][:, x1] * fx[None, :, None]
    bottom = img[y1][:, x0] * (1 - fx)[None, :, None] + img[y1][:, x1] * fx[None, :, None]
    return top * (1 - fy)[:, None, None] + bottom * fy[:, None, None]


def preprocess(image, preprocessing: Preprocessing) -> Tensor:
    """Decode-agnostic pixels -> (1, r, r, 3) float32 tensor in [-1, 1].

    Resizes bilinearly to the bundle resolution and normalizes each channel
    as (x - mean) / scale.
    """
    if hasattr(image, "convert"):  # PIL image
        image = np.asarray(image.convert("RGB"), dtype=np.uint8)
    pixels = np.asarray(image)
    if pixels.ndim != 3 or pixels.shape[2] != 3:
        raise ValueError(f"expected RGB pixels of shape (h, w, 3), got {pixels.shape}")
    if pixels.shape[0] < 1 or pixels.shape[1] < 1:
        raise ValueError("image has zero size")
    r = preprocessing.resolution
    resized = bilinear_resize(pixels.astype(np.float64), r, r)
    mean = np.asarray(preprocessing.mean, dtype=np.float64)
    scale = np.asarray(preprocessing.scale, dtype=np.float64)
    normalized = ((resized - mean) / scale).astype(np.float32)
    return Tensor(normalized[None, :, :, :])


# --- synthetic data -------------------------------------------------------

# One well-separated base color per class, plus a class-specific grating.
_CLASS_COLORS = (
    (225, 64, 60),
    (70, 205, 75),
    (62, 88, 228),
    (238, 216, 70),
    (205, 72, 212),
    (64, 214, 214),
    (242, 150, 52),
)


def synth_dataset(n_per_class: int, seed: int = 0, size: int = 48) -> list[LabeledSample]:
    """Deterministic class-conditional images: distinct color and texture per class."""
    if n_per_class < 1:
        raise ValueError("need at least one sample per class")
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / size
    samples = []
    for c in range(len(CLASS_NAMES)):
        color = np.array(_CLASS_COLORS[c], dtype=np.float64)
        angle = c * np.pi / 7.0
        freq = 1.5 + c
        direction = xx * np.cos(angle) + yy * np.sin(angle)
        for i in range(n_per_class):
            phase = rng.uniform(0, 2 * np.pi)
            wave = 0.78 + 0.22 * np.sin(2 * np.pi * freq * direction + phase)
            img = color[None, None, :] * wave[:, :, None]
            img += rng.normal(0.0, 6.0, size=img.shape)
            img += rng.uniform(-10.0, 10.0)
            pixels = np.clip(img, 0, 255).astype(np.uint8)
            samples.append(
                LabeledSample(
                    class_id=c,
                    image_id=f"syn_{c}_{i:04d}",
                    pixels=pixels,
                    lesion_id=f"synles_{c}_{i:04d}",
                )
            )
    return samples


def write_dataset(samples: list[LabeledSample], out_dir) -> Path:
    """Write samples as PNGs plus a manifest.csv in the HAM10000 layout."""
    from PIL import Image

    out_dir = Path(out_dir)
    image_dir = out_dir / "images"
    image_dir.mkdir(parents=True, exist_ok=True)
    manifest = out_dir / "manifest.csv"
    with open(manifest, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image_id", "dx", "lesion_id"])
        for s in samples:
            Image.fromarray(s.load_pixels()).save(image_dir / f"{s.image_id}.png")
            writer.writerow([s.image_id, CODE_FOR_CLASS[s.class_id], s.lesion_id or ""])
    return manifest


def find_manifest(data_dir) -> tuple[Path, Path]:
    """Locate (manifest csv, image dir) under a dataset directory."""
    data_dir = Path(data_dir)
    if data_dir.is_file():
        return data_dir, data_dir.parent / "images"
    candidates = sorted(data_dir.glob("*.csv"))
    preferred = [p for p in candidates if p.name in ("manifest.csv", "HAM10000_metadata.csv")]
    if preferred:
        manifest = preferred[0]
    elif candidates:
        manifest = candidates[0]
    else:
        raise DatasetError(f"no manifest csv found in {data_dir}")
    image_dir = data_dir / "images"
    if not image_dir.is_dir():
        image_dir = data_dir
    return manifest, image_dir


def samples_digest(samples: list[LabeledSample]) -> str:
    """Stable fingerprint of sample identities and pixel content."""
    h = hashlib.sha1()
    for s in samples:
        h.update(s.image_id.encode())
        h.update(bytes([s.class_id]))
        if s.pixels is not None:
            h.update(s.pixels.tobytes())
        elif s.path:
            h.update(s.path.encode())
            h.update(str(os.path.getsize(s.path)).encode())
    return h.hexdigest()[:16]
