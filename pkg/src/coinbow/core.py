"""Grayscale images, loading, rotation, and dataset manifests."""

from __future__ import annotations

import csv
import io
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")
_LUMA = np.array([299.0, 587.0, 114.0])  # per-mille weights keep white exactly 1.0


class ValidationError(ValueError):
    """Raised when an input violates a documented precondition."""


class ImageFormatError(ValidationError):
    """Raised for images that are not decodable PNG or JPEG files."""


@dataclass(frozen=True, eq=False)
class GrayImage:
    """Single-channel raster with intensities in [0, 1].

    ``pixels`` is stored row-major as a read-only ``(height, width)`` float64
    array, so ``pixels[y, x]`` addresses column ``x`` of row ``y``.
    """

    pixels: np.ndarray

    def __post_init__(self):
        px = np.array(self.pixels, dtype=np.float64, copy=True)
        if px.ndim != 2 or px.shape[0] < 1 or px.shape[1] < 1:
            raise ValidationError(f"image must be a non-empty 2-D array, got shape {px.shape}")
        if not np.all(np.isfinite(px)) or px.min() < 0.0 or px.max() > 1.0:
            raise ValidationError("intensities must be finite and lie in [0, 1]")
        px.flags.writeable = False
        object.__setattr__(self, "pixels", px)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def center(self) -> tuple[float, float]:
        return ((self.width - 1) / 2.0, (self.height - 1) / 2.0)

    def __eq__(self, other):
        if not isinstance(other, GrayImage):
            return NotImplemented
        return self.pixels.shape == other.pixels.shape and bool(np.array_equal(self.pixels, other.pixels))

    __hash__ = None


def _to_gray(img: Image.Image) -> np.ndarray:
    if img.mode in ("I;16", "I;16B", "I;16L", "I"):
        arr = np.asarray(img, dtype=np.float64)
        scale = 65535.0 if img.mode.startswith("I;16") else max(float(arr.max()), 1.0)
        return arr / scale
    if img.mode == "F":
        return np.asarray(img, dtype=np.float64)
    if img.mode in ("1", "L"):
        return np.asarray(img.convert("L"), dtype=np.float64) / 255.0
    if img.mode == "LA":
        return np.asarray(img.getchannel("L"), dtype=np.float64) / 255.0
    rgb = np.asarray(img.convert("RGB"), dtype=np.float64)
    return (rgb @ _LUMA) / 255000.0


def load_grayscale(path, max_side: int | None = None) -> GrayImage:
    """Decode a PNG/JPEG file into a :class:`GrayImage`.

    Color is reduced with luma weights 0.299/0.587/0.114. When ``max_side`` is
    given and the longer side exceeds it, the image is bilinearly shrunk so the
    longer side equals ``max_side``.
    """
    path = Path(path)
    data = path.read_bytes()
    try:
        img = Image.open(io.BytesIO(data))
        img.load()
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise ImageFormatError(f"{path}: cannot decode image ({exc})") from exc
    if img.format not in ("PNG", "JPEG"):
        raise ImageFormatError(f"{path}: unsupported format {img.format!r}")
    if img.width < 1 or img.height < 1:
        raise ValidationError(f"{path}: zero-dimension image")

    gray = _to_gray(img)
    if max_side is not None:
        if max_side < 1:
            raise ValidationError("max_side must be >= 1")
        h, w = gray.shape
        if max(w, h) > max_side:
            scale = max_side / max(w, h)
            nw = max_side if w >= h else max(1, int(round(w * scale)))
            nh = max_side if h > w else max(1, int(round(h * scale)))
            resized = Image.fromarray(gray.astype(np.float32), mode="F").resize(
                (nw, nh), Image.Resampling.BILINEAR
            )
            gray = np.asarray(resized, dtype=np.float64)
    return GrayImage(np.clip(gray, 0.0, 1.0))


def save_grayscale(img: GrayImage, path) -> None:
    """Write an 8-bit grayscale PNG."""
    arr = np.round(img.pixels * 255.0).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(arr, mode="L").save(buf, format="PNG")
    atomic_write_bytes(path, buf.getvalue())


def rotate_points(xy, angle: float, center) -> np.ndarray:
    """Rotate ``(x, y)`` locations by ``angle`` about ``center``.

    Angles follow ``atan2(y - cy, x - cx)`` in pixel coordinates, so a positive
    angle turns +x toward +y.
    """
    xy = np.asarray(xy, dtype=np.float64)
    c, s = math.cos(angle), math.sin(angle)
    dx = xy[..., 0] - center[0]
    dy = xy[..., 1] - center[1]
    return np.stack([center[0] + c * dx - s * dy, center[1] + s * dx + c * dy], axis=-1)


def _quarter_turns(angle: float) -> int | None:
    k = round(angle / (math.pi / 2))
    if abs(angle - k * math.pi / 2) <= 1e-12 * max(1.0, abs(angle)):
        return k % 4
    return None


def rotate_about_center(img: GrayImage, angle: float) -> GrayImage:
    """Rotate ``img`` by ``angle`` radians about its pixel center.

    Multiples of pi/2 that keep the frame (square images, or half turns) are
    exact index permutations. Other angles use bilinear sampling of the
    inverse-rotated coordinate with zero fill outside the source.
    """
    if not math.isfinite(angle):
        raise ValidationError("angle must be finite")
    px = img.pixels
    k = _quarter_turns(angle)
    if k is not None and (k % 2 == 0 or img.width == img.height):
        # np.rot90 turns +x toward -y for k > 0; our convention is the opposite
        return GrayImage(np.rot90(px, -k))

    h, w = px.shape
    cx, cy = img.center
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    c, s = math.cos(angle), math.sin(angle)
    dx, dy = xs - cx, ys - cy
    sx = cx + c * dx + s * dy
    sy = cy - s * dx + c * dy
    return GrayImage(bilinear_sample(px, sx, sy))


def bilinear_sample(px: np.ndarray, sx: np.ndarray, sy: np.ndarray) -> np.ndarray:
    """Sample ``px`` at float coordinates; points outside the raster give 0."""
    h, w = px.shape
    inside = (sx >= 0) & (sx <= w - 1) & (sy >= 0) & (sy <= h - 1)
    x0 = np.clip(np.floor(sx), 0, max(w - 2, 0)).astype(np.intp)
    y0 = np.clip(np.floor(sy), 0, max(h - 2, 0)).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = np.clip(sx - x0, 0.0, 1.0)
    fy = np.clip(sy - y0, 0.0, 1.0)
    top = px[y0, x0] * (1 - fx) + px[y0, x1] * fx
    bottom = px[y1, x0] * (1 - fx) + px[y1, x1] * fx
    out = top * (1 - fy) + bottom * fy
    return np.where(inside, np.clip(out, 0.0, 1.0), 0.0)


@dataclass(frozen=True)
class DatasetManifest:
    """Ordered (image path, label) pairs with their distinct label set."""

    entries: tuple[tuple[str, str], ...]
    labels: tuple[str, ...] = field(default=())
    # a full dataset needs 2 images per label to be split; split halves need 1
    min_per_label: int = field(default=2, compare=False)

    def __post_init__(self):
        entries = tuple((str(p), str(lbl)) for p, lbl in self.entries)
        labels = tuple(self.labels) or tuple(sorted({lbl for _, lbl in entries}))
        object.__setattr__(self, "entries", entries)
        object.__setattr__(self, "labels", labels)
        if len(set(labels)) != len(labels):
            raise ValidationError("label set contains duplicates")
        unknown = {lbl for _, lbl in entries} - set(labels)
        if unknown:
            raise ValidationError(f"entries use labels missing from the label set: {sorted(unknown)}")
        if len(labels) < 2:
            raise ValidationError("a dataset needs at least two labels")
        counts = self.counts()
        thin = [lbl for lbl in labels if counts[lbl] < self.min_per_label]
        if thin:
            raise ValidationError(f"labels with fewer than {self.min_per_label} images: {thin}")

    def __len__(self):
        return len(self.entries)

    @property
    def paths(self) -> list[str]:
        return [p for p, _ in self.entries]

    @property
    def targets(self) -> list[str]:
        return [lbl for _, lbl in self.entries]

    def counts(self) -> dict[str, int]:
        out = {lbl: 0 for lbl in self.labels}
        for _, lbl in self.entries:
            out[lbl] += 1
        return out


def scan_dataset(root) -> DatasetManifest:
    """Build a manifest from ``root/<label>/<image>`` in lexicographic path order."""
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset root {root} is not a directory")
    entries = []
    for sub in sorted(p for p in root.iterdir() if p.is_dir()):
        for f in sorted(sub.iterdir()):
            if f.is_file() and f.suffix.lower() in IMAGE_SUFFIXES:
                entries.append((str(f), sub.name))
    entries.sort(key=lambda e: e[0])
    return DatasetManifest(tuple(entries))


def read_manifest_csv(path) -> DatasetManifest:
    """Read a ``path,label`` CSV; relative paths resolve against the CSV's folder."""
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != ["path", "label"]:
            raise ValidationError(f"{path}: expected header 'path,label'")
        entries = []
        for row in reader:
            p = Path(row["path"])
            if not p.is_absolute():
                p = path.parent / p
            entries.append((str(p), row["label"]))
    return DatasetManifest(tuple(entries))


def write_manifest_csv(manifest: DatasetManifest, path, relative_to=None) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["path", "label"])
    for p, lbl in manifest.entries:
        if relative_to is not None:
            p = Path(os.path.relpath(p, relative_to)).as_posix()
        writer.writerow([p, lbl])
    atomic_write_bytes(path, buf.getvalue().encode("utf-8"))


def load_dataset(location) -> DatasetManifest:
    """Accept a dataset directory or a manifest CSV.

    A directory holding ``manifest.csv`` uses that file; otherwise it is scanned.
    """
    location = Path(location)
    if location.is_file():
        return read_manifest_csv(location)
    if (location / "manifest.csv").is_file():
        return read_manifest_csv(location / "manifest.csv")
    return scan_dataset(location)


def atomic_write_bytes(path, data: bytes) -> None:
    """Write via a sibling temp file and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))
