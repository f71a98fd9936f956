"""Synthetic coin-like images: a textured disk with a raised glyph on it.

Glyphs are vector strokes, so rotation is applied to the geometry before
rasterization. Per image the generator draws a rotation, a translation of at
most 5 px, texture and pixel noise, and wear blotches that flatten the relief.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw
from scipy.ndimage import gaussian_filter

from .core import DatasetManifest, GrayImage, ValidationError, save_grayscale, write_manifest_csv

SIZE = 256
SUPERSAMPLE = 4
COIN_RADIUS = 124.0
MAX_SHIFT = 5.0

BACKGROUND = 0.08
FIELD = 0.42
RELIEF = 0.85
RIM = 0.62
STROKE = 0.10  # glyph stroke width as a fraction of the coin radius



def _chords(radius: float, length: float, angles_deg) -> list:
    """Bars tangent to a circle of ``radius``, centered at the given polar angles."""
    out = []
    for deg in angles_deg:
        a = math.radians(deg)
        mx, my = radius * math.cos(a), radius * math.sin(a)
        hx, hy = -math.sin(a) * length / 2, math.cos(a) * length / 2
        out.append([(mx - hx, my - hy), (mx + hx, my + hy)])
    return out


# Every glyph is three identical bars; classes differ in how far from the
# center the bars sit, how they spread around it, and their orientations.
# Coordinates are in coin-radius units with y pointing down. Parts may also be
# ("ring", radius) or ("arc", radius, start_deg, end_deg).
GLYPHS = {
    "glyph-a": _chords(0.20, 0.3, (0, 120, 240)),  # small triangle around the center
    "glyph-b": _chords(0.52, 0.3, (45, 165, 285)),  # wide triangle, turned
    "glyph-c": _chords(0.80, 0.3, (0, 35, 70)),  # bars bunched near the rim
}
LABELS = tuple(GLYPHS)


def _to_canvas(points, angle, cx, cy):
    c, s = math.cos(angle), math.sin(angle)
    return [
        ((cx + (c * u - s * v) * COIN_RADIUS) * SUPERSAMPLE, (cy + (s * u + c * v) * COIN_RADIUS) * SUPERSAMPLE)
        for u, v in points
    ]


def _draw_arc(draw, radius, span, angle, cx, cy, width):
    rad = radius * COIN_RADIUS * SUPERSAMPLE
    ox, oy = cx * SUPERSAMPLE, cy * SUPERSAMPLE
    box = [ox - rad - width / 2, oy - rad - width / 2, ox + rad + width / 2, oy + rad + width / 2]
    start, end = span
    if end - start >= 360.0:
        draw.ellipse(box, outline=255, width=int(round(width)))
        return
    turn = math.degrees(angle)
    draw.arc(box, start + turn, end + turn, fill=255, width=int(round(width)))
    r = width / 2
    for deg in (start + turn, end + turn):
        t = math.radians(deg)
        # round caps sit on the stroke's mid-line
        x = ox + (rad) * math.cos(t)
        y = oy + (rad) * math.sin(t)
        draw.ellipse([x - r, y - r, x + r, y + r], fill=255)


def _stroke_mask(label: str, angle: float, cx: float, cy: float) -> np.ndarray:
    n = SIZE * SUPERSAMPLE
    canvas = Image.new("L", (n, n), 0)
    draw = ImageDraw.Draw(canvas)
    width = STROKE * COIN_RADIUS * SUPERSAMPLE
    for part in GLYPHS[label]:
        if isinstance(part, tuple) and part[0] in ("ring", "arc"):
            _, radius, *span = part
            _draw_arc(draw, radius, span or (0.0, 360.0), angle, cx + 0.5, cy + 0.5, width)
            continue
        pts = _to_canvas(part, angle, cx + 0.5, cy + 0.5)
        draw.line(pts, fill=255, width=int(round(width)), joint="curve")
        r = width / 2
        for x, y in (pts[0], pts[-1]):
            draw.ellipse([x - r, y - r, x + r, y + r], fill=255)
    small = canvas.resize((SIZE, SIZE), Image.Resampling.BOX)
    return np.asarray(small, dtype=np.float64) / 255.0


def _disk(cx, cy, radius) -> np.ndarray:
    """Anti-aliased disk coverage, 4x4 supersampled."""
    offs = (np.arange(SUPERSAMPLE) + 0.5) / SUPERSAMPLE - 0.5
    ys, xs = np.mgrid[0:SIZE, 0:SIZE].astype(np.float64)
    cover = np.zeros((SIZE, SIZE))
    for oy in offs:
        for ox in offs:
            cover += (xs + ox - cx) ** 2 + (ys + oy - cy) ** 2 < radius**2
    return cover / SUPERSAMPLE**2


def render_coin(label: str, angle: float, shift=(0.0, 0.0), noise_level: float = 0.0, rng=None) -> GrayImage:
    """Render one coin image. ``rng`` drives texture, noise and wear; it is
    unused when ``noise_level`` is 0."""
    if label not in GLYPHS:
        raise ValidationError(f"unknown glyph {label!r}")
    cx = (SIZE - 1) / 2.0 + shift[0]
    cy = (SIZE - 1) / 2.0 + shift[1]
    coin = _disk(cx, cy, COIN_RADIUS)
    rim = coin - _disk(cx, cy, COIN_RADIUS - 6.0)
    relief = _stroke_mask(label, angle, cx, cy) * coin

    field = np.full((SIZE, SIZE), FIELD)
    if noise_level > 0:
        texture = gaussian_filter(rng.standard_normal((SIZE, SIZE)), 4.0)
        texture /= texture.std() or 1.0
        field = field + 0.5 * noise_level * texture
    img = BACKGROUND * (1 - coin) + coin * field
    img = img + rim * (RIM - FIELD) + relief * (RELIEF - img)

    if noise_level > 0:
        ys, xs = np.mgrid[0:SIZE, 0:SIZE].astype(np.float64)
        for _ in range(rng.poisson(30.0 * noise_level)):
            rad = rng.uniform(0.0, 0.85) * COIN_RADIUS
            ang = rng.uniform(0, 2 * math.pi)
            bx, by = cx + rad * math.cos(ang), cy + rad * math.sin(ang)
            size = rng.uniform(6.0, 16.0)
            strength = rng.uniform(0.5, 0.9)
            mask = strength * np.exp(-((xs - bx) ** 2 + (ys - by) ** 2) / (2 * size**2)) * coin
            img = img * (1 - mask) + FIELD * mask
        img = img + noise_level * rng.standard_normal((SIZE, SIZE))
    return GrayImage(np.clip(img, 0.0, 1.0))


def generate_synthetic_dataset(
    out_dir,
    n_per_class: int,
    rotation_range: float = 0.0,
    noise_level: float = 0.1,
    seed: int = 0,
) -> DatasetManifest:
    """Write ``n_per_class`` PNGs per glyph under ``out_dir/<label>/`` plus ``manifest.csv``."""
    if n_per_class < 4:
        raise ValidationError("n_per_class must be >= 4")
    if not 0.0 <= noise_level <= 1.0:
        raise ValidationError("noise_level must lie in [0, 1]")
    if rotation_range < 0 or not math.isfinite(rotation_range):
        raise ValidationError("rotation_range must be finite and non-negative")
    out_dir = Path(out_dir)
    entries = []
    for ci, label in enumerate(LABELS):
        for k in range(n_per_class):
            rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed & (2**64 - 1), ci, k])))
            angle = rng.uniform(-rotation_range, rotation_range) if rotation_range > 0 else 0.0
            shift = rng.uniform(-MAX_SHIFT, MAX_SHIFT, size=2)
            img = render_coin(label, angle, tuple(shift), noise_level, rng)
            path = out_dir / label / f"{label}_{k:04d}.png"
            save_grayscale(img, path)
            entries.append((str(path), label))
    manifest = DatasetManifest(tuple(entries), LABELS)
    write_manifest_csv(manifest, out_dir / "manifest.csv", relative_to=out_dir)
    return manifest
