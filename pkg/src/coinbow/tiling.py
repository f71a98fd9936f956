"""Spatially tiled bag-of-words histograms.

Four layouts are supported: a single global histogram, 2x2 quadrants,
log-polar sectors, and concentric rings. Region histograms are concatenated
region-major (all M words of region 0, then region 1, ...) and the result is
L1-normalized.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import ValidationError, atomic_write_text

OUTSIDE = -1
FEATURE_FORMAT_VERSION = 1
KINDS = ("global", "rectangular", "logpolar", "circular")


@dataclass(frozen=True)
class TilingScheme:
    kind: str = "global"
    rings: int = 3
    orientations: int = 4

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown tiling {self.kind!r}; expected one of {KINDS}")
        if self.rings < 1 or self.orientations < 1:
            raise ValidationError("rings and orientations must be >= 1")

    @classmethod
    def global_(cls):
        return cls("global")

    @classmethod
    def rectangular(cls):
        return cls("rectangular")

    @classmethod
    def logpolar(cls, r: int = 3, theta: int = 4):
        return cls("logpolar", rings=r, orientations=theta)

    @classmethod
    def circular(cls, r: int = 3):
        return cls("circular", rings=r)

    @classmethod
    def parse(cls, text: str) -> "TilingScheme":
        """Parse ``global``, ``rectangular``, ``logpolar[:r:theta]`` or ``circular[:r]``."""
        name, *args = text.strip().lower().split(":")
        name = {"rect": "rectangular", "log-polar": "logpolar", "polar": "logpolar", "circle": "circular"}.get(name, name)
        nums = [int(a) for a in args]
        if name == "logpolar":
            return cls.logpolar(*nums)
        if name == "circular":
            return cls.circular(*nums)
        if nums:
            raise ValidationError(f"tiling {name!r} takes no parameters")
        return cls(name)

    @property
    def n_regions(self) -> int:
        return {
            "global": 1,
            "rectangular": 4,
            "logpolar": self.rings * self.orientations,
            "circular": self.rings,
        }[self.kind]

    @property
    def label(self) -> str:
        """Short name used in result tables."""
        if self.kind == "logpolar" and (self.rings, self.orientations) != (3, 4):
            return f"logpolar:{self.rings}:{self.orientations}"
        if self.kind == "circular" and self.rings != 3:
            return f"circular:{self.rings}"
        return self.kind

    def vector_length(self, M: int) -> int:
        return M * self.n_regions

    def to_json(self) -> dict:
        return {"kind": self.kind, "r": self.rings, "theta": self.orientations}

    @classmethod
    def from_json(cls, doc: dict) -> "TilingScheme":
        return cls(doc["kind"], rings=int(doc.get("r", 3)), orientations=int(doc.get("theta", 4)))


def _check_point(x, y, width, height):
    if not (0 <= x < width and 0 <= y < height):
        raise ValidationError(f"point ({x}, {y}) lies outside the {width}x{height} image")


def _polar(x, y, width, height):
    cx, cy = (width - 1) / 2.0, (height - 1) / 2.0
    dx, dy = x - cx, y - cy
    return math.hypot(dx, dy), math.atan2(dy, dx), min(width, height) / 2.0


def region_rectangular(x, y, width, height) -> int:
    _check_point(x, y, width, height)
    return 2 * int(y >= height / 2) + int(x >= width / 2)


def _angular_bin(phi: float, theta: int) -> int:
    if phi < 0:
        phi += 2 * math.pi
    return min(int(math.floor(theta * phi / (2 * math.pi))), theta - 1)


def region_logpolar(x, y, width, height, r: int = 3, theta: int = 4) -> int:
    """Sector index ``radial * theta + angular``, or ``OUTSIDE`` beyond radius R.

    Radial edges sit at R/2^(r-1), ..., R/2, R; angular bin 0 starts on +x.
    """
    _check_point(x, y, width, height)
    dist, phi, R = _polar(x, y, width, height)
    if dist >= R:
        return OUTSIDE
    radial = next(i for i in range(r) if dist < R * 2.0 ** (i + 1 - r))
    if dist == 0:
        return radial * theta
    return radial * theta + _angular_bin(phi, theta)


def region_circular(x, y, width, height, r: int = 3) -> int:
    """Ring index for equally spaced radii R/r, 2R/r, ..., R; ``OUTSIDE`` beyond R."""
    _check_point(x, y, width, height)
    dist, _, R = _polar(x, y, width, height)
    if dist >= R:
        return OUTSIDE
    return next(i for i in range(r) if dist < R * (i + 1) / r)


def region_indices(xy, width: int, height: int, scheme: TilingScheme) -> np.ndarray:
    """Vectorized region lookup for an (N, 2) array of locations."""
    xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
    x, y = xy[:, 0], xy[:, 1]
    if np.any((x < 0) | (x >= width) | (y < 0) | (y >= height)) or not np.all(np.isfinite(xy)):
        raise ValidationError(f"locations must lie inside the {width}x{height} image")
    if scheme.kind == "global":
        return np.zeros(len(xy), dtype=np.intp)
    if scheme.kind == "rectangular":
        return (2 * (y >= height / 2) + (x >= width / 2)).astype(np.intp)

    cx, cy = (width - 1) / 2.0, (height - 1) / 2.0
    dx, dy = x - cx, y - cy
    dist = np.hypot(dx, dy)
    R = min(width, height) / 2.0
    r = scheme.rings
    out = np.full(len(xy), OUTSIDE, dtype=np.intp)
    inside = dist < R
    if scheme.kind == "circular":
        edges = np.array([R * (i + 1) / r for i in range(r)])
        out[inside] = np.searchsorted(edges, dist[inside], side="right")
        return out
    edges = np.array([R * 2.0 ** (i + 1 - r) for i in range(r)])
    radial = np.searchsorted(edges, dist, side="right")
    phi = np.arctan2(dy, dx)
    phi = np.where(phi < 0, phi + 2 * np.pi, phi)
    theta = scheme.orientations
    ang = np.minimum(np.floor(theta * phi / (2 * np.pi)).astype(np.intp), theta - 1)
    ang = np.where(dist == 0, 0, ang)
    out[inside] = (radial * theta + ang)[inside]
    return out


def raw_histogram(xy, words, width: int, height: int, M: int, scheme: TilingScheme) -> np.ndarray:
    """Un-normalized region-major word counts; points outside the tiling are dropped."""
    words = np.asarray(words, dtype=np.intp).reshape(-1)
    xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
    if len(words) != len(xy):
        raise ValidationError("need one word per location")
    if len(words) and (words.min() < 0 or words.max() >= M):
        raise ValidationError(f"word indices must lie in [0, {M})")
    regions = region_indices(xy, width, height, scheme)
    keep = regions != OUTSIDE
    flat = regions[keep] * M + words[keep]
    return np.bincount(flat, minlength=scheme.vector_length(M)).astype(np.float64)


def l1_normalize(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    total = v.sum()
    return v / total if total > 0 else v.copy()


@dataclass(frozen=True, eq=False)
class TiledFeatureVector:
    values: np.ndarray
    scheme: TilingScheme
    M: int

    def __post_init__(self):
        if len(self.values) != self.scheme.vector_length(self.M):
            raise ValidationError(
                f"vector length {len(self.values)} does not match {self.scheme.label} with M={self.M}"
            )

    def __len__(self):
        return len(self.values)

    def to_json(self) -> dict:
        return {
            "format_version": FEATURE_FORMAT_VERSION,
            "scheme": self.scheme.kind,
            "M": self.M,
            "r": self.scheme.rings,
            "theta": self.scheme.orientations,
            "values": [float(v) for v in self.values],
        }

    @classmethod
    def from_json(cls, doc: dict) -> "TiledFeatureVector":
        if doc.get("format_version") != FEATURE_FORMAT_VERSION:
            raise ValidationError(f"unsupported feature format_version {doc.get('format_version')!r}")
        scheme = TilingScheme(doc["scheme"], rings=int(doc["r"]), orientations=int(doc["theta"]))
        return cls(np.asarray(doc["values"], dtype=np.float64), scheme, int(doc["M"]))


def encode(assignments, width: int, height: int, M: int, scheme: TilingScheme) -> TiledFeatureVector:
    """Histogram ``(x, y, word)`` triples under ``scheme`` and L1-normalize."""
    a = np.asarray(assignments, dtype=np.float64).reshape(-1, 3)
    words = a[:, 2]
    if np.any(words != np.floor(words)):
        raise ValidationError("word indices must be integers")
    raw = raw_histogram(a[:, :2], words.astype(np.intp), width, height, M, scheme)
    return TiledFeatureVector(l1_normalize(raw), scheme, M)


def encode_words(xy, words, width: int, height: int, M: int, scheme: TilingScheme) -> np.ndarray:
    """Same as :func:`encode` but takes locations and words separately and returns the array."""
    return l1_normalize(raw_histogram(xy, words, width, height, M, scheme))


def save_feature(vec: TiledFeatureVector, path) -> None:
    atomic_write_text(path, json.dumps(vec.to_json()))


def load_feature(path) -> TiledFeatureVector:
    return TiledFeatureVector.from_json(json.loads(Path(path).read_text(encoding="utf-8")))
