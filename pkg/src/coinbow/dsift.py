"""Dense, upright, single-scale SIFT descriptors on a regular grid."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import GrayImage, ValidationError, atomic_write_bytes

DESCRIPTOR_DIM = 128
CLAMP = 0.2
DEGENERATE_NORM = 1e-10


@dataclass(frozen=True)
class DenseSiftParams:
    step: int = 8
    patch: int = 16
    orientation_bins: int = 8
    spatial_bins: int = 4

    def __post_init__(self):
        if self.step <= 0:
            raise ValidationError("step must be positive")
        if self.patch < 4 or self.patch % 4:
            raise ValidationError("patch must be a positive multiple of 4")
        if self.orientation_bins != 8 or self.spatial_bins != 4:
            raise ValidationError("descriptor layout is fixed at 4x4 spatial x 8 orientation bins")

    @property
    def dim(self) -> int:
        return self.spatial_bins**2 * self.orientation_bins


@dataclass(frozen=True, eq=False)
class DenseFeatures:
    """Descriptors of one image: ``xy`` is (N, 2) patch centers, ``descriptors`` (N, 128)."""

    xy: np.ndarray
    descriptors: np.ndarray

    def __len__(self):
        return len(self.xy)

    def __getitem__(self, i):
        return KeypointDescriptor(float(self.xy[i, 0]), float(self.xy[i, 1]), self.descriptors[i])


@dataclass(frozen=True, eq=False)
class KeypointDescriptor:
    x: float
    y: float
    descriptor: np.ndarray


def dense_grid(width: int, height: int, params: DenseSiftParams) -> list[tuple[int, int]]:
    """Patch centers, row-major (y outer, x inner); empty if the patch does not fit."""
    p, s = params.patch, params.step
    if width < p or height < p:
        return []
    xs = [p // 2 + i * s for i in range((width - p) // s + 1)]
    ys = [p // 2 + j * s for j in range((height - p) // s + 1)]
    return [(x, y) for y in ys for x in xs]


def image_gradients(px: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Central differences with replicated borders, returned as (d/dx, d/dy)."""
    padded = np.pad(px, 1, mode="edge")
    gx = (padded[1:-1, 2:] - padded[1:-1, :-2]) * 0.5
    gy = (padded[2:, 1:-1] - padded[:-2, 1:-1]) * 0.5
    return gx, gy


def _spatial_weights(params: DenseSiftParams) -> np.ndarray:
    """(16, patch*patch) bilinear weights of each patch pixel into each spatial cell,
    already multiplied by the Gaussian window."""
    p, nb = params.patch, params.spatial_bins
    offs = np.arange(p) - p / 2.0 + 0.5  # pixel center relative to patch center
    cell = (offs + p / 2.0) / (p / nb) - 0.5  # fractional cell coordinate, cells centered at 0..nb-1
    w1d = np.maximum(0.0, 1.0 - np.abs(cell[None, :] - np.arange(nb)[:, None]))  # (nb, p)
    sigma = p / 2.0
    g1d = np.exp(-(offs**2) / (2.0 * sigma**2))
    # rows: cell (cy, cx); columns: pixel (v, u) row-major
    wg = w1d * g1d[None, :]
    w = np.einsum("av,bu->abvu", wg, wg)
    return w.reshape(nb * nb, p * p)


def _orientation_split(theta: np.ndarray, nbins: int):
    pos = theta * (nbins / (2.0 * np.pi))
    lo = np.floor(pos)
    frac = pos - lo
    lo = lo.astype(np.intp) % nbins
    return lo, (lo + 1) % nbins, 1.0 - frac, frac


def normalize_descriptor(v: np.ndarray) -> np.ndarray:
    """L2-normalize, clamp at 0.2, renormalize, clamp again; near-zero input gives zeros."""
    v = np.asarray(v, dtype=np.float64)
    norm = np.sqrt(np.sum(v * v, axis=-1, keepdims=True))
    ok = norm >= DEGENERATE_NORM
    out = np.where(ok, v / np.where(ok, norm, 1.0), 0.0)
    out = np.minimum(out, CLAMP)
    norm2 = np.sqrt(np.sum(out * out, axis=-1, keepdims=True))
    out = np.where(norm2 > 0, out / np.where(norm2 > 0, norm2, 1.0), 0.0)
    # renormalizing lifts clamped entries above 0.2 again; a last clamp keeps
    # the bound (the norm can then fall slightly below 1)
    return np.minimum(out, CLAMP)


def _describe(gx, gy, centers, params: DenseSiftParams) -> np.ndarray:
    p, nb, no = params.patch, params.spatial_bins, params.orientation_bins
    if len(centers) == 0:
        return np.zeros((0, DESCRIPTOR_DIM))
    centers = np.asarray(centers, dtype=np.intp)
    mag = np.hypot(gx, gy)
    theta = np.mod(np.arctan2(gy, gx), 2.0 * np.pi)
    lo, hi, wlo, whi = _orientation_split(theta, no)

    half = p // 2
    ii = np.arange(p) - half
    rows = centers[:, 1, None, None] + ii[None, :, None]
    cols = centers[:, 0, None, None] + ii[None, None, :]
    n = len(centers)
    m = mag[rows, cols].reshape(n, p * p)
    onehot = np.eye(no)
    orient = (
        onehot[lo[rows, cols].reshape(n, p * p)] * wlo[rows, cols].reshape(n, p * p, 1)
        + onehot[hi[rows, cols].reshape(n, p * p)] * whi[rows, cols].reshape(n, p * p, 1)
    )
    orient *= m[:, :, None]
    hist = np.einsum("sq,nqo->nso", _spatial_weights(params), orient)
    return normalize_descriptor(hist.reshape(n, nb * nb * no))


def compute_descriptor(img: GrayImage, center, params: DenseSiftParams = DenseSiftParams()) -> np.ndarray:
    """128-D upright SIFT descriptor of the patch centered at ``center``.

    Layout is (cell row, cell column, orientation) flattened row-major; the
    orientation of a gradient is ``atan2(gy, gx)`` in pixel coordinates.
    """
    x, y = center
    half = params.patch // 2
    if x - half < 0 or y - half < 0 or x + half > img.width or y + half > img.height:
        raise ValidationError(f"patch at {center} does not fit in a {img.width}x{img.height} image")
    gx, gy = image_gradients(img.pixels)
    return _describe(gx, gy, [(int(x), int(y))], params)[0]


def extract_dense_sift(img: GrayImage, params: DenseSiftParams = DenseSiftParams()) -> DenseFeatures:
    centers = dense_grid(img.width, img.height, params)
    gx, gy = image_gradients(img.pixels)
    desc = _describe(gx, gy, centers, params)
    xy = np.asarray(centers, dtype=np.float64).reshape(-1, 2)
    return DenseFeatures(xy, desc)


_HEADER = struct.Struct("<I")


def encode_dsift(features: DenseFeatures) -> bytes:
    n = len(features)
    rec = np.empty((n, 2 + DESCRIPTOR_DIM), dtype="<f4")
    rec[:, :2] = features.xy
    rec[:, 2:] = features.descriptors
    return _HEADER.pack(n) + rec.tobytes()


def decode_dsift(data: bytes) -> DenseFeatures:
    if len(data) < _HEADER.size:
        raise ValidationError("truncated .dsift record")
    (n,) = _HEADER.unpack_from(data)
    body = np.frombuffer(data, dtype="<f4", offset=_HEADER.size)
    if body.size != n * (2 + DESCRIPTOR_DIM):
        raise ValidationError(f".dsift record declares {n} descriptors but holds {body.size} floats")
    rec = body.reshape(n, 2 + DESCRIPTOR_DIM).astype(np.float64)
    return DenseFeatures(rec[:, :2].copy(), rec[:, 2:].copy())


def save_dsift(features: DenseFeatures, path) -> None:
    atomic_write_bytes(path, encode_dsift(features))


def load_dsift(path) -> DenseFeatures:
    return decode_dsift(Path(path).read_bytes())
