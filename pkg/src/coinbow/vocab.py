"""Feature subsampling, k-means vocabularies, and visual-word assignment."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.distance import cdist

from .core import ValidationError, atomic_write_text

VOCAB_FORMAT_VERSION = 1


class QuotaShortfallError(ValidationError):
    """An image holds fewer descriptors than its share of the feature budget."""


@dataclass(frozen=True, eq=False)
class Vocabulary:
    """``M`` visual words stored as an (M, dim) centroid array.

    ``wcss_history`` records the objective after every assignment step of the
    run that produced the vocabulary; it is not persisted.
    """

    centroids: np.ndarray
    wcss_history: tuple[float, ...] = field(default=(), repr=False)

    def __post_init__(self):
        c = np.array(self.centroids, dtype=np.float64, copy=True)
        if c.ndim != 2 or c.shape[0] < 1:
            raise ValidationError("a vocabulary needs at least one centroid")
        if not np.all(np.isfinite(c)):
            raise ValidationError("centroids must be finite")
        c.flags.writeable = False
        object.__setattr__(self, "centroids", c)

    @property
    def size(self) -> int:
        return self.centroids.shape[0]

    M = size

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]

    def to_json(self) -> dict:
        return {
            "format_version": VOCAB_FORMAT_VERSION,
            "M": self.size,
            "dim": self.dim,
            "centroids": self.centroids.tolist(),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "Vocabulary":
        if doc.get("format_version") != VOCAB_FORMAT_VERSION:
            raise ValidationError(f"unsupported vocabulary format_version {doc.get('format_version')!r}")
        c = np.asarray(doc["centroids"], dtype=np.float64)
        if c.shape != (doc["M"], doc["dim"]):
            raise ValidationError(f"centroid array shape {c.shape} disagrees with M={doc['M']}, dim={doc['dim']}")
        return cls(c)


def save_vocabulary(vocab: Vocabulary, path) -> None:
    atomic_write_text(path, json.dumps(vocab.to_json()))


def load_vocabulary(path) -> Vocabulary:
    return Vocabulary.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass(frozen=True)
class SubsampleSpec:
    total: int
    seed: int = 0


def image_quotas(total: int, n_images: int) -> list[int]:
    """Equal share per image, remainder one each to the first images."""
    q, r = divmod(total, n_images)
    return [q + 1 if i < r else q for i in range(n_images)]


def _image_rng(seed: int, index: int) -> np.random.Generator:
    # Philox is counter-based; the key is derived from (seed, image index)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed & (2**64 - 1), index])))


def subsample_features(per_image, spec: SubsampleSpec, names=None) -> np.ndarray:
    """Draw ``spec.total`` descriptors with an equal quota from every image.

    ``per_image`` is a sequence of (n_i, dim) arrays. ``names`` labels images in
    shortfall errors.
    """
    n = len(per_image)
    if n == 0:
        raise ValidationError("no images to subsample from")
    if spec.total < n:
        raise QuotaShortfallError(
            f"feature budget {spec.total} is smaller than the number of training images ({n})"
        )
    quotas = image_quotas(spec.total, n)
    picked = []
    for i, (feats, quota) in enumerate(zip(per_image, quotas)):
        feats = np.asarray(feats, dtype=np.float64)
        if len(feats) < quota:
            name = names[i] if names is not None else f"image #{i}"
            raise QuotaShortfallError(f"{name} has {len(feats)} descriptors but its quota is {quota}")
        idx = _image_rng(spec.seed, i).choice(len(feats), size=quota, replace=False)
        picked.append(feats[idx])
    return np.concatenate(picked, axis=0)


def wcss(features: np.ndarray, centroids: np.ndarray, labels: np.ndarray) -> float:
    diff = features - centroids[labels]
    return float(np.sum(diff * diff))


def _kmeanspp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(x)
    chosen = [int(rng.integers(n))]
    d2 = cdist(x, x[chosen], "sqeuclidean")[:, 0]
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            raise ValidationError("k-means++ ran out of distinct points")
        # inverse-CDF draw keeps the choice reproducible across numpy versions
        u = rng.random() * total
        j = int(np.searchsorted(np.cumsum(d2), u, side="right"))
        j = min(j, n - 1)
        while d2[j] == 0:
            j -= 1
        chosen.append(j)
        d2 = np.minimum(d2, cdist(x, x[j : j + 1], "sqeuclidean")[:, 0])
    return x[chosen].copy()


def _means(x: np.ndarray, labels: np.ndarray, k: int):
    sums = np.zeros((k, x.shape[1]))
    np.add.at(sums, labels, x)
    counts = np.bincount(labels, minlength=k)
    return sums, counts


def _hartigan_polish(x, centroids, labels, history, max_moves):
    """Apply single-point moves that lower WCSS until none remain.

    A Lloyd fixed point can still admit such moves, because moving a point also
    shifts both affected means.
    """
    k = len(centroids)
    sums, counts = _means(x, labels, k)
    centroids = sums / np.maximum(counts, 1)[:, None]
    d = cdist(x, centroids, "sqeuclidean")
    for _ in range(max_moves):
        n_a = counts[labels]
        own = d[np.arange(len(x)), labels]
        removal = n_a / np.maximum(n_a - 1, 1) * own
        gain = removal[:, None] - counts / (counts + 1.0) * d
        gain[np.arange(len(x)), labels] = -np.inf
        gain[n_a == 1] = -np.inf  # never empty a cluster
        i, b = np.unravel_index(np.argmax(gain), gain.shape)
        if not gain[i, b] > 1e-12 * max(1.0, history[-1]):
            break
        a = labels[i]
        sums[a] -= x[i]
        sums[b] += x[i]
        counts[a] -= 1
        counts[b] += 1
        labels[i] = b
        for j in (a, b):
            centroids[j] = sums[j] / counts[j]
            d[:, j] = cdist(x, centroids[j : j + 1], "sqeuclidean")[:, 0]
        history.append(wcss(x, centroids, labels))
    # exact means of the final partition
    sums, counts = _means(x, labels, k)
    centroids = sums / counts[:, None]
    return centroids, labels


def kmeans(
    features,
    k: int,
    seed: int = 0,
    max_iter: int = 100,
    tol: float = 1e-4,
    polish: bool = True,
    return_labels: bool = False,
):
    """Cluster descriptors into ``k`` words (k-means++ seeding, Lloyd updates).

    Ties in assignment go to the lowest centroid index. An emptied cluster is
    re-seeded with the point farthest from its current centroid. Iteration
    stops once no centroid moves by ``tol`` or more, or after ``max_iter``
    rounds; with ``polish`` the partition is then refined by improving
    single-point moves. Centroids keep their initialization order.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or len(x) == 0:
        raise ValidationError("k-means needs a non-empty (n, dim) feature array")
    if not np.all(np.isfinite(x)):
        raise ValidationError("features must be finite")
    if k < 1:
        raise ValidationError("k must be >= 1")
    n_distinct = len(np.unique(x, axis=0))
    if k > n_distinct:
        raise ValidationError(f"k={k} exceeds the number of distinct points ({n_distinct})")

    rng = np.random.Generator(np.random.PCG64(seed & (2**64 - 1)))
    centroids = _kmeanspp(x, k, rng)
    history: list[float] = []
    labels = np.zeros(len(x), dtype=np.intp)
    for _ in range(max_iter):
        d = cdist(x, centroids, "sqeuclidean")
        labels = np.argmin(d, axis=1)
        history.append(float(d[np.arange(len(x)), labels].sum()))
        sums, counts = _means(x, labels, k)
        new = centroids.copy()
        nonempty = counts > 0
        new[nonempty] = sums[nonempty] / counts[nonempty, None]
        empty = np.flatnonzero(~nonempty)
        if len(empty):
            far = d[np.arange(len(x)), labels].copy()
            for j in empty:
                i = int(np.argmax(far))
                new[j] = x[i]
                far[i] = -1.0
        shift = float(np.max(np.sqrt(np.sum((new - centroids) ** 2, axis=1))))
        centroids = new
        if shift < tol:
            break

    d = cdist(x, centroids, "sqeuclidean")
    labels = np.argmin(d, axis=1)
    history.append(float(d[np.arange(len(x)), labels].sum()))
    if polish and k > 1:
        counts = np.bincount(labels, minlength=k)
        if np.all(counts > 0):
            centroids, labels = _hartigan_polish(x, centroids, labels, history, max_moves=10 * len(x))
            history.append(wcss(x, centroids, labels))
    vocab = Vocabulary(centroids, wcss_history=tuple(history))
    if return_labels:
        return vocab, labels
    return vocab


def assign_words(descriptors, vocab: Vocabulary) -> np.ndarray:
    """Nearest centroid (Euclidean) for each row; ties go to the lowest index."""
    d = np.asarray(descriptors, dtype=np.float64)
    if d.ndim == 1:
        d = d[None, :]
    if d.shape[1] != vocab.dim:
        raise ValidationError(f"descriptor dimension {d.shape[1]} does not match vocabulary dimension {vocab.dim}")
    if len(d) == 0:
        return np.zeros(0, dtype=np.intp)
    return np.argmin(cdist(d, vocab.centroids, "sqeuclidean"), axis=1)


def assign_word(descriptor, vocab: Vocabulary) -> int:
    descriptor = np.asarray(descriptor, dtype=np.float64)
    if descriptor.ndim != 1:
        raise ValidationError("assign_word takes a single descriptor")
    return int(assign_words(descriptor, vocab)[0])

