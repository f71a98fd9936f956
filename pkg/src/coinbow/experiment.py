"""Train/test protocol and the vocabulary-size x feature-budget sweep."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .core import DatasetManifest, ValidationError, atomic_write_text, load_grayscale
from .dsift import DenseFeatures, DenseSiftParams, extract_dense_sift
from .svm import DEFAULT_C_GRID, DEFAULT_GAMMA_GRID, grid_search_cv, train_one_vs_all
from .synth import generate_synthetic_dataset  # noqa: F401  (re-exported)
from .tiling import TilingScheme, encode_words
from .vocab import SubsampleSpec, Vocabulary, assign_words, kmeans, subsample_features

log = logging.getLogger(__name__)

FULL_VOCAB_SIZES = (10, 20, 50, 100, 200, 400, 800)
FULL_FEATURE_BUDGETS = (1000, 1500, 2000, 2500, 3000, 3500, 4000)
ALL_TILINGS = (
    TilingScheme.global_(),
    TilingScheme.rectangular(),
    TilingScheme.logpolar(3, 4),
    TilingScheme.circular(3),
)
RESULTS_HEADER = ("tiling", "vocab_size", "feature_budget", "accuracy", "C", "gamma", "seconds")


def derive_seed(master_seed: int, role: str, *parts) -> int:
    """64-bit seed for one random consumer, from the master seed and a role tag."""
    text = ":".join([str(int(master_seed)), role, *(str(p) for p in parts)])
    return int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "little")


@dataclass(frozen=True)
class ExperimentConfig:
    vocab_sizes: tuple[int, ...] = FULL_VOCAB_SIZES
    feature_budgets: tuple[int, ...] = FULL_FEATURE_BUDGETS
    tilings: tuple[TilingScheme, ...] = ALL_TILINGS
    train_fraction: float = 0.7
    n_folds: int = 5
    master_seed: int = 0
    dsift: DenseSiftParams = field(default_factory=DenseSiftParams)
    max_side: int | None = 256
    C_grid: tuple[float, ...] = DEFAULT_C_GRID
    gamma_grid: tuple[float, ...] = DEFAULT_GAMMA_GRID
    svm_tol: float = 1e-3
    kmeans_max_iter: int = 100
    kmeans_tol: float = 1e-4
    record_timing: bool = True

    def __post_init__(self):
        if not self.vocab_sizes or not self.feature_budgets or not self.tilings:
            raise ValidationError("vocab_sizes, feature_budgets and tilings must be non-empty")
        if not 0.0 < self.train_fraction < 1.0:
            raise ValidationError("train_fraction must lie in (0, 1)")
        if self.n_folds < 2:
            raise ValidationError("n_folds must be >= 2")
        if any(v < 1 for v in self.vocab_sizes) or any(b < 1 for b in self.feature_budgets):
            raise ValidationError("vocabulary sizes and feature budgets must be positive")

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        doc = dict(doc)
        known = {f for f in cls.__dataclass_fields__} | {"step", "patch"}
        unknown = set(doc) - known
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        step = doc.pop("step", None)
        patch = doc.pop("patch", None)
        if "dsift" in doc:
            doc["dsift"] = DenseSiftParams(**doc["dsift"])
        if step is not None or patch is not None:
            base = doc.get("dsift", DenseSiftParams())
            doc["dsift"] = replace(base, **{k: v for k, v in (("step", step), ("patch", patch)) if v is not None})
        if "tilings" in doc:
            doc["tilings"] = tuple(t if isinstance(t, TilingScheme) else TilingScheme.parse(t) for t in doc["tilings"])
        for key in ("vocab_sizes", "feature_budgets"):
            if key in doc:
                doc[key] = tuple(int(v) for v in doc[key])
        for key in ("C_grid", "gamma_grid"):
            if key in doc:
                doc[key] = tuple(float(v) for v in doc[key])
        return cls(**doc)

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["tilings"] = [t.label for t in self.tilings]
        return doc


@dataclass(frozen=True)
class ResultRow:
    tiling: str
    vocab_size: int
    feature_budget: int
    accuracy: float
    C: float
    gamma: float
    seconds: float


def stratified_split(manifest: DatasetManifest, train_fraction: float, seed: int):
    """Per label, ceil(fraction * n) images go to train, capped at n - 1."""
    if not 0.0 < train_fraction < 1.0:
        raise ValidationError("train_fraction must lie in (0, 1)")
    rng = np.random.Generator(np.random.PCG64(seed & (2**64 - 1)))
    train, test = [], []
    for lbl in manifest.labels:
        items = [e for e in manifest.entries if e[1] == lbl]
        if len(items) < 2:
            raise ValidationError(f"label {lbl!r} has fewer than 2 images")
        n_train = min(math.ceil(train_fraction * len(items) - 1e-9), len(items) - 1)
        order = rng.permutation(len(items))
        train.extend(items[i] for i in sorted(order[:n_train]))
        test.extend(items[i] for i in sorted(order[n_train:]))
    return (
        DatasetManifest(tuple(train), manifest.labels, min_per_label=1),
        DatasetManifest(tuple(test), manifest.labels, min_per_label=1),
    )


@dataclass
class _ImageFeatures:
    width: int
    height: int
    features: DenseFeatures


class FeatureCache:
    """Memoizes per-image dense SIFT and, for one vocabulary at a time, word maps."""

    def __init__(self, params: DenseSiftParams = DenseSiftParams(), max_side: int | None = 256):
        self.params = params
        self.max_side = max_side
        self._images: dict[str, _ImageFeatures] = {}
        self._vocabs: dict[tuple, Vocabulary] = {}
        self._words: dict[tuple, np.ndarray] = {}

    def image(self, path: str) -> _ImageFeatures:
        hit = self._images.get(path)
        if hit is None:
            img = load_grayscale(path, self.max_side)
            hit = _ImageFeatures(img.width, img.height, extract_dense_sift(img, self.params))
            self._images[path] = hit
        return hit

    def vocabulary(self, train: DatasetManifest, vocab_size: int, budget: int, cfg: ExperimentConfig) -> Vocabulary:
        key = (train.entries, vocab_size, budget)
        vocab = self._vocabs.get(key)
        if vocab is None:
            vocab = build_vocabulary(train, vocab_size, budget, cfg, self)
            self._vocabs = {key: vocab}
            self._words = {}
        return vocab

    def words(self, path: str, vocab: Vocabulary) -> np.ndarray:
        key = (path, id(vocab))
        w = self._words.get(key)
        if w is None:
            w = assign_words(self.image(path).features.descriptors, vocab)
            self._words[key] = w
        return w


def build_vocabulary(train: DatasetManifest, vocab_size: int, budget: int, cfg: ExperimentConfig, cache: FeatureCache):
    """Subsample the training descriptors to ``budget`` and cluster them."""
    per_image = [cache.image(p).features.descriptors for p in train.paths]
    sample = subsample_features(
        per_image,
        SubsampleSpec(budget, derive_seed(cfg.master_seed, "subsample", budget)),
        names=train.paths,
    )
    return kmeans(
        sample,
        vocab_size,
        seed=derive_seed(cfg.master_seed, "kmeans", vocab_size, budget),
        max_iter=cfg.kmeans_max_iter,
        tol=cfg.kmeans_tol,
    )


def encode_images(paths, vocab: Vocabulary, tiling: TilingScheme, cache: FeatureCache) -> np.ndarray:
    rows = []
    for p in paths:
        info = cache.image(p)
        rows.append(
            encode_words(info.features.xy, cache.words(p, vocab), info.width, info.height, vocab.size, tiling)
        )
    return np.vstack(rows)


def run_configuration(
    train: DatasetManifest,
    test: DatasetManifest,
    vocab_size: int,
    feature_budget: int,
    tiling: TilingScheme,
    cfg: ExperimentConfig = ExperimentConfig(),
    cache: FeatureCache | None = None,
) -> ResultRow:
    """Vocabulary, encoding, CV model selection and test accuracy for one cell."""
    if set(train.paths) & set(test.paths):
        raise ValidationError("train and test splits overlap")
    cache = cache or FeatureCache(cfg.dsift, cfg.max_side)
    t0 = time.perf_counter()
    vocab = cache.vocabulary(train, vocab_size, feature_budget, cfg)
    X_train = encode_images(train.paths, vocab, tiling, cache)
    X_test = encode_images(test.paths, vocab, tiling, cache)
    search = grid_search_cv(
        X_train,
        train.targets,
        cfg.C_grid,
        cfg.gamma_grid,
        cfg.n_folds,
        seed=derive_seed(cfg.master_seed, "folds"),
        label_order=train.labels,
        tol=cfg.svm_tol,
    )
    model = train_one_vs_all(X_train, train.targets, search.hyperparams, label_order=train.labels, tol=cfg.svm_tol)
    pred = model.predict(X_test)
    accuracy = float(np.mean([p == t for p, t in zip(pred, test.targets)]))
    seconds = time.perf_counter() - t0 if cfg.record_timing else 0.0
    row = ResultRow(
        tiling.label, vocab_size, feature_budget, accuracy, search.hyperparams.C, search.hyperparams.gamma, seconds
    )
    log.info("%s M=%d budget=%d acc=%.3f C=%g gamma=%g (%.1fs)", *asdict(row).values())
    return row


def sweep(manifest: DatasetManifest, cfg: ExperimentConfig = ExperimentConfig(), cache: FeatureCache | None = None):
    """Every (tiling, vocab size, budget) cell over one shared split.

    Cells are computed budget-major so each vocabulary is built once and
    reused by every tiling; rows come back ordered (tiling, vocab, budget).
    """
    train, test = stratified_split(manifest, cfg.train_fraction, derive_seed(cfg.master_seed, "split"))
    cache = cache or FeatureCache(cfg.dsift, cfg.max_side)
    rows = {}
    for budget in cfg.feature_budgets:
        for M in cfg.vocab_sizes:
            for tiling in cfg.tilings:
                rows[(tiling, M, budget)] = run_configuration(train, test, M, budget, tiling, cfg, cache)
    return [rows[(t, M, b)] for t in cfg.tilings for M in cfg.vocab_sizes for b in cfg.feature_budgets]


def mean_over_features(table) -> list[tuple[str, int, float]]:
    """Average accuracy over feature budgets per (tiling, vocab size)."""
    tilings, vocabs, budgets = [], set(), set()
    cells = {}
    for row in table:
        if row.tiling not in tilings:
            tilings.append(row.tiling)
        vocabs.add(row.vocab_size)
        budgets.add(row.feature_budget)
        cells[(row.tiling, row.vocab_size, row.feature_budget)] = row.accuracy
    out = []
    for t in tilings:
        present = sorted(v for v in vocabs if any((t, v, b) in cells for b in budgets))
        for v in present:
            missing = [b for b in sorted(budgets) if (t, v, b) not in cells]
            if missing:
                raise ValidationError(f"missing result for tiling={t} vocab_size={v} feature_budget={missing[0]}")
            out.append((t, v, float(np.mean([cells[(t, v, b)] for b in sorted(budgets)]))))
    return out


def results_to_csv(table) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RESULTS_HEADER)
    for r in table:
        w.writerow([r.tiling, r.vocab_size, r.feature_budget, repr(r.accuracy), repr(r.C), repr(r.gamma), f"{r.seconds:.3f}"])
    return buf.getvalue()


def read_results_csv(path) -> list[ResultRow]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != RESULTS_HEADER:
            raise ValidationError(f"{path}: unexpected header {reader.fieldnames}")
        return [
            ResultRow(
                r["tiling"],
                int(r["vocab_size"]),
                int(r["feature_budget"]),
                float(r["accuracy"]),
                float(r["C"]),
                float(r["gamma"]),
                float(r["seconds"]),
            )
            for r in reader
        ]


def means_to_csv(means) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("tiling", "vocab_size", "mean_accuracy"))
    for t, v, m in means:
        w.writerow([t, v, repr(m)])
    return buf.getvalue()


def write_results_csv(table, path) -> None:
    atomic_write_text(path, results_to_csv(table))


def write_means_csv(means, path) -> None:
    atomic_write_text(path, means_to_csv(means))


_COLORS = ("#444444", "#1f77b4", "#2ca02c", "#d62728", "#9467bd", "#8c564b")


def means_to_svg(means, width: int = 640, height: int = 420) -> str:
    """Line chart of mean accuracy against vocabulary size (log x axis)."""
    tilings = list(dict.fromkeys(t for t, _, _ in means))
    vocabs = sorted({v for _, v, _ in means})
    left, right, top, bottom = 60, 130, 20, 50
    pw, ph = width - left - right, height - top - bottom
    lo, hi = math.log(vocabs[0]), math.log(vocabs[-1])
    span = hi - lo or 1.0

    def px(v):
        return left + (math.log(v) - lo) / span * pw

    def py(a):
        return top + (1.0 - a) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="12">',
        f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#999"/>',
    ]
    for a in (0.0, 0.25, 0.5, 0.75, 1.0):
        out.append(f'<text x="{left - 8}" y="{py(a) + 4:.1f}" text-anchor="end">{a:.2f}</text>')
    for v in vocabs:
        out.append(f'<text x="{px(v):.1f}" y="{top + ph + 18}" text-anchor="middle">{v}</text>')
    out.append(f'<text x="{left + pw / 2}" y="{height - 10}" text-anchor="middle">vocabulary size</text>')
    out.append(
        f'<text x="15" y="{top + ph / 2}" text-anchor="middle" transform="rotate(-90 15 {top + ph / 2})">mean accuracy</text>'
    )
    for k, t in enumerate(tilings):
        color = _COLORS[k % len(_COLORS)]
        pts = " ".join(f"{px(v):.1f},{py(a):.1f}" for tt, v, a in means if tt == t)
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{pts}"><title>{t}</title></polyline>')
        ly = top + 16 + 18 * k
        out.append(f'<line x1="{left + pw + 12}" y1="{ly}" x2="{left + pw + 32}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{left + pw + 38}" y="{ly + 4}">{t}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_svg(means, path) -> None:
    atomic_write_text(path, means_to_svg(means))
