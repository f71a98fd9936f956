"""Single-file model bundle: dense SIFT settings, vocabulary, tiling and SVM."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .core import DatasetManifest, GrayImage, ValidationError, atomic_write_text, load_grayscale
from .dsift import DenseSiftParams, extract_dense_sift
from .experiment import FeatureCache, derive_seed, encode_images
from .svm import DEFAULT_C_GRID, DEFAULT_GAMMA_GRID, MultiClassSvmModel, SvmHyperParams, grid_search_cv, train_one_vs_all
from .tiling import TilingScheme, encode_words
from .vocab import SubsampleSpec, Vocabulary, assign_words, kmeans, subsample_features

BUNDLE_FORMAT_VERSION = 1


@dataclass(frozen=True, eq=False)
class ModelBundle:
    dsift: DenseSiftParams
    max_side: int | None
    tiling: TilingScheme
    vocabulary: Vocabulary
    svm: MultiClassSvmModel

    def __post_init__(self):
        expected = self.tiling.vector_length(self.vocabulary.size)
        if self.svm.dim != expected:
            raise ValidationError(
                f"SVM expects {self.svm.dim}-dimensional features but {self.tiling.label} "
                f"with M={self.vocabulary.size} produces {expected}"
            )
        if self.vocabulary.dim != self.dsift.dim:
            raise ValidationError("vocabulary dimension does not match the descriptor length")

    def features(self, img: GrayImage) -> np.ndarray:
        feats = extract_dense_sift(img, self.dsift)
        words = assign_words(feats.descriptors, self.vocabulary)
        return encode_words(feats.xy, words, img.width, img.height, self.vocabulary.size, self.tiling)

    def decision_values(self, img: GrayImage) -> dict[str, float]:
        row = self.svm.decision_matrix(self.features(img)[None, :])[0]
        return {lbl: float(v) for lbl, v in zip(self.svm.labels, row)}

    def predict_path(self, path) -> tuple[str, dict[str, float]]:
        values = self.decision_values(load_grayscale(path, self.max_side))
        # first maximum wins, matching MultiClassSvmModel.predict
        best = max(self.svm.labels, key=lambda lbl: (values[lbl], -self.svm.labels.index(lbl)))
        return best, values

    def to_json(self) -> dict:
        return {
            "format_version": BUNDLE_FORMAT_VERSION,
            "dsift": asdict(self.dsift),
            "max_side": self.max_side,
            "tiling": self.tiling.to_json(),
            "vocabulary": self.vocabulary.to_json(),
            "svm": self.svm.to_json(),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "ModelBundle":
        if doc.get("format_version") != BUNDLE_FORMAT_VERSION:
            raise ValidationError(f"unsupported bundle format_version {doc.get('format_version')!r}")
        try:
            return cls(
                DenseSiftParams(**doc["dsift"]),
                doc["max_side"],
                TilingScheme.from_json(doc["tiling"]),
                Vocabulary.from_json(doc["vocabulary"]),
                MultiClassSvmModel.from_json(doc["svm"]),
            )
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed bundle: {exc}") from exc


def save_bundle(bundle: ModelBundle, path) -> None:
    atomic_write_text(path, json.dumps(bundle.to_json()))


def load_bundle(path) -> ModelBundle:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: not a JSON bundle ({exc})") from exc
    return ModelBundle.from_json(doc)


def train_bundle(
    manifest: DatasetManifest,
    vocab_size: int,
    feature_budget: int,
    tiling: TilingScheme,
    dsift: DenseSiftParams = DenseSiftParams(),
    max_side: int | None = 256,
    master_seed: int = 0,
    hyperparams: SvmHyperParams | None = None,
    C_grid=DEFAULT_C_GRID,
    gamma_grid=DEFAULT_GAMMA_GRID,
    n_folds: int = 5,
) -> ModelBundle:
    """Fit the whole pipeline on every image of ``manifest``.

    Without explicit ``hyperparams`` the SVM settings are chosen by
    cross-validation, with seeds derived the same way as in a sweep.
    """
    cache = FeatureCache(dsift, max_side)
    per_image = [cache.image(p).features.descriptors for p in manifest.paths]
    sample = subsample_features(
        per_image,
        SubsampleSpec(feature_budget, derive_seed(master_seed, "subsample", feature_budget)),
        names=manifest.paths,
    )
    vocab = kmeans(sample, vocab_size, seed=derive_seed(master_seed, "kmeans", vocab_size, feature_budget))
    X = encode_images(manifest.paths, vocab, tiling, cache)
    if hyperparams is None:
        hyperparams = grid_search_cv(
            X, manifest.targets, C_grid, gamma_grid, n_folds,
            seed=derive_seed(master_seed, "folds"), label_order=manifest.labels,
        ).hyperparams
    model = train_one_vs_all(X, manifest.targets, hyperparams, label_order=manifest.labels)
    return ModelBundle(dsift, max_side, tiling, vocab, model)
