import json
import math

import numpy as np
import pytest

import coinbow.experiment as ex
from coinbow.core import DatasetManifest, ValidationError
from coinbow.experiment import (
    ExperimentConfig,
    ResultRow,
    derive_seed,
    mean_over_features,
    means_to_csv,
    means_to_svg,
    read_results_csv,
    results_to_csv,
    run_configuration,
    stratified_split,
    sweep,
    write_results_csv,
)
from coinbow.tiling import TilingScheme
from coinbow.vocab import QuotaShortfallError

FAST = dict(
    C_grid=(0.5, 8.0, 128.0),
    gamma_grid=(2.0**-3, 2.0, 32.0, 512.0),
    n_folds=3,
    record_timing=False,
)


def manifest_of(counts):
    entries = [(f"{lbl}/{k}.png", lbl) for lbl, n in counts.items() for k in range(n)]
    return DatasetManifest(tuple(entries))


def test_split_counts():
    train, test = stratified_split(manifest_of({"a": 10, "b": 3, "c": 2}), 0.7, 1)
    assert train.counts() == {"a": 7, "b": 2, "c": 1}
    assert test.counts() == {"a": 3, "b": 1, "c": 1}
    assert not set(train.paths) & set(test.paths)
    assert sorted(train.paths + test.paths) == sorted(manifest_of({"a": 10, "b": 3, "c": 2}).paths)


def test_split_is_seeded():
    m = manifest_of({"a": 12, "b": 9})
    assert stratified_split(m, 0.7, 5) == stratified_split(m, 0.7, 5)
    assert stratified_split(m, 0.7, 5) != stratified_split(m, 0.7, 6)
    with pytest.raises(ValidationError):
        stratified_split(m, 1.0, 0)


def test_seed_derivation_isolates_roles():
    seeds = {derive_seed(0, "split"), derive_seed(0, "folds"), derive_seed(0, "kmeans", 10, 1000),
             derive_seed(0, "kmeans", 20, 1000), derive_seed(1, "split")}
    assert len(seeds) == 5
    assert derive_seed(7, "subsample", 500) == derive_seed(7, "subsample", 500)
    assert 0 <= derive_seed(3, "x") < 2**64


def test_config_defaults_and_parsing(tmp_path):
    cfg = ExperimentConfig()
    assert cfg.vocab_sizes == (10, 20, 50, 100, 200, 400, 800)
    assert cfg.feature_budgets == (1000, 1500, 2000, 2500, 3000, 3500, 4000)
    assert cfg.train_fraction == 0.7 and len(cfg.tilings) == 4
    (tmp_path / "c.json").write_text(json.dumps(
        {"vocab_sizes": [10], "feature_budgets": [300], "tilings": ["circular:2", "global"], "step": 6}
    ))
    c2 = ExperimentConfig.from_file(tmp_path / "c.json")
    assert c2.tilings == (TilingScheme.circular(2), TilingScheme.global_())
    assert c2.dsift.step == 6 and c2.dsift.patch == 16
    assert ExperimentConfig.from_dict(c2.to_dict()) == c2
    with pytest.raises(ValidationError):
        ExperimentConfig.from_dict({"vocab_size": [10]})
    with pytest.raises(ValidationError):
        ExperimentConfig(train_fraction=0.0)


def rows(acc_by_budget, tiling="global", vocab=10):
    return [ResultRow(tiling, vocab, b, a, 1.0, 1.0, 0.0) for b, a in acc_by_budget.items()]


def test_mean_over_features():
    assert mean_over_features(rows({1000: 0.5, 2000: 0.7})) == [("global", 10, pytest.approx(0.6))]
    assert mean_over_features(rows({1000: 0.8})) == [("global", 10, 0.8)]
    same = rows({b: 0.42 for b in range(1000, 4001, 500)})
    assert mean_over_features(same)[0][2] == pytest.approx(0.42)
    table = rows({1000: 0.5, 2000: 0.7}) + rows({1000: 0.9}, tiling="circular")
    with pytest.raises(ValidationError, match="circular.*2000"):
        mean_over_features(table)


def test_results_csv_roundtrip(tmp_path):
    table = [ResultRow("circular", 10, 1000, 2 / 3, 0.5, 2.0**-7, 1.23456)]
    text = results_to_csv(table)
    assert text.splitlines()[0] == "tiling,vocab_size,feature_budget,accuracy,C,gamma,seconds"
    write_results_csv(table, tmp_path / "r.csv")
    back = read_results_csv(tmp_path / "r.csv")[0]
    assert back.accuracy == 2 / 3 and back.gamma == 2.0**-7 and back.seconds == pytest.approx(1.235)
    assert means_to_csv([("global", 10, 0.5)]).splitlines() == ["tiling,vocab_size,mean_accuracy", "global,10,0.5"]


def test_svg_has_one_polyline_per_tiling():
    means = [(t, v, 0.5 + 0.01 * v / 10) for t in ("global", "circular", "logpolar") for v in (10, 20, 50)]
    svg = means_to_svg(means)
    assert svg.count("<polyline") == 3
    assert svg.startswith("<svg") and "circular" in svg


@pytest.fixture(scope="module")
def split(small_dataset):
    _, manifest = small_dataset
    return stratified_split(manifest, 0.7, derive_seed(0, "split"))


def test_run_configuration_beats_chance(tmp_path):
    # The glyph classes share one stroke shape, so an orderless histogram only
    # separates them reliably on clean images; noisy sets are covered elsewhere.
    from coinbow.synth import generate_synthetic_dataset

    manifest = generate_synthetic_dataset(tmp_path, 10, rotation_range=0.0, noise_level=0.0, seed=0)
    train, test = stratified_split(manifest, 0.7, derive_seed(0, "split"))
    cfg = ExperimentConfig(record_timing=False)
    row = run_configuration(train, test, 10, 1000, TilingScheme.global_(), cfg)
    assert row.accuracy >= 0.5
    again = run_configuration(train, test, 10, 1000, TilingScheme.global_(), cfg)
    assert again == row


def test_run_configuration_is_repeatable_on_noisy_data(split):
    train, test = split
    cfg = ExperimentConfig(**FAST)
    row = run_configuration(train, test, 10, 1000, TilingScheme.circular(), cfg)
    assert 0.0 <= row.accuracy <= 1.0
    assert run_configuration(train, test, 10, 1000, TilingScheme.circular(), cfg) == row


def test_budget_below_train_size_is_rejected(split):
    train, test = split
    with pytest.raises(QuotaShortfallError):
        run_configuration(train, test, 5, len(train) - 1, TilingScheme.global_(), ExperimentConfig(**FAST))


def test_overlapping_split_is_rejected(split):
    train, _ = split
    with pytest.raises(ValidationError):
        run_configuration(train, train, 5, 500, TilingScheme.global_(), ExperimentConfig(**FAST))


def test_sweep_shape_order_and_determinism(small_dataset):
    _, manifest = small_dataset
    cfg = ExperimentConfig(
        vocab_sizes=(10, 20), feature_budgets=(500,),
        tilings=(TilingScheme.global_(), TilingScheme.circular()), **FAST,
    )
    table = sweep(manifest, cfg)
    assert [(r.tiling, r.vocab_size, r.feature_budget) for r in table] == [
        ("global", 10, 500), ("global", 20, 500), ("circular", 10, 500), ("circular", 20, 500),
    ]
    assert all(0.0 <= r.accuracy <= 1.0 for r in table)
    assert results_to_csv(sweep(manifest, cfg)) == results_to_csv(table)


def test_no_test_data_reaches_vocabulary_or_model_selection(small_dataset, monkeypatch):
    _, manifest = small_dataset
    train, test = stratified_split(manifest, 0.7, derive_seed(0, "split"))
    cache = ex.FeatureCache()
    seen = {"kmeans": [], "grid": []}
    real_kmeans, real_grid = ex.kmeans, ex.grid_search_cv

    def spy_kmeans(features, *a, **kw):
        seen["kmeans"].append(np.asarray(features))
        return real_kmeans(features, *a, **kw)

    def spy_grid(X, labels, *a, **kw):
        seen["grid"].append((np.asarray(X), list(labels)))
        return real_grid(X, labels, *a, **kw)

    monkeypatch.setattr(ex, "kmeans", spy_kmeans)
    monkeypatch.setattr(ex, "grid_search_cv", spy_grid)
    cfg = ExperimentConfig(vocab_sizes=(10,), feature_budgets=(500,), tilings=(TilingScheme.circular(),), **FAST)
    run_configuration(train, test, 10, 500, TilingScheme.circular(), cfg, cache)

    train_rows = np.vstack([cache.image(p).features.descriptors for p in train.paths])
    train_set = {r.tobytes() for r in train_rows}
    (sample,) = seen["kmeans"]
    assert all(r.tobytes() in train_set for r in sample)
    ((X, labels),) = seen["grid"]
    assert len(X) == len(train) and labels == train.targets


@pytest.mark.slow
def test_clean_upright_set_is_easy_for_every_tiling(tmp_path):
    from coinbow.synth import generate_synthetic_dataset

    manifest = generate_synthetic_dataset(tmp_path, 20, rotation_range=0.0, noise_level=0.0, seed=0)
    cfg = ExperimentConfig(vocab_sizes=(50,), feature_budgets=(1000,), record_timing=False)
    table = sweep(manifest, cfg)
    assert len(table) == 4
    for row in table:
        assert row.accuracy >= 0.9, row
