"""Coin image classification with spatially tiled bags of visual words."""

from .core import DatasetManifest, GrayImage, ImageFormatError, ValidationError, load_dataset, load_grayscale
from .dsift import DenseSiftParams, extract_dense_sift
from .experiment import ExperimentConfig, mean_over_features, run_configuration, stratified_split, sweep
from .svm import SvmHyperParams, grid_search_cv, train_one_vs_all
from .synth import generate_synthetic_dataset
from .tiling import TilingScheme, encode
from .vocab import Vocabulary, assign_words, kmeans

__version__ = "0.1.0"
