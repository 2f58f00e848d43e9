"""Tamper detection from stacked pixel co-occurrence matrices and a small CNN."""

from .cooccurrence import CooccurrenceTensor, cooccurrence, cooccurrence_counts, extract_tensor
from .evaluation import EvalReport, ScoredSet, auc, fuse, per_type_report, roc_curve
from .image_io import DatasetManifest, Image, ManifestEntry, load_image, read_manifest, save_image, split_manifest
from .synth import ManipulationSpec, RecipeItem, apply_manipulation, generate_corpus
from .training import TrainConfig, TrainLog, predict, score_manifest, train

__version__ = "0.1.0"

__all__ = [
    "CooccurrenceTensor",
    "DatasetManifest",
    "EvalReport",
    "Image",
    "ManifestEntry",
    "ManipulationSpec",
    "RecipeItem",
    "ScoredSet",
    "TrainConfig",
    "TrainLog",
    "apply_manipulation",
    "auc",
    "cooccurrence",
    "cooccurrence_counts",
    "extract_tensor",
    "fuse",
    "generate_corpus",
    "load_image",
    "per_type_report",
    "predict",
    "read_manifest",
    "roc_curve",
    "save_image",
    "score_manifest",
    "split_manifest",
    "train",
]
