"""Measure zero-shot classification accuracy as equivalent labels are added."""

from semscale.backend import BackendConfig, EmbeddingBackend, RemoteBackend, SyntheticBackend, make_backend
from semscale.classifier import LabelMatrix, Prediction, accuracy, classify, classify_many, cosine_similarity
from semscale.dataset import Dataset, ImageRecord, Layout, extract_class_from_path, parse_answer_key, scan_dataset
from semscale.errors import BackendError, DataError, SemscaleError
from semscale.experiment import (
    ExperimentReport,
    IterationResult,
    MetricBundle,
    StopPolicy,
    StopReason,
    compute_metric_series,
    detect_stop,
    run_experiment,
    run_iteration,
)
from semscale.labels import (
    BUILTIN_TEMPLATES,
    EquivalenceMap,
    Template,
    TemplateList,
    build_equivalence_map,
    expand_label,
    load_user_templates,
    pluralize,
)
from semscale.simulator import SyntheticWorld, generate_world, monte_carlo_curve

__version__ = "0.1.0"

__all__ = [
    "BUILTIN_TEMPLATES",
    "BackendConfig",
    "BackendError",
    "DataError",
    "Dataset",
    "EmbeddingBackend",
    "EquivalenceMap",
    "ExperimentReport",
    "ImageRecord",
    "IterationResult",
    "LabelMatrix",
    "Layout",
    "MetricBundle",
    "Prediction",
    "RemoteBackend",
    "SemscaleError",
    "StopPolicy",
    "StopReason",
    "SyntheticBackend",
    "SyntheticWorld",
    "Template",
    "TemplateList",
    "accuracy",
    "build_equivalence_map",
    "classify",
    "classify_many",
    "compute_metric_series",
    "cosine_similarity",
    "detect_stop",
    "expand_label",
    "extract_class_from_path",
    "generate_world",
    "load_user_templates",
    "make_backend",
    "monte_carlo_curve",
    "parse_answer_key",
    "pluralize",
    "run_experiment",
    "run_iteration",
    "scan_dataset",
]
