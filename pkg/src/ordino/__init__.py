"""Ordinal difficulty classification for symbolic piano scores."""

__version__ = "0.1.0"

from .ingest import (
    CorpusManifest,
    ManifestEntry,
    Note,
    NoteSequence,
    build_manifest,
    corpus_tau_c,
    parse_musicxml,
)
from .representations import (
    FeatureSequence,
    Fragment,
    align,
    fragment_piece,
    fragment_spans,
    load_embedding,
    pitch_tokens,
    save_embedding,
)
from .losses import (
    ClassWeights,
    coral_decode,
    coral_loss,
    msmooth_loss,
    nll_loss,
    ordinal_decode,
    ordinal_encode,
    ordinal_loss,
    probs_from_head,
    regclass_loss,
)
from .metrics import MetricsReport, compute_metrics, group3, length_bucket
from .model import ClassifierConfig, DifficultyModel, PredictionRecord, ensemble_predict
from .splits import SplitPlan, make_splits
from .training import ExperimentConfig, balanced_batches, early_stop_best, run_training

__all__ = [
    "ClassWeights",
    "ClassifierConfig",
    "CorpusManifest",
    "DifficultyModel",
    "ExperimentConfig",
    "FeatureSequence",
    "Fragment",
    "ManifestEntry",
    "MetricsReport",
    "Note",
    "NoteSequence",
    "PredictionRecord",
    "SplitPlan",
    "align",
    "balanced_batches",
    "build_manifest",
    "compute_metrics",
    "coral_decode",
    "coral_loss",
    "corpus_tau_c",
    "early_stop_best",
    "ensemble_predict",
    "fragment_piece",
    "fragment_spans",
    "group3",
    "length_bucket",
    "load_embedding",
    "make_splits",
    "msmooth_loss",
    "nll_loss",
    "ordinal_decode",
    "ordinal_encode",
    "ordinal_loss",
    "parse_musicxml",
    "pitch_tokens",
    "probs_from_head",
    "regclass_loss",
    "run_training",
    "save_embedding",
]
