"""Sentiment quadruple extraction with implicit aspects and opinions."""

from .corpus import (
    Example,
    IMPLICIT_ASPECT,
    IMPLICIT_OPINION,
    LabelVocab,
    QuadType,
    Quadruple,
    Span,
    SpanKind,
    import_acos_tsv,
    load_canonical,
    quad_type,
    save_canonical,
)
from .encoder import EncoderConfig, build_encoder
from .heads import QuadModel, load_checkpoint, predict_tags, save_checkpoint
from .metrics import Score, aggregate_trials, score, score_by_type, score_corpus
from .negatives import (
    PairTarget,
    construct_adaptive,
    construct_none,
    construct_random,
    reduce_gold,
)
from .objective import LossReport, loss_pairs, loss_tagging, total_loss
from .pipeline import Prediction, extract_quadruples, predict_file
from .tagseq import TAGS, decode_tags, encode_tags
from .trainer import DatasetSplits, TrainConfig, TrialResult, run_ablation, select_checkpoint, train

__version__ = "0.1.0"

__all__ = [
    "Example",
    "IMPLICIT_ASPECT",
    "IMPLICIT_OPINION",
    "LabelVocab",
    "QuadType",
    "Quadruple",
    "Span",
    "SpanKind",
    "import_acos_tsv",
    "load_canonical",
    "quad_type",
    "save_canonical",
    "EncoderConfig",
    "build_encoder",
    "QuadModel",
    "load_checkpoint",
    "predict_tags",
    "save_checkpoint",
    "Score",
    "aggregate_trials",
    "score",
    "score_by_type",
    "score_corpus",
    "PairTarget",
    "construct_adaptive",
    "construct_none",
    "construct_random",
    "reduce_gold",
    "LossReport",
    "loss_pairs",
    "loss_tagging",
    "total_loss",
    "Prediction",
    "extract_quadruples",
    "predict_file",
    "TAGS",
    "decode_tags",
    "encode_tags",
    "DatasetSplits",
    "TrainConfig",
    "TrialResult",
    "run_ablation",
    "select_checkpoint",
    "train",
]
