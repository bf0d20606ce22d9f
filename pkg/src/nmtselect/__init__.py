"""Perplexity-driven data selection for sequence-to-sequence training."""
__version__ = "0.1.0"

from .corpus import Corpus, EncodedCorpus, Vocabulary, build_vocab, load_bitext, numericalize
from .difficulty import DifficultyLedger, Granularity, NormalizationMode
from .evaluation import BleuReport, EnsembleConfig, bleu, evaluate_checkpoint, evaluate_ensemble
from .policy import Policy, PolicyConfig, PolicyKind, SelectionPlan
from .trainer import TrainConfig, run_experiment, train

__all__ = [
    "Corpus", "EncodedCorpus", "Vocabulary", "build_vocab", "load_bitext", "numericalize",
    "DifficultyLedger", "Granularity", "NormalizationMode", "BleuReport", "EnsembleConfig",
    "bleu", "evaluate_checkpoint", "evaluate_ensemble", "Policy", "PolicyConfig",
    "PolicyKind", "SelectionPlan", "TrainConfig", "run_experiment", "train",
]
