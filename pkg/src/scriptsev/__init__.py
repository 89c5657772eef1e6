"""Severity rating of age-restricted content aspects from movie dialogue scripts.

The package predicts the ordinal severity (None / Mild / Moderate / Severe) of
five content aspects (Sex, Violence, Profanity, Substance, Frightening) from a
movie's dialogue alone, using a tied-weight multitask network that jointly
learns 4-way classification and 3-way pairwise severity ranking, and renders
comparator-based reports that put each prediction next to well-known movies.
"""

from .corpus import (
    Aspect,
    AspectDataset,
    CorpusStats,
    LabeledInstance,
    ScriptDocument,
    SeverityLevel,
    Utterance,
    corpus_stats,
    filter_by_votes,
    kfold_split,
    load_corpus,
    save_corpus,
    stratified_split,
)
from .embedding import HashEmbedder, WordEmbeddingTable, load_word_embeddings, tokenize
from .backbones import BackboneConfig
from .errors import (
    DataError,
    ProviderError,
    ScriptsevError,
    TrainingError,
    UnsupportedOperationError,
)
from .evaluation import (
    CVReport,
    EvalReport,
    confusion,
    cross_validate,
    evaluate,
    macro_f1,
    significance_test,
)
from .interpret import ComparatorReport, ComparatorSet, comparator_report, select_comparators
from .siamese import (
    LossBreakdown,
    PairSample,
    RankLabel,
    SiameseModel,
    TrainConfig,
    compare,
    cpr,
    joint_step,
    load_model,
    predict_severity,
    sample_pair,
    save_model,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "Aspect",
    "AspectDataset",
    "BackboneConfig",
    "ComparatorReport",
    "ComparatorSet",
    "CorpusStats",
    "CVReport",
    "DataError",
    "EvalReport",
    "HashEmbedder",
    "LabeledInstance",
    "LossBreakdown",
    "PairSample",
    "ProviderError",
    "RankLabel",
    "ScriptDocument",
    "ScriptsevError",
    "SeverityLevel",
    "SiameseModel",
    "TrainConfig",
    "TrainingError",
    "UnsupportedOperationError",
    "Utterance",
    "WordEmbeddingTable",
    "compare",
    "comparator_report",
    "confusion",
    "corpus_stats",
    "cpr",
    "cross_validate",
    "evaluate",
    "filter_by_votes",
    "joint_step",
    "kfold_split",
    "load_corpus",
    "load_model",
    "load_word_embeddings",
    "macro_f1",
    "predict_severity",
    "sample_pair",
    "save_corpus",
    "save_model",
    "select_comparators",
    "significance_test",
    "stratified_split",
    "tokenize",
    "train",
]
