"""Learning-to-rank pseudo-relevance feedback with comparative regularization."""

from .core import (ContractViolation, Document, FeedbackSet, NumericFailure, Query, RankedList,
                   RelevanceJudgments, VectorRepr, ZeroNormError, dot, l2_normalize)
from .estimator import BruteForceRetriever, LoLReformulator, RocchioReformulator
from .evaluation import depth_sweep, mrr_at_k, ndcg_at_k, paired_t_test, recall_at_k, robustness_index
from .index import DocumentMatrix, batch_search, build_matrix, search
from .loss import comparative_regularization, reformulation_loss, reweighted_form, total_loss
from .reformulator import ReformulatorConfig, backward, init_params, reformulate, rocchio_reformulate
from .synth import SynthConfig, drift_profile, generate
from .trainer import TrainConfig, train, train_step

__version__ = "0.1.0"

__all__ = [
    "BruteForceRetriever", "ContractViolation", "Document", "DocumentMatrix", "FeedbackSet",
    "LoLReformulator", "NumericFailure", "Query", "RankedList", "ReformulatorConfig",
    "RelevanceJudgments", "RocchioReformulator", "SynthConfig", "TrainConfig", "VectorRepr",
    "ZeroNormError", "backward", "batch_search", "build_matrix", "comparative_regularization",
    "depth_sweep", "dot", "drift_profile", "generate", "init_params", "l2_normalize", "mrr_at_k",
    "ndcg_at_k", "paired_t_test", "recall_at_k", "reformulate", "reformulation_loss",
    "reweighted_form", "robustness_index", "rocchio_reformulate", "search", "total_loss", "train",
    "train_step",
]
