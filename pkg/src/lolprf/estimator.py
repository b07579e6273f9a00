"""scikit-learn style wrappers around the retrieval and reformulation pipeline.

``X`` is always a sequence of :class:`~lolprf.core.Query` (or, for the
retriever, :class:`~lolprf.core.Document`) objects; judgments play the role
of ``y``.
"""

from __future__ import annotations

from typing import Dict, List, Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .core import ContractViolation, Document, Query, RankedList, RelevanceJudgments, VectorRepr
from .evaluation import mrr_at_k
from .index import DocumentMatrix, build_matrix, search
from .prf import feedback_set, first_pass_runs, revise
from .reformulator import ReformulatorConfig, rocchio_reformulate
from .trainer import TrainConfig, build_data, train


def check_queries(X, matrix: Optional[DocumentMatrix] = None) -> List[Query]:
    """Validate a query batch: non-empty, unique ids, one vector kind/dim."""
    if isinstance(X, Query):
        X = [X]
    queries = list(X)
    if not queries:
        raise ContractViolation("expected at least one query")
    for q in queries:
        if not isinstance(q, Query):
            raise ContractViolation(f"expected Query objects, got {type(q).__name__}")
    ids = [q.query_id for q in queries]
    if len(set(ids)) != len(ids):
        raise ContractViolation("duplicate query ids")
    kinds = {(q.vector.kind, q.vector.dim) for q in queries}
    if len(kinds) != 1:
        raise ContractViolation(f"queries mix vector kinds/dims: {sorted(kinds)}")
    if matrix is not None:
        kind, dim = kinds.pop()
        if (kind, dim) != (matrix.kind, matrix.dim):
            raise ContractViolation(
                f"queries are {kind}/{dim} but the index is {matrix.kind}/{matrix.dim}"
            )
    return queries


def _check_depth(depth: int, max_depth: int) -> int:
    depth = int(depth)
    if not 0 <= depth <= max_depth:
        raise ContractViolation(f"depth {depth} outside [0, {max_depth}]")
    return depth


class BruteForceRetriever(BaseEstimator):
    """Exact dot-product retrieval over a document collection."""

    def __init__(self, top_n: int = 100):
        self.top_n = top_n

    def fit(self, X: Sequence[Document], y=None):
        self.matrix_ = build_matrix(list(X))
        self.n_documents_ = len(self.matrix_.doc_ids)
        return self

    def predict(self, X) -> Dict[str, RankedList]:
        check_is_fitted(self, "matrix_")
        queries = check_queries(X, self.matrix_)
        return first_pass_runs(self.matrix_, queries, self.top_n)

    def score(self, X, y: RelevanceJudgments) -> float:
        return mrr_at_k(self.predict(X), y).mean


class _PRFBase(BaseEstimator, TransformerMixin):
    def _first_pass(self, queries):
        return first_pass_runs(self.matrix_, queries, self.first_pass_depth)

    def predict(self, X, depth: Optional[int] = None, top_n: int = 100) -> Dict[str, RankedList]:
        """Second-pass runs from the revised query vectors."""
        vectors = self.transform(X, depth)
        queries = check_queries(X)
        out = {}
        for q, vec in zip(queries, vectors):
            out[q.query_id] = search(self.matrix_, _as_repr(vec, self.matrix_), top_n, q.query_id,
                                     f"{type(self).__name__.lower()}-k{self._depth(depth)}")
        return out

    def score(self, X, y: RelevanceJudgments, depth: Optional[int] = None) -> float:
        """Mean MRR@10 of the second-pass runs."""
        return mrr_at_k(self.predict(X, depth), y).mean


def _as_repr(vec: np.ndarray, matrix: DocumentMatrix):
    if matrix.kind == "sparse":
        return VectorRepr.sparse_from_array(vec)
    return VectorRepr.dense(vec)


class RocchioReformulator(_PRFBase):
    """``alpha * q + beta * mean(top-k docs)``; nothing to learn beyond the index."""

    def __init__(self, alpha: float = 1.0, beta: float = 0.75, depth: int = 3, first_pass_depth: int = 100):
        self.alpha = alpha
        self.beta = beta
        self.depth = depth
        self.first_pass_depth = first_pass_depth

    def _depth(self, depth):
        return self.depth if depth is None else depth

    def fit(self, X=None, y=None, *, matrix: DocumentMatrix):
        if not isinstance(matrix, DocumentMatrix):
            raise ContractViolation("fit needs matrix=DocumentMatrix")
        if self.first_pass_depth < self.depth:
            raise ContractViolation("first_pass_depth must cover the feedback depth")
        self.matrix_ = matrix
        return self

    def transform(self, X, depth: Optional[int] = None) -> np.ndarray:
        check_is_fitted(self, "matrix_")
        queries = check_queries(X, self.matrix_)
        k = _check_depth(self._depth(depth), self.first_pass_depth)
        runs = self._first_pass(queries)
        rows = [rocchio_reformulate(q, feedback_set(self.matrix_, runs[q.query_id], k), self.alpha, self.beta)
                .vector.to_array() for q in queries]
        return np.vstack(rows)


class LoLReformulator(_PRFBase):
    """Learned PRF reformulator trained with the comparative objective.

    Hyper-parameters mirror :class:`~lolprf.trainer.TrainConfig` and
    :class:`~lolprf.reformulator.ReformulatorConfig`. Without explicit dev
    queries, ``dev_fraction`` of the training queries is held out (seeded).
    """

    def __init__(self, depths=(0, 1, 2, 3, 4, 5), k_size: int = 2, lam: float = 1.0,
                 learning_rate: float = 1e-4, batch_queries: int = 8, revision_budget: int = 12,
                 variant: str = "standard", weight_decay: float = 0.01, pool_cap: int = 64,
                 first_pass_depth: int = 100, width: int = 32, n_layers: int = 1, n_heads: int = 2,
                 ffn_width: int = 64, mlp_width: int = 32, use_position: bool = True,
                 dev_fraction: float = 0.2, depth: Optional[int] = None, seed: int = 0):
        self.depths = depths
        self.k_size = k_size
        self.lam = lam
        self.learning_rate = learning_rate
        self.batch_queries = batch_queries
        self.revision_budget = revision_budget
        self.variant = variant
        self.weight_decay = weight_decay
        self.pool_cap = pool_cap
        self.first_pass_depth = first_pass_depth
        self.width = width
        self.n_layers = n_layers
        self.n_heads = n_heads
        self.ffn_width = ffn_width
        self.mlp_width = mlp_width
        self.use_position = use_position
        self.dev_fraction = dev_fraction
        self.depth = depth
        self.seed = seed

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            depths=tuple(self.depths), k_size=self.k_size, lam=self.lam, learning_rate=self.learning_rate,
            batch_queries=self.batch_queries, revision_budget=self.revision_budget, seed=self.seed,
            variant=self.variant, weight_decay=self.weight_decay, first_pass_depth=self.first_pass_depth,
            pool_cap=self.pool_cap,
        ).resolved()

    def _model_config(self, matrix: DocumentMatrix) -> ReformulatorConfig:
        cfg = ReformulatorConfig(
            kind=matrix.kind, input_dim=matrix.dim, width=self.width, n_layers=self.n_layers,
            n_heads=self.n_heads, ffn_width=self.ffn_width, mlp_width=self.mlp_width,
            max_depth=max(self.depths), use_position=self.use_position,
        )
        cfg.validate()
        return cfg

    def _depth(self, depth):
        if depth is None:
            depth = self.depth if self.depth is not None else max(self.depths_)
        return depth

    def fit(self, X, y: RelevanceJudgments, *, matrix: DocumentMatrix, dev_X=None, dev_y=None):
        if not isinstance(matrix, DocumentMatrix):
            raise ContractViolation("fit needs matrix=DocumentMatrix")
        if not isinstance(y, RelevanceJudgments):
            raise ContractViolation("y must be RelevanceJudgments")
        queries = check_queries(X, matrix)
        tcfg = self._train_config()
        if dev_X is None:
            if not 0.0 < self.dev_fraction < 1.0:
                raise ContractViolation("dev_fraction must lie in (0, 1) when no dev queries are given")
            order = np.random.default_rng(self.seed).permutation(len(queries))
            n_dev = max(1, int(round(self.dev_fraction * len(queries))))
            if n_dev >= len(queries):
                raise ContractViolation("too few queries to hold out a dev split")
            dev_idx = set(int(i) for i in order[:n_dev])
            dev_queries = [q for i, q in enumerate(queries) if i in dev_idx]
            queries = [q for i, q in enumerate(queries) if i not in dev_idx]
            dev_y = y
        else:
            dev_queries = check_queries(dev_X, matrix)
            dev_y = y if dev_y is None else dev_y
        train_data = build_data(matrix, queries, y, tcfg.first_pass_depth)
        dev_data = build_data(matrix, dev_queries, dev_y, tcfg.first_pass_depth)
        result = train(tcfg, self._model_config(matrix), matrix, train_data, dev_data)
        self.matrix_ = matrix
        self.depths_ = tcfg.depths
        self.params_ = result.best.params
        self.best_epoch_ = result.best.epoch
        self.best_score_ = result.best.dev_mrr_at_10
        self.log_ = result.log_rows
        return self

    def transform(self, X, depth: Optional[int] = None) -> np.ndarray:
        """Revised query vectors at feedback ``depth``, one row per query."""
        check_is_fitted(self, "params_")
        queries = check_queries(X, self.matrix_)
        k = _check_depth(self._depth(depth), self.params_.config.max_depth)
        runs = self._first_pass(queries)
        return np.vstack([revise(self.params_, self.matrix_, q, runs[q.query_id], k) for q in queries])
