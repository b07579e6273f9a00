"""Exact brute-force retrieval by dot product."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, Sequence

import numpy as np
import scipy.sparse as sp

from .core import DENSE, ContractViolation, Document, RankedList, VectorRepr


class DocumentMatrix:
    """Row-per-document matrix in corpus order; read-only after build."""

    def __init__(self, kind: str, rows, doc_ids: Sequence[str], dim: int):
        self.kind = kind
        self.rows = rows
        self.doc_ids = list(doc_ids)
        self.dim = dim
        self._row_of: Dict[str, int] = {d: i for i, d in enumerate(self.doc_ids)}
        if len(self._row_of) != len(self.doc_ids):
            raise ContractViolation("duplicate doc_id in corpus")
        # lexical rank of each row's doc_id, used as the secondary sort key
        order = sorted(range(len(self.doc_ids)), key=self.doc_ids.__getitem__)
        self._id_rank = np.empty(len(order), dtype=np.int64)
        self._id_rank[order] = np.arange(len(order))

    def __len__(self) -> int:
        return len(self.doc_ids)

    def row_index(self, doc_id: str) -> int:
        try:
            return self._row_of[doc_id]
        except KeyError:
            raise ContractViolation(f"unknown doc_id {doc_id!r}") from None

    def __contains__(self, doc_id: str) -> bool:
        return doc_id in self._row_of

    def dense_rows(self, doc_ids: Sequence[str]) -> np.ndarray:
        """Float64 array of shape (len(doc_ids), dim)."""
        idx = [self.row_index(d) for d in doc_ids]
        if self.kind == DENSE:
            return self.rows[idx]
        if not idx:
            return np.zeros((0, self.dim))
        return self.rows[idx].toarray()

    def vector(self, doc_id: str) -> VectorRepr:
        row = self.dense_rows([doc_id])[0]
        if self.kind == DENSE:
            return VectorRepr.dense(row)
        return VectorRepr.sparse_from_array(row)

    def scores(self, q: np.ndarray) -> np.ndarray:
        """Dot product of every row with the dense query array ``q``."""
        out = self.rows @ q
        return np.asarray(out, dtype=np.float64).ravel()

    def rank(self, scores: np.ndarray, top_n: int) -> np.ndarray:
        """Row indices of the ``top_n`` best scores, ties by ascending doc_id."""
        order = np.lexsort((self._id_rank, -scores))
        return order[:top_n]


def build_matrix(corpus: Sequence[Document]) -> DocumentMatrix:
    if len(corpus) == 0:
        raise ContractViolation("cannot build a matrix from an empty corpus")
    kind = corpus[0].vector.kind
    dim = corpus[0].vector.dim
    for doc in corpus:
        if doc.vector.kind != kind or doc.vector.dim != dim:
            raise ContractViolation(
                f"document {doc.doc_id} is {doc.vector.kind}/{doc.vector.dim}, corpus is {kind}/{dim}"
            )
    ids = [d.doc_id for d in corpus]
    if kind == DENSE:
        rows = np.vstack([d.vector.values for d in corpus]).astype(np.float64)
        rows.setflags(write=False)
    else:
        indptr = [0]
        indices: List[int] = []
        data: List[float] = []
        for d in corpus:
            for term, weight in d.vector.entries.items():
                indices.append(term)
                data.append(weight)
            indptr.append(len(indices))
        rows = sp.csr_matrix(
            (np.asarray(data, dtype=np.float64), np.asarray(indices, dtype=np.int64), np.asarray(indptr)),
            shape=(len(corpus), dim),
        )
        rows.sort_indices()
    return DocumentMatrix(kind, rows, ids, dim)


def _check_query(matrix: DocumentMatrix, q: VectorRepr) -> None:
    if q.kind != matrix.kind or q.dim != matrix.dim:
        raise ContractViolation(
            f"query is {q.kind}/{q.dim} but matrix is {matrix.kind}/{matrix.dim}"
        )


def search_array(matrix: DocumentMatrix, q: np.ndarray, top_n: int, query_id: str = "", tag: str = "search") -> RankedList:
    if top_n <= 0:
        raise ContractViolation("top_n must be positive")
    scores = matrix.scores(q)
    if not np.all(np.isfinite(scores)):
        raise ContractViolation("non-finite retrieval score")
    top = matrix.rank(scores, top_n)
    return RankedList(query_id, tuple((matrix.doc_ids[i], float(scores[i])) for i in top), tag)


def search(matrix: DocumentMatrix, q: VectorRepr, top_n: int, query_id: str = "", tag: str = "search") -> RankedList:
    _check_query(matrix, q)
    return search_array(matrix, q.to_array(), top_n, query_id, tag)


def batch_search(matrix: DocumentMatrix, queries: Sequence[VectorRepr], top_n: int,
                 query_ids: Sequence[str] = None, tag: str = "search", n_jobs: int = 1) -> List[RankedList]:
    """Run :func:`search` for each query; output order follows input order."""
    if top_n <= 0:
        raise ContractViolation("top_n must be positive")
    if query_ids is None:
        query_ids = [""] * len(queries)
    jobs = list(zip(queries, query_ids))
    if n_jobs == 1 or len(jobs) < 2:
        return [search(matrix, q, top_n, qid, tag) for q, qid in jobs]
    with ThreadPoolExecutor(max_workers=n_jobs) as pool:
        return list(pool.map(lambda job: search(matrix, job[0], top_n, job[1], tag), jobs))
