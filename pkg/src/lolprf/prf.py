"""First-pass retrieval, feedback extraction and second-pass retrieval."""

from __future__ import annotations

from typing import Dict, Sequence

import numpy as np

from .core import FeedbackSet, Query, RankedList
from .index import DocumentMatrix, search, search_array
from .reformulator import ReformulatorParams, reformulate_arrays, rocchio_reformulate


def first_pass_runs(matrix: DocumentMatrix, queries: Sequence[Query], top_n: int, tag: str = "base") -> Dict[str, RankedList]:
    return {q.query_id: search(matrix, q.vector, top_n, q.query_id, tag) for q in queries}


def feedback_set(matrix: DocumentMatrix, run: RankedList, k: int) -> FeedbackSet:
    return FeedbackSet.from_run(run, k, matrix.vector)


def revise(params: ReformulatorParams, matrix: DocumentMatrix, query: Query, run: RankedList, k: int) -> np.ndarray:
    """Inference-mode revised query array at feedback depth ``k``."""
    docs = matrix.dense_rows(run.doc_ids[:k])
    out, _ = reformulate_arrays(params, query.vector.to_array(), docs)
    return out


def second_pass_runs(params: ReformulatorParams, matrix: DocumentMatrix, queries: Sequence[Query],
                     runs: Dict[str, RankedList], k: int, top_n: int, tag: str = None) -> Dict[str, RankedList]:
    tag = tag or f"lol-k{k}"
    out = {}
    for q in queries:
        vec = revise(params, matrix, q, runs[q.query_id], k)
        out[q.query_id] = search_array(matrix, vec, top_n, q.query_id, tag)
    return out


def rocchio_runs(matrix: DocumentMatrix, queries: Sequence[Query], runs: Dict[str, RankedList], k: int,
                 top_n: int, alpha: float = 1.0, beta: float = 0.75, tag: str = None) -> Dict[str, RankedList]:
    tag = tag or f"rocchio-k{k}"
    out = {}
    for q in queries:
        fb = feedback_set(matrix, runs[q.query_id], k)
        revised = rocchio_reformulate(q, fb, alpha, beta)
        out[q.query_id] = search(matrix, revised.vector, top_n, q.query_id, tag)
    return out
