"""Domain types shared across the package.

Everything here is immutable after construction. Reals are float64.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Dict, Iterable, List, Mapping, Optional, Tuple

import numpy as np

DENSE = "dense"
SPARSE = "sparse"
_KINDS = (DENSE, SPARSE)


class ContractViolation(ValueError):
    """Raised when a caller breaks an operation's precondition."""


class ZeroNormError(ContractViolation):
    pass


class NumericFailure(ArithmeticError):
    """A non-finite value appeared during a computation."""


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=np.float64, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class VectorRepr:
    """A dense (fixed-dimension) or sparse (term id -> weight) vector.

    Sparse vectors only ever store strictly positive weights; zero entries
    are dropped on construction.
    """

    kind: str
    dim: int
    values: Optional[np.ndarray] = None
    entries: Mapping[int, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ContractViolation(f"unknown vector kind {self.kind!r}")
        if self.dim <= 0:
            raise ContractViolation(f"dim must be positive, got {self.dim}")
        if self.kind == DENSE:
            if self.values is None or self.values.shape != (self.dim,):
                raise ContractViolation("dense vector values must have shape (dim,)")
            if not np.all(np.isfinite(self.values)):
                raise ContractViolation("dense vector has non-finite entries")

    @classmethod
    def dense(cls, values) -> "VectorRepr":
        arr = _frozen(np.asarray(values, dtype=np.float64).ravel())
        return cls(DENSE, int(arr.shape[0]), values=arr)

    @classmethod
    def sparse(cls, entries: Mapping[int, float], dim: int) -> "VectorRepr":
        clean: Dict[int, float] = {}
        for term, weight in sorted(entries.items()):
            term = int(term)
            weight = float(weight)
            if not 0 <= term < dim:
                raise ContractViolation(f"term id {term} outside vocabulary of size {dim}")
            if not math.isfinite(weight) or weight < 0:
                raise ContractViolation(f"sparse weight for term {term} must be finite and >= 0")
            if weight > 0:
                clean[term] = weight
        return cls(SPARSE, int(dim), entries=MappingProxyType(clean))

    @classmethod
    def sparse_from_array(cls, values: np.ndarray) -> "VectorRepr":
        values = np.asarray(values, dtype=np.float64)
        nz = np.flatnonzero(values)
        return cls.sparse({int(i): float(values[i]) for i in nz}, values.shape[0])

    def to_array(self) -> np.ndarray:
        """Dense float64 copy of the vector."""
        if self.kind == DENSE:
            return np.array(self.values)
        out = np.zeros(self.dim)
        if self.entries:
            idx = np.fromiter(self.entries.keys(), dtype=np.int64)
            out[idx] = np.fromiter(self.entries.values(), dtype=np.float64)
        return out

    def norm(self) -> float:
        if self.kind == DENSE:
            return float(np.linalg.norm(self.values))
        return math.sqrt(math.fsum(w * w for w in self.entries.values()))

    def __eq__(self, other) -> bool:
        if not isinstance(other, VectorRepr):
            return NotImplemented
        if (self.kind, self.dim) != (other.kind, other.dim):
            return False
        if self.kind == DENSE:
            return bool(np.array_equal(self.values, other.values))
        return dict(self.entries) == dict(other.entries)

    def __repr__(self) -> str:
        if self.kind == DENSE:
            return f"VectorRepr.dense({self.values.tolist()})"
        return f"VectorRepr.sparse({dict(self.entries)}, dim={self.dim})"


def _check_compatible(a: VectorRepr, b: VectorRepr) -> None:
    if a.kind != b.kind:
        raise ContractViolation(f"vector kind mismatch: {a.kind} vs {b.kind}")
    if a.dim != b.dim:
        raise ContractViolation(f"vector dim mismatch: {a.dim} vs {b.dim}")


def dot(a: VectorRepr, b: VectorRepr) -> float:
    """Inner product of two vectors of the same kind and dimension."""
    _check_compatible(a, b)
    if a.kind == DENSE:
        return float(np.dot(a.values, b.values))
    small, large = (a.entries, b.entries) if len(a.entries) <= len(b.entries) else (b.entries, a.entries)
    total = 0.0
    for term, weight in small.items():
        other = large.get(term)
        if other is not None:
            total += weight * other
    return total


def l2_normalize(v: VectorRepr) -> VectorRepr:
    norm = v.norm()
    if norm == 0.0:
        raise ZeroNormError("cannot L2-normalize a zero vector")
    if v.kind == DENSE:
        return VectorRepr.dense(v.values / norm)
    return VectorRepr.sparse({t: w / norm for t, w in v.entries.items()}, v.dim)


@dataclass(frozen=True)
class Document:
    doc_id: str
    text: Tuple[int, ...]
    vector: VectorRepr


@dataclass(frozen=True)
class Query:
    query_id: str
    text: Tuple[int, ...]
    vector: VectorRepr


@dataclass(frozen=True)
class RankedList:
    """One retrieval pass for one query, best document first."""

    query_id: str
    entries: Tuple[Tuple[str, float], ...]
    produced_by: str = "run"

    def __post_init__(self):
        entries = tuple((str(d), float(s)) for d, s in self.entries)
        object.__setattr__(self, "entries", entries)
        ids = [d for d, _ in entries]
        if len(set(ids)) != len(ids):
            raise ContractViolation(f"duplicate doc ids in ranked list for {self.query_id}")
        for (_, s1), (_, s2) in zip(entries, entries[1:]):
            if s2 > s1:
                raise ContractViolation(f"scores must be non-increasing in ranked list for {self.query_id}")

    @property
    def doc_ids(self) -> List[str]:
        return [d for d, _ in self.entries]

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(frozen=True)
class FeedbackSet:
    """The first ``depth_k`` documents of a ranked list, with their vectors."""

    depth_k: int
    doc_ids: Tuple[str, ...] = ()
    vectors: Tuple[VectorRepr, ...] = ()

    def __post_init__(self):
        if self.depth_k < 0:
            raise ContractViolation("feedback depth must be non-negative")
        if len(self.doc_ids) != self.depth_k or len(self.vectors) != self.depth_k:
            raise ContractViolation(
                f"feedback set of depth {self.depth_k} holds {len(self.doc_ids)} docs"
            )

    @classmethod
    def from_run(cls, run: RankedList, k: int, lookup) -> "FeedbackSet":
        """Take the top ``k`` of ``run``; ``lookup`` maps doc_id -> VectorRepr."""
        if k > len(run):
            raise ContractViolation(f"run for {run.query_id} has {len(run)} docs, need {k}")
        ids = tuple(run.doc_ids[:k])
        return cls(k, ids, tuple(lookup(d) for d in ids))


class RelevanceJudgments:
    """Graded judgments; an absent (query, doc) pair has grade 0."""

    def __init__(self, grades: Optional[Mapping[Tuple[str, str], int]] = None):
        self._by_query: Dict[str, Dict[str, int]] = {}
        for (qid, did), grade in (grades or {}).items():
            grade = int(grade)
            if grade < 0:
                raise ContractViolation(f"negative grade for ({qid}, {did})")
            self._by_query.setdefault(qid, {})[did] = grade

    @classmethod
    def from_triples(cls, triples: Iterable[Tuple[str, str, int]]) -> "RelevanceJudgments":
        return cls({(q, d): g for q, d, g in triples})

    def grade(self, query_id: str, doc_id: str) -> int:
        return self._by_query.get(query_id, {}).get(doc_id, 0)

    def judged(self, query_id: str) -> Mapping[str, int]:
        return MappingProxyType(self._by_query.get(query_id, {}))

    def relevant(self, query_id: str, threshold: int = 1) -> List[str]:
        """Doc ids with grade >= threshold, sorted ascending."""
        return sorted(d for d, g in self._by_query.get(query_id, {}).items() if g >= threshold)

    def query_ids(self) -> List[str]:
        return sorted(self._by_query)

    def items(self):
        for qid in sorted(self._by_query):
            for did in sorted(self._by_query[qid]):
                yield qid, did, self._by_query[qid][did]

    def subset(self, query_ids: Iterable[str]) -> "RelevanceJudgments":
        keep = set(query_ids)
        return RelevanceJudgments.from_triples(t for t in self.items() if t[0] in keep)

    def __len__(self) -> int:
        return sum(len(v) for v in self._by_query.values())

    def __eq__(self, other) -> bool:
        if not isinstance(other, RelevanceJudgments):
            return NotImplemented
        return list(self.items()) == list(other.items())
