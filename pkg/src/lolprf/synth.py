"""Seeded synthetic collections with controllable query drift.

Every topic owns a latent prototype (dense mode) and a disjoint block of core
terms (both modes). Each topic is paired with a partner topic; the pair shares
one "ambiguous" term, the way an acronym can name two unrelated things.
Ambiguous queries mix their own topic with the partner's, so the first-pass
top-k holds on-topic and off-topic documents together.

Grades: same-topic documents 2, near-topic documents (own/partner mixtures) 1.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, List, Mapping, Sequence, Tuple

import numpy as np

from . import io as lio
from .core import DENSE, SPARSE, ContractViolation, Document, Query, RelevanceJudgments, VectorRepr

MIN_CORE_TERMS = 3


@dataclass(frozen=True)
class SynthConfig:
    n_topics: int = 50
    docs_per_topic: int = 30
    n_distractors: int = 500
    vocab_size: int = 500
    dense_dim: int = 16
    ambiguity_rate: float = 0.5
    noise_sigma: float = 0.6
    query_noise: float = 0.3
    ambiguity_mix: float = 0.6      # own-topic share of an ambiguous query
    queries_per_topic: int = 6
    dev_fraction: float = 0.2
    doc_len: int = 16
    kind: str = DENSE
    seed: int = 0

    def validate(self) -> None:
        for name in ("n_topics", "docs_per_topic", "vocab_size", "dense_dim", "queries_per_topic", "doc_len"):
            if getattr(self, name) <= 0:
                raise ContractViolation(f"{name} must be positive")
        if self.n_distractors < 0:
            raise ContractViolation("n_distractors must be non-negative")
        if self.n_topics < 2:
            raise ContractViolation("need at least two topics to form partner pairs")
        if not 0.0 <= self.ambiguity_rate <= 1.0:
            raise ContractViolation("ambiguity_rate must lie in [0, 1]")
        if not 0.0 <= self.dev_fraction < 1.0:
            raise ContractViolation("dev_fraction must lie in [0, 1)")
        if self.noise_sigma < 0 or self.query_noise < 0:
            raise ContractViolation("noise scales must be non-negative")
        if self.kind not in (DENSE, SPARSE):
            raise ContractViolation(f"unknown kind {self.kind!r}")
        if self.vocab_size < self.n_topics * (MIN_CORE_TERMS + 1):
            raise ContractViolation(
                f"vocab_size {self.vocab_size} too small for {self.n_topics} topics "
                f"(need >= {self.n_topics * (MIN_CORE_TERMS + 1)})"
            )
        if self.kind == DENSE and self.dense_dim < 2:
            raise ContractViolation("dense_dim too small to separate topics")


@dataclass
class SynthDataset:
    config: SynthConfig
    corpus: List[Document]
    train_queries: List[Query]
    dev_queries: List[Query]
    qrels: RelevanceJudgments
    doc_topics: Dict[str, Tuple[int, str]]          # doc_id -> (topic, "on" | "near")
    query_topics: Dict[str, Tuple[int, int, bool]]  # query_id -> (topic, partner, ambiguous)
    prototypes: np.ndarray

    @property
    def queries(self) -> List[Query]:
        return self.train_queries + self.dev_queries


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def _term_layout(cfg: SynthConfig):
    core = min(8, (cfg.vocab_size - cfg.n_topics) // cfg.n_topics)
    core_terms = [list(range(t * core, (t + 1) * core)) for t in range(cfg.n_topics)]
    shared_start = cfg.n_topics * core
    background = list(range(shared_start + cfg.n_topics, cfg.vocab_size))
    return core_terms, shared_start, background


def generate(config: SynthConfig) -> SynthDataset:
    config.validate()
    cfg = config
    rng = np.random.default_rng(cfg.seed)
    T = cfg.n_topics
    D = cfg.dense_dim

    prototypes = np.vstack([_unit(rng.normal(size=D)) for _ in range(T)])
    # partner: a random other topic
    partner = np.array([(t + 1 + rng.integers(T - 1)) % T for t in range(T)])
    core_terms, shared_start, background = _term_layout(cfg)
    # one ambiguous term per topic, also used by the partner's documents
    shared_of = {t: shared_start + t for t in range(T)}
    borrowed: Dict[int, List[int]] = {t: [] for t in range(T)}
    for t in range(T):
        borrowed[int(partner[t])].append(shared_of[t])
    noise_share = min(1.0, cfg.noise_sigma / 4.0)

    def doc_tokens(own: int, other: int = None) -> Tuple[int, ...]:
        toks = []
        for _ in range(cfg.doc_len):
            r = rng.random()
            if background and r < noise_share:
                toks.append(int(rng.choice(background)))
            elif r < noise_share + 0.15:
                pool = [shared_of[own]] + borrowed[own]
                toks.append(int(pool[rng.integers(len(pool))]))
            else:
                src = own if other is None or rng.random() < 0.5 else other
                toks.append(int(rng.choice(core_terms[src])))
        return tuple(toks)

    def dense_vec(mix: np.ndarray, sigma: float) -> VectorRepr:
        noise = rng.normal(size=D) * (sigma / math.sqrt(D))
        return VectorRepr.dense(_unit(mix + noise))

    corpus: List[Document] = []
    doc_topics: Dict[str, Tuple[int, str]] = {}
    n_docs = T * cfg.docs_per_topic + cfg.n_distractors
    width = len(str(n_docs))
    next_id = 0

    def add_doc(tokens, vec, topic, role):
        nonlocal next_id
        did = f"d{next_id:0{width}d}"
        next_id += 1
        corpus.append(Document(did, tokens, vec))
        doc_topics[did] = (topic, role)

    for t in range(T):
        for _ in range(cfg.docs_per_topic):
            toks = doc_tokens(t)
            vec = dense_vec(prototypes[t], cfg.noise_sigma) if cfg.kind == DENSE else lio.encode_sparse(toks, cfg.vocab_size)
            add_doc(toks, vec, t, "on")
    for i in range(cfg.n_distractors):
        t = i % T
        u = int(partner[t])
        toks = doc_tokens(t, u)
        if cfg.kind == DENSE:
            vec = dense_vec(0.5 * prototypes[t] + 0.5 * prototypes[u], cfg.noise_sigma)
        else:
            vec = lio.encode_sparse(toks, cfg.vocab_size)
        add_doc(toks, vec, t, "near")

    n_queries = T * cfg.queries_per_topic
    ambiguous = np.zeros(n_queries, dtype=bool)
    ambiguous[rng.permutation(n_queries)[: int(round(cfg.ambiguity_rate * n_queries))]] = True
    queries: List[Query] = []
    query_topics: Dict[str, Tuple[int, int, bool]] = {}
    qwidth = len(str(n_queries))
    for i in range(n_queries):
        t = i // cfg.queries_per_topic
        u = int(partner[t])
        amb = bool(ambiguous[i])
        own = [int(x) for x in rng.choice(core_terms[t], size=3, replace=False)]
        if amb:
            toks = (own[0], shared_of[t], int(rng.choice(core_terms[u])))
        else:
            toks = tuple(own)
        if cfg.kind == DENSE:
            mix = cfg.ambiguity_mix * prototypes[t] + (1.0 - cfg.ambiguity_mix) * prototypes[u] if amb else prototypes[t]
            vec = dense_vec(mix, cfg.query_noise)
        else:
            vec = lio.encode_sparse(toks, cfg.vocab_size)
        qid = f"q{i:0{qwidth}d}"
        queries.append(Query(qid, toks, vec))
        query_topics[qid] = (t, u, amb)

    grades = {}
    for q in queries:
        t = query_topics[q.query_id][0]
        for did, (topic, role) in doc_topics.items():
            if topic == t:
                grades[(q.query_id, did)] = 2 if role == "on" else 1

    order = rng.permutation(n_queries)
    n_dev = int(round(cfg.dev_fraction * n_queries))
    dev_idx = set(int(i) for i in order[:n_dev])
    train_q = [q for i, q in enumerate(queries) if i not in dev_idx]
    dev_q = [q for i, q in enumerate(queries) if i in dev_idx]
    return SynthDataset(cfg, corpus, train_q, dev_q, RelevanceJudgments(grades), doc_topics, query_topics, prototypes)


def drift_profile(runs, judgments: RelevanceJudgments, depths: Sequence[int], threshold: int = 1) -> Dict[int, float]:
    """Mean fraction of relevant documents among the top ``k``, for each ``k >= 1``."""
    if isinstance(runs, Mapping):
        runs = list(runs.values())
    profile = {}
    for k in sorted(set(depths)):
        if k < 1:
            continue
        fracs = []
        for run in runs:
            if len(run) < k:
                raise ContractViolation(f"run for {run.query_id} is shorter than depth {k}")
            rel = set(judgments.relevant(run.query_id, threshold))
            fracs.append(sum(1 for d in run.doc_ids[:k] if d in rel) / k)
        profile[k] = math.fsum(fracs) / len(fracs) if fracs else 0.0
    return profile


def write_dataset(ds: SynthDataset, out_dir) -> Dict[str, Path]:
    """Write the dataset in the package's file formats; returns the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    vocab = lio.synthetic_vocabulary(ds.config.vocab_size)
    train_ids = {q.query_id for q in ds.train_queries}
    dev_ids = {q.query_id for q in ds.dev_queries}
    paths = {
        "vocab": out / "vocab.tsv",
        "corpus": out / "corpus.tsv",
        "doc_vectors": out / "corpus.vectors",
        "train_queries": out / "queries.train.tsv",
        "train_query_vectors": out / "queries.train.vectors",
        "train_qrels": out / "qrels.train.txt",
        "dev_queries": out / "queries.dev.tsv",
        "dev_query_vectors": out / "queries.dev.vectors",
        "dev_qrels": out / "qrels.dev.txt",
        "topics": out / "topics.tsv",
        "config": out / "synth_config.json",
    }
    lio.write_vocabulary(vocab, paths["vocab"])
    lio.write_corpus(ds.corpus, paths["corpus"], vocab)
    lio.write_vectors([(d.doc_id, d.vector) for d in ds.corpus], paths["doc_vectors"])
    for split, qs, ids in (("train", ds.train_queries, train_ids), ("dev", ds.dev_queries, dev_ids)):
        lio.write_queries(qs, paths[f"{split}_queries"], vocab)
        lio.write_vectors([(q.query_id, q.vector) for q in qs], paths[f"{split}_query_vectors"])
        lio.write_qrels(ds.qrels.subset(ids), paths[f"{split}_qrels"])
    rows = [("doc", d, str(t), role) for d, (t, role) in ds.doc_topics.items()]
    rows += [("query", q, str(t), f"partner={u};ambiguous={int(a)}") for q, (t, u, a) in ds.query_topics.items()]
    lio._write_lines(paths["topics"], ("\t".join(r) for r in rows))
    lio.write_config(asdict(ds.config), paths["config"])
    return paths
