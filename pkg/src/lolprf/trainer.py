"""Training loop for the learned reformulator.

Each epoch samples a set of feedback depths per query, revises the query at
every sampled depth in the same batch, and optimises the mean reformulation
loss plus ``lam`` times the comparative regularization over those revisions.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .core import ContractViolation, NumericFailure, Query, RankedList, RelevanceJudgments
from .evaluation import mrr_at_k
from .index import DocumentMatrix
from .loss import loss_coefficients, softmax_ranking_loss, total_loss
from .optim import AdamWState, adamw_update
from .prf import first_pass_runs, second_pass_runs
from .reformulator import (ReformulatorConfig, ReformulatorParams, backward, init_params,
                           reformulate_arrays)

log = logging.getLogger(__name__)

VARIANTS = ("standard", "no_reg", "no_par")


@dataclass(frozen=True)
class TrainConfig:
    depths: Tuple[int, ...] = (0, 1, 2, 3, 4, 5)
    k_size: int = 2
    lam: float = 1.0
    learning_rate: float = 1e-4
    batch_queries: int = 8
    revision_budget: int = 12
    seed: int = 0
    variant: str = "standard"
    weight_decay: float = 0.01
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    first_pass_depth: int = 100
    pool_cap: int = 64
    eval_top_n: int = 100
    selection_depth: Optional[int] = None  # None: mean dev MRR@10 over all depths

    def resolved(self) -> "TrainConfig":
        """Apply variant overrides and check invariants."""
        if self.variant not in VARIANTS:
            raise ContractViolation(f"unknown variant {self.variant!r}")
        cfg = self
        if self.variant == "no_par":
            cfg = replace(cfg, k_size=1, lam=0.0)
        elif self.variant == "no_reg":
            cfg = replace(cfg, lam=0.0)
        depths = tuple(sorted(set(int(k) for k in cfg.depths)))
        if len(depths) != len(cfg.depths) or not depths or depths[0] < 0:
            raise ContractViolation("depths must be distinct non-negative integers")
        cfg = replace(cfg, depths=depths, betas=tuple(cfg.betas))
        if not 1 <= cfg.k_size <= len(depths):
            raise ContractViolation(f"k_size={cfg.k_size} must be in [1, {len(depths)}]")
        if cfg.lam < 0:
            raise ContractViolation("lambda must be non-negative")
        if cfg.batch_queries <= 0 or cfg.revision_budget <= 0:
            raise ContractViolation("batch_queries and revision_budget must be positive")
        if cfg.first_pass_depth < max(depths):
            raise ContractViolation("first_pass_depth must cover the deepest feedback depth")
        if cfg.selection_depth is not None and cfg.selection_depth not in depths:
            raise ContractViolation("selection_depth must be one of the depths")
        return cfg

    @property
    def epochs(self) -> int:
        return self.revision_budget // self.k_size

    def to_dict(self) -> dict:
        d = asdict(self)
        d["depths"] = list(self.depths)
        d["betas"] = list(self.betas)
        return d


@dataclass
class PRFData:
    """A query split with everything training or evaluation needs."""

    queries: List[Query]
    qrels: RelevanceJudgments
    first_pass: Dict[str, RankedList]


@dataclass
class Example:
    query: Query
    positive: str
    relevant: frozenset
    negatives: Tuple[str, ...]
    feedback: np.ndarray  # (max depth, dim) top-ranked doc arrays


@dataclass
class StepStats:
    per_depth: Dict[int, List[float]] = field(default_factory=dict)
    comparative: List[float] = field(default_factory=list)
    totals: List[float] = field(default_factory=list)
    n_revisions: int = 0


@dataclass
class Checkpoint:
    params: ReformulatorParams
    epoch: int
    dev_mrr_at_10: float
    fingerprint: str


@dataclass
class TrainResult:
    best: Checkpoint
    final_params: ReformulatorParams
    log_rows: List[dict]


def config_fingerprint(train_cfg: TrainConfig, model_cfg: ReformulatorConfig) -> str:
    blob = json.dumps({"train": train_cfg.to_dict(), "model": asdict(model_cfg)}, sort_keys=True)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def sample_depths(depths: Sequence[int], size: int, rng: np.random.Generator) -> Tuple[int, ...]:
    """Uniform size-subset of ``depths`` without replacement, sorted."""
    if size > len(depths) or size < 1:
        raise ContractViolation(f"cannot sample {size} distinct depths from {len(depths)}")
    picked = rng.choice(len(depths), size=size, replace=False)
    return tuple(sorted(depths[i] for i in picked))


def mine_negatives(query_id: str, runs: Sequence[RankedList], judgments: RelevanceJudgments,
                   pool_cap: int) -> Tuple[str, ...]:
    """Union of the runs' retrieved ids minus judged-relevant ones.

    Ordered by best rank across runs, then doc_id, and truncated to ``pool_cap``.
    """
    relevant = set(judgments.relevant(query_id))
    best_rank: Dict[str, int] = {}
    for run in runs:
        if run.query_id != query_id:
            raise ContractViolation(f"run for {run.query_id} passed while mining for {query_id}")
        for rank, doc_id in enumerate(run.doc_ids):
            if doc_id not in relevant and rank < best_rank.get(doc_id, math.inf):
                best_rank[doc_id] = rank
    mined = sorted(best_rank, key=lambda d: (best_rank[d], d))[:pool_cap]
    if not mined:
        log.warning("no negatives mined for query %s; skipping it", query_id)
    return tuple(mined)


def prepare_examples(matrix: DocumentMatrix, data: PRFData, max_depth: int, pool_cap: int) -> List[Example]:
    examples = []
    for q in data.queries:
        relevant = [d for d in data.qrels.relevant(q.query_id) if d in matrix]
        if not relevant:
            log.warning("query %s has no relevant document in the corpus; skipping it", q.query_id)
            continue
        run = data.first_pass[q.query_id]
        if len(run) < max_depth:
            raise ContractViolation(f"first-pass run for {q.query_id} is shorter than depth {max_depth}")
        negatives = mine_negatives(q.query_id, [run], data.qrels, pool_cap)
        if not negatives:
            continue
        examples.append(Example(q, relevant[0], frozenset(relevant), negatives,
                                matrix.dense_rows(run.doc_ids[:max_depth])))
    return examples


def _batch_pool(matrix: DocumentMatrix, batch: Sequence[Example]):
    ids = set()
    for ex in batch:
        ids.update(ex.negatives)
        ids.add(ex.positive)
    ordered = sorted(ids, key=matrix.row_index)
    return ordered, matrix.dense_rows(ordered)


def _revision_losses(params, ex: Example, depths, pool_ids, pool_rows, training: bool):
    """Per-depth (loss, dL/dq, tape) for one query against the pool."""
    pos_idx = pool_ids.index(ex.positive)
    neg_mask = np.array([d not in ex.relevant for d in pool_ids])
    positive = pool_rows[pos_idx]
    negatives = pool_rows[neg_mask]
    out = {}
    q = ex.query.vector.to_array()
    for k in depths:
        vec, tape = reformulate_arrays(params, q, ex.feedback[:k], training=training)
        loss, grad = softmax_ranking_loss(vec, positive, negatives)
        if not math.isfinite(loss):
            raise NumericFailure(f"non-finite reformulation loss for query {ex.query.query_id} at depth {k}")
        out[k] = (loss, grad, tape)
    return out


def _accumulate(acc: Dict[str, np.ndarray], grads: Dict[str, np.ndarray]) -> None:
    for name, g in grads.items():
        acc[name] += g


def train_step(params: ReformulatorParams, opt_state: AdamWState, batch: Sequence[Example],
               matrix: DocumentMatrix, config: TrainConfig, rng: np.random.Generator):
    """One optimiser update on ``batch``. Returns ``(params, opt_state, stats)``."""
    pool_ids, pool_rows = _batch_pool(matrix, batch)
    acc = {name: np.zeros_like(v) for name, v in params.tensors.items()}
    stats = StepStats()
    n = len(batch)
    for ex in batch:
        depths = sample_depths(config.depths, config.k_size, rng)
        revs = _revision_losses(params, ex, depths, pool_ids, pool_rows, training=True)
        losses = {k: r[0] for k, r in revs.items()}
        breakdown = total_loss(losses, config.lam)
        coef = loss_coefficients(losses, config.lam)
        for k in depths:
            _, grad, tape = revs[k]
            _accumulate(acc, backward(tape, coef[k] * grad / n).params)
            stats.per_depth.setdefault(k, []).append(losses[k])
        if len(depths) > 1:
            stats.comparative.append(breakdown.comparative)
        stats.totals.append(breakdown.total)
        stats.n_revisions += len(depths)
    new, opt_state = adamw_update(params.tensors, acc, opt_state, config.learning_rate,
                                  config.betas, config.eps, config.weight_decay)
    return ReformulatorParams(params.config, new), opt_state, stats


def per_depth_train_step(params: ReformulatorParams, opt_state: AdamWState, batch: Sequence[Example],
                         matrix: DocumentMatrix, depth: int, config: TrainConfig):
    """Single-depth training step (one revision per query, no regularization)."""
    pool_ids, pool_rows = _batch_pool(matrix, batch)
    acc = {name: np.zeros_like(v) for name, v in params.tensors.items()}
    stats = StepStats()
    n = len(batch)
    for ex in batch:
        loss, grad, tape = _revision_losses(params, ex, (depth,), pool_ids, pool_rows, training=True)[depth]
        _accumulate(acc, backward(tape, grad / n).params)
        stats.per_depth.setdefault(depth, []).append(loss)
        stats.totals.append(loss)
        stats.n_revisions += 1
    new, opt_state = adamw_update(params.tensors, acc, opt_state, config.learning_rate,
                                  config.betas, config.eps, config.weight_decay)
    return ReformulatorParams(params.config, new), opt_state, stats


def query_depth_losses(params: ReformulatorParams, matrix: DocumentMatrix, examples: Sequence[Example],
                       depths: Sequence[int]) -> Dict[str, Dict[int, float]]:
    """Reformulation loss of every example at every depth, each against its own negatives."""
    out = {}
    for ex in examples:
        pool_ids, pool_rows = _batch_pool(matrix, [ex])
        revs = _revision_losses(params, ex, depths, pool_ids, pool_rows, training=False)
        out[ex.query.query_id] = {k: r[0] for k, r in revs.items()}
    return out


def dev_mrr_by_depth(params: ReformulatorParams, matrix: DocumentMatrix, dev: PRFData,
                     depths: Sequence[int], top_n: int) -> Dict[int, float]:
    out = {}
    for k in depths:
        runs = second_pass_runs(params, matrix, dev.queries, dev.first_pass, k, top_n)
        out[k] = mrr_at_k(runs, dev.qrels, 10).mean
    return out


def _mean(xs) -> float:
    return math.fsum(xs) / len(xs) if xs else math.nan


def train(config: TrainConfig, model_config: ReformulatorConfig, matrix: DocumentMatrix,
          train_data: PRFData, dev_data: PRFData,
          callback: Optional[Callable[[int, ReformulatorParams], None]] = None,
          params: Optional[ReformulatorParams] = None) -> TrainResult:
    """Train for ``revision_budget // k_size`` epochs, keeping the best dev checkpoint."""
    cfg = config.resolved()
    if model_config.max_depth < max(cfg.depths):
        raise ContractViolation("model max_depth is smaller than the deepest training depth")
    overlap = {q.query_id for q in train_data.queries} & {q.query_id for q in dev_data.queries}
    if overlap:
        raise ContractViolation(f"train and dev share queries: {sorted(overlap)[:5]}")
    fingerprint = config_fingerprint(cfg, model_config)
    rng = np.random.default_rng(cfg.seed)
    if params is None:
        params = init_params(model_config, cfg.seed)
    examples = prepare_examples(matrix, train_data, max(cfg.depths), cfg.pool_cap)
    if not examples:
        raise ContractViolation("no usable training queries")
    opt_state = AdamWState()
    best: Optional[Checkpoint] = None
    rows: List[dict] = []
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(examples))
        epoch_losses: Dict[int, List[float]] = {}
        epoch_cr: List[float] = []
        n_revisions = 0
        for start in range(0, len(order), cfg.batch_queries):
            batch = [examples[i] for i in order[start:start + cfg.batch_queries]]
            params, opt_state, stats = train_step(params, opt_state, batch, matrix, cfg, rng)
            for k, v in stats.per_depth.items():
                epoch_losses.setdefault(k, []).extend(v)
            epoch_cr.extend(stats.comparative)
            n_revisions += stats.n_revisions
        dev_mrr = dev_mrr_by_depth(params, matrix, dev_data, cfg.depths, cfg.eval_top_n)
        if cfg.selection_depth is None:
            selection = math.fsum(dev_mrr.values()) / len(dev_mrr)
        else:
            selection = dev_mrr[cfg.selection_depth]
        lcr = _mean(epoch_cr) if cfg.k_size > 1 else 0.0
        for k in cfg.depths:
            rows.append({
                "epoch": epoch, "depth": k, "dev_mrr@10": dev_mrr[k],
                "train_loss": _mean(epoch_losses.get(k, [])), "train_lcr": lcr,
                "selection": selection, "revisions": n_revisions,
            })
        log.info("epoch %d: selection dev MRR@10 %.4f, L_cr %.4f", epoch, selection, lcr)
        if best is None or selection > best.dev_mrr_at_10:
            best = Checkpoint(params.copy(), epoch, selection, fingerprint)
        if callback is not None:
            callback(epoch, params)
    return TrainResult(best, params, rows)


def build_data(matrix: DocumentMatrix, queries: Sequence[Query], qrels: RelevanceJudgments,
               first_pass_depth: int, first_pass: Optional[Dict[str, RankedList]] = None) -> PRFData:
    queries = list(queries)
    if first_pass is None:
        first_pass = first_pass_runs(matrix, queries, first_pass_depth)
    missing = [q.query_id for q in queries if q.query_id not in first_pass]
    if missing:
        raise ContractViolation(f"no first-pass run for queries {missing[:5]}")
    return PRFData(queries, qrels.subset(q.query_id for q in queries), first_pass)
