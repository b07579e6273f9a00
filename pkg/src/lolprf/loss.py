"""Reformulation loss, comparative regularization and their combination.

For one original query revised at several feedback depths ``K``::

    total = mean_k L[k] + lam * mean_{j<k} max(0, L[k] - L[j])

which is equivalently a weighted mean of the per-depth losses where each
weight counts how often a revision beats or loses to its neighbours
(see :func:`reweighted_form`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Dict, Mapping, Sequence, Tuple

import numpy as np

from .core import ContractViolation, VectorRepr


def softmax_ranking_loss(q: np.ndarray, positive: np.ndarray, negatives: np.ndarray) -> Tuple[float, np.ndarray]:
    """Array form of :func:`reformulation_loss`; ``negatives`` has one doc per row."""
    negatives = np.atleast_2d(negatives)
    if negatives.shape[0] == 0:
        raise ContractViolation("reformulation loss needs at least one negative")
    docs = np.vstack([positive[None, :], negatives])
    scores = docs @ q
    shift = scores.max()
    exp = np.exp(scores - shift)
    rest = 0.0
    for e in exp[1:]:  # fixed left-to-right order keeps values reproducible
        rest += e
    denom = exp[0] + rest
    if scores[0] == shift:
        loss = float(math.log1p(rest))
    else:
        loss = float(shift + math.log(denom) - scores[0])
    probs = exp / denom
    grad = probs @ docs - positive
    return loss, grad


def reformulation_loss(q_vec: VectorRepr, positive: VectorRepr, negatives: Sequence[VectorRepr]) -> Tuple[float, np.ndarray]:
    """Softmax cross-entropy of the positive against ``negatives`` under dot scores.

    Returns the loss and its gradient with respect to ``q_vec`` as a dense array.
    """
    if len(negatives) == 0:
        raise ContractViolation("reformulation loss needs at least one negative")
    for v in (positive, *negatives):
        if v.kind != q_vec.kind or v.dim != q_vec.dim:
            raise ContractViolation("reformulation loss inputs must share kind and dim")
    return softmax_ranking_loss(
        q_vec.to_array(), positive.to_array(), np.vstack([v.to_array() for v in negatives])
    )


def _sorted_items(losses: Mapping[int, float]):
    depths = [int(k) for k in losses]
    if len(set(depths)) != len(depths):
        raise ContractViolation("depths must be distinct")
    return sorted((int(k), float(v)) for k, v in losses.items())


def comparative_regularization(losses: Mapping[int, float]) -> float:
    """Mean pairwise hinge penalising deeper revisions with larger loss."""
    items = _sorted_items(losses)
    if len(items) < 2:
        raise ContractViolation("comparative regularization needs at least two depths")
    total = 0.0
    for (j, lj), (k, lk) in combinations(items, 2):
        total += max(0.0, lk - lj)
    return total / math.comb(len(items), 2)


def cmp(k: int, j: int, lk: float, lj: float) -> int:
    """+1 if the shallower ``j`` beat ``k``; -1 if ``k`` beat the deeper ``j``; else 0."""
    if j == k:
        raise ContractViolation("cmp requires two distinct depths")
    if j < k and lj < lk:
        return 1
    if j > k and lj > lk:
        return -1
    return 0


def reweighted_form(losses: Mapping[int, float], lam: float) -> Tuple[Dict[int, float], float]:
    items = _sorted_items(losses)
    n = len(items)
    if n < 2:
        raise ContractViolation("re-weighted form needs at least two depths")
    weights: Dict[int, float] = {}
    for k, lk in items:
        s = sum(cmp(k, j, lk, lj) for j, lj in items if j != k)
        weights[k] = 1.0 + 2.0 * lam * s / (n - 1)
    total = sum(weights[k] * lk for k, lk in items) / n
    return weights, total


@dataclass
class LossBreakdown:
    per_depth: Dict[int, float]
    comparative: float
    lam: float
    total: float
    weights: Dict[int, float] = field(default_factory=dict)

    @property
    def mean_reformulation(self) -> float:
        return sum(self.per_depth.values()) / len(self.per_depth)


def total_loss(losses: Mapping[int, float], lam: float) -> LossBreakdown:
    if lam < 0:
        raise ContractViolation("lambda must be non-negative")
    items = _sorted_items(losses)
    if not items:
        raise ContractViolation("total loss needs at least one depth")
    per_depth = dict(items)
    if len(items) == 1:
        (k, lk), = items
        return LossBreakdown(per_depth, 0.0, lam, lk, {k: 1.0})
    mean = sum(v for _, v in items) / len(items)
    comparative = comparative_regularization(per_depth)
    weights, _ = reweighted_form(per_depth, lam)
    return LossBreakdown(per_depth, comparative, lam, mean + lam * comparative, weights)


def loss_coefficients(losses: Mapping[int, float], lam: float) -> Dict[int, float]:
    """d total / d L[k] for each depth; ties contribute a zero subgradient."""
    items = _sorted_items(losses)
    n = len(items)
    if n == 1:
        return {items[0][0]: 1.0}
    weights, _ = reweighted_form(dict(items), lam)
    return {k: w / n for k, w in weights.items()}


def loss_gradient(per_depth_grads: Mapping[int, np.ndarray], losses: Mapping[int, float], lam: float) -> Dict[int, np.ndarray]:
    """Gradient of the total objective with respect to each revised query vector.

    ``per_depth_grads[k]`` is dL[k]/dq[k] from :func:`reformulation_loss`.
    """
    coef = loss_coefficients(losses, lam)
    return {k: coef[k] * np.asarray(per_depth_grads[k]) for k in coef}
