"""Ranking metrics, robustness index and paired significance testing."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Union

from .core import ContractViolation, RankedList, RelevanceJudgments

Runs = Union[Mapping[str, RankedList], Iterable[RankedList]]


@dataclass
class MetricResult:
    name: str
    cutoff: int
    per_query: Dict[str, float]
    mean: float
    n_excluded: int = 0


@dataclass
class RobustnessReport:
    n_improved: int
    n_degraded: int
    n_total: int
    ri: float
    per_query_delta: Dict[str, float]


def _as_runs(runs: Runs) -> Dict[str, RankedList]:
    if isinstance(runs, Mapping):
        return dict(runs)
    out = {}
    for r in runs:
        if r.query_id in out:
            raise ContractViolation(f"two ranked lists for query {r.query_id}")
        out[r.query_id] = r
    return out


def _result(name: str, cutoff: int, per_query: Dict[str, float], excluded: int) -> MetricResult:
    ordered = {q: per_query[q] for q in sorted(per_query)}
    mean = math.fsum(ordered.values()) / len(ordered) if ordered else 0.0
    return MetricResult(name, cutoff, ordered, mean, excluded)


def mrr_at_k(runs: Runs, judgments: RelevanceJudgments, cutoff: int = 10, threshold: int = 1) -> MetricResult:
    per_query, excluded = {}, 0
    for qid, run in sorted(_as_runs(runs).items()):
        relevant = set(judgments.relevant(qid, threshold))
        if not relevant:
            excluded += 1
            continue
        score = 0.0
        for rank, doc_id in enumerate(run.doc_ids[:cutoff], start=1):
            if doc_id in relevant:
                score = 1.0 / rank
                break
        per_query[qid] = score
    return _result(f"mrr@{cutoff}", cutoff, per_query, excluded)


def ndcg_at_k(runs: Runs, judgments: RelevanceJudgments, cutoff: int = 10) -> MetricResult:
    """Gain ``2**grade - 1``, discount ``log2(rank + 1)``."""
    per_query, excluded = {}, 0
    for qid, run in sorted(_as_runs(runs).items()):
        grades = judgments.judged(qid)
        ideal_grades = sorted((g for g in grades.values() if g > 0), reverse=True)[:cutoff]
        if not ideal_grades:
            excluded += 1
            continue
        ideal = sum((2 ** g - 1) / math.log2(i + 2) for i, g in enumerate(ideal_grades))
        dcg = sum((2 ** grades.get(d, 0) - 1) / math.log2(i + 2) for i, d in enumerate(run.doc_ids[:cutoff]))
        per_query[qid] = dcg / ideal
    return _result(f"ndcg@{cutoff}", cutoff, per_query, excluded)


def recall_at_k(runs: Runs, judgments: RelevanceJudgments, cutoff: int = 1000, graded_mode: bool = False) -> MetricResult:
    """In graded mode a document needs grade >= 2 to count as relevant."""
    threshold = 2 if graded_mode else 1
    per_query, excluded = {}, 0
    for qid, run in sorted(_as_runs(runs).items()):
        relevant = set(judgments.relevant(qid, threshold))
        if not relevant:
            excluded += 1
            continue
        per_query[qid] = len(relevant.intersection(run.doc_ids[:cutoff])) / len(relevant)
    return _result(f"recall@{cutoff}", cutoff, per_query, excluded)


def robustness_index(candidate: Mapping[str, float], reference: Mapping[str, float]) -> RobustnessReport:
    if set(candidate) != set(reference):
        raise ContractViolation("robustness index needs the same query set on both sides")
    if not candidate:
        raise ContractViolation("robustness index over an empty query set")
    delta = {q: candidate[q] - reference[q] for q in sorted(candidate)}
    up = sum(1 for q in delta if candidate[q] > reference[q])
    down = sum(1 for q in delta if candidate[q] < reference[q])
    return RobustnessReport(up, down, len(delta), (up - down) / len(delta), delta)


# -- paired t-test -------------------------------------------------------------

def _betacf(a: float, b: float, x: float, max_iter: int = 300, tol: float = 1e-15) -> float:
    """Continued fraction for the incomplete beta function (modified Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = tiny if abs(d) < tiny else d
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < tol:
            return h
    raise ArithmeticError("incomplete beta continued fraction did not converge")


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must lie in [0, 1]")
    if x in (0.0, 1.0):
        return x
    log_front = math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b) + a * math.log(x) + b * math.log1p(-x)
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_two_sided_p(t: float, df: float) -> float:
    """P(|T| >= |t|) for Student's t with ``df`` degrees of freedom."""
    return regularized_incomplete_beta(df / 2.0, 0.5, df / (df + t * t))


@dataclass
class TTestResult:
    t: float
    p_value: float
    df: int
    degenerate: bool = False


def paired_t_test(a: Union[Mapping[str, float], Sequence[float]], b: Union[Mapping[str, float], Sequence[float]]) -> TTestResult:
    if isinstance(a, Mapping) or isinstance(b, Mapping):
        if set(a) != set(b):
            raise ContractViolation("paired t-test needs the same query set on both sides")
        keys = sorted(a)
        xs, ys = [a[k] for k in keys], [b[k] for k in keys]
    else:
        xs, ys = list(a), list(b)
        if len(xs) != len(ys):
            raise ContractViolation("paired t-test needs equal-length samples")
    n = len(xs)
    if n < 2:
        raise ContractViolation("paired t-test needs at least two pairs")
    diffs = [x - y for x, y in zip(xs, ys)]
    mean = math.fsum(diffs) / n
    var = math.fsum((d - mean) ** 2 for d in diffs) / (n - 1)
    if var == 0.0:
        return TTestResult(math.nan, math.nan, n - 1, degenerate=True)
    t = mean / math.sqrt(var / n)
    return TTestResult(t, t_two_sided_p(t, n - 1), n - 1)


# -- per-depth sweep -------------------------------------------------------------

@dataclass
class DepthSweep:
    depths: List[int]
    metrics: Dict[int, Dict[str, MetricResult]]
    base: Dict[str, MetricResult]
    ri_vs_base: Dict[int, RobustnessReport]
    ri_vs_previous: Dict[int, Optional[RobustnessReport]]
    runs: Dict[int, Dict[str, RankedList]] = field(repr=False, default_factory=dict)

    def rows(self) -> List[dict]:
        out = []
        for k in self.depths:
            m = self.metrics[k]
            prev = self.ri_vs_previous[k]
            out.append({
                "depth": k,
                "mrr@10": m["mrr@10"].mean,
                "ndcg@10": m["ndcg@10"].mean,
                "recall": m["recall"].mean,
                "ri_vs_base": self.ri_vs_base[k].ri,
                "ri_vs_prev": None if prev is None else prev.ri,
            })
        return out


def _all_metrics(runs, judgments, recall_cutoff: int, graded_recall: bool) -> Dict[str, MetricResult]:
    return {
        "mrr@10": mrr_at_k(runs, judgments, 10),
        "ndcg@10": ndcg_at_k(runs, judgments, 10),
        "recall": recall_at_k(runs, judgments, recall_cutoff, graded_recall),
    }


def depth_sweep(params, queries, matrix, first_pass_runs, judgments: RelevanceJudgments,
                depths: Sequence[int], top_n: int = 1000, ri_metric: str = "mrr@10",
                graded_recall: bool = False) -> DepthSweep:
    """Revise every query at each depth, re-retrieve and score.

    RI compares each depth against the first-pass run and against depth ``k - 1``
    using the per-query values of ``ri_metric``.
    """
    from .prf import second_pass_runs

    depths = sorted(set(depths))
    base_runs = {q.query_id: first_pass_runs[q.query_id] for q in queries}
    base = _all_metrics(base_runs, judgments, top_n, graded_recall)
    metrics, runs = {}, {}
    for k in depths:
        runs[k] = second_pass_runs(params, matrix, queries, first_pass_runs, k, top_n)
        metrics[k] = _all_metrics(runs[k], judgments, top_n, graded_recall)
    ri_base, ri_prev = {}, {}
    for k in depths:
        ri_base[k] = robustness_index(metrics[k][ri_metric].per_query, base[ri_metric].per_query)
        if k - 1 in metrics:
            ri_prev[k] = robustness_index(metrics[k][ri_metric].per_query, metrics[k - 1][ri_metric].per_query)
        else:
            ri_prev[k] = None
    return DepthSweep(depths, metrics, base, ri_base, ri_prev, runs)
