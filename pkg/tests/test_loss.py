import itertools
import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from lolprf.core import ContractViolation, VectorRepr
from lolprf.loss import (cmp, comparative_regularization, loss_coefficients, loss_gradient, reformulation_loss,
                         reweighted_form, softmax_ranking_loss, total_loss)

loss_maps = st.integers(2, 5).flatmap(
    lambda n: st.tuples(
        st.lists(st.integers(0, 9), min_size=n, max_size=n, unique=True),
        st.lists(st.floats(0.0, 10.0), min_size=n, max_size=n, unique=True),
    )
).map(lambda t: dict(zip(t[0], t[1])))


def scores_case(pos_score, neg_scores):
    """Unit-axis docs so each dot score equals the chosen number."""
    n = 1 + len(neg_scores)
    q = VectorRepr.dense(np.ones(n))
    docs = [VectorRepr.dense(np.eye(n)[i] * s) for i, s in enumerate([pos_score, *neg_scores])]
    return q, docs[0], docs[1:]


def test_uniform_scores_give_log_four():
    q, pos, negs = scores_case(0.5, [0.5, 0.5, 0.5])
    loss, _ = reformulation_loss(q, pos, negs)
    assert loss == pytest.approx(math.log(4), abs=1e-12)
    assert loss == pytest.approx(1.386294, abs=1e-6)


def test_hand_computed_loss():
    q, pos, negs = scores_case(2.0, [1.0, 0.0])
    expected = -math.log(math.exp(2) / (math.exp(2) + math.exp(1) + 1))
    loss, _ = reformulation_loss(q, pos, negs)
    assert loss == pytest.approx(expected, abs=1e-12)
    assert loss == pytest.approx(0.40761, abs=1e-5)


def test_loss_vanishes_monotonically_as_positive_dominates():
    values = [reformulation_loss(*scores_case(s, [0.0, 0.0]))[0] for s in (0, 2, 5, 10, 50, 500)]
    assert all(b < a for a, b in zip(values[:-1], values[1:-1]))
    assert values[4] == pytest.approx(2 * math.exp(-50), rel=1e-12)
    assert 0.0 <= values[-1] <= values[-2]


def test_loss_stable_for_large_scores():
    loss, grad = softmax_ranking_loss(np.array([1e3]), np.array([1.0]), np.array([[1.0 - 1e-3], [0.5]]))
    assert math.isfinite(loss) and np.all(np.isfinite(grad))


def test_empty_negatives_rejected():
    q, pos, _ = scores_case(1.0, [0.0])
    with pytest.raises(ContractViolation):
        reformulation_loss(q, pos, [])


def test_reformulation_gradient_matches_finite_differences(rng):
    q = rng.normal(size=7)
    pos = rng.normal(size=7)
    negs = rng.normal(size=(5, 7))
    _, grad = softmax_ranking_loss(q, pos, negs)
    h = 1e-6
    for i in range(7):
        e = np.zeros(7)
        e[i] = h
        fd = (softmax_ranking_loss(q + e, pos, negs)[0] - softmax_ranking_loss(q - e, pos, negs)[0]) / (2 * h)
        assert fd == pytest.approx(grad[i], abs=1e-8)


def test_comparative_examples():
    assert comparative_regularization({1: 0.5, 3: 0.5}) == 0.0
    assert comparative_regularization({1: 0.5, 3: 0.8}) == pytest.approx(0.3, abs=1e-15)
    assert comparative_regularization({1: 0.5, 3: 0.7, 5: 0.4}) == pytest.approx(0.2 / 3, abs=1e-15)
    with pytest.raises(ContractViolation):
        comparative_regularization({1: 0.5})


def test_total_loss_examples():
    b = total_loss({1: 0.5, 3: 0.8}, 0.0)
    assert b.total == pytest.approx(0.65, abs=1e-15)
    b = total_loss({1: 0.5, 3: 0.8}, 1.0)
    assert b.total == pytest.approx(0.95, rel=4e-16)
    assert b.comparative == pytest.approx(0.3, abs=1e-15)
    single = total_loss({2: 0.7}, 5.0)
    assert single.total == 0.7 and single.comparative == 0.0
    with pytest.raises(ContractViolation):
        total_loss({1: 0.5}, -1.0)


def test_cmp_cases():
    assert cmp(3, 1, 0.8, 0.5) == 1
    assert cmp(1, 3, 0.5, 0.8) == -1
    assert cmp(1, 3, 0.5, 0.5) == 0
    assert cmp(3, 1, 0.5, 0.8) == 0
    with pytest.raises(ContractViolation):
        cmp(2, 2, 0.1, 0.2)


def test_reweighted_examples():
    w, total = reweighted_form({1: 0.5, 3: 0.8}, 1.0)
    assert w == {1: -1.0, 3: 3.0}
    assert total == pytest.approx((3 * 0.8 - 0.5) / 2, rel=1e-15)
    w, total = reweighted_form({0: 0.4, 2: 0.4, 5: 0.4}, 2.0)
    assert w == {0: 1.0, 2: 1.0, 5: 1.0} and total == pytest.approx(0.4)
    w, _ = reweighted_form({0: 0.1, 2: 0.9, 5: 0.4}, 0.0)
    assert set(w.values()) == {1.0}


@settings(max_examples=300)
@given(loss_maps, st.floats(0.0, 2.0))
def test_total_equals_reweighted(losses, lam):
    direct = total_loss(losses, lam).total
    _, rew = reweighted_form(losses, lam)
    assert direct == pytest.approx(rew, rel=1e-9, abs=1e-12)


@given(loss_maps, st.floats(0.0, 2.0), st.randoms())
def test_total_loss_ignores_insertion_order(losses, lam, rnd):
    items = list(losses.items())
    rnd.shuffle(items)
    assert total_loss(dict(items), lam).total == total_loss(losses, lam).total


def test_zero_regularization_iff_non_increasing():
    values = [0.9, 0.6, 0.3, 0.1]
    for perm in itertools.permutations(values):
        losses = dict(zip([0, 2, 3, 5], perm))
        non_increasing = all(a >= b for a, b in zip(perm, perm[1:]))
        assert (comparative_regularization(losses) == 0.0) == non_increasing


@settings(max_examples=100)
@given(loss_maps, st.floats(0.0, 2.0))
def test_coefficients_match_finite_differences(losses, lam):
    gaps = sorted(losses.values())
    assume(min(b - a for a, b in zip(gaps, gaps[1:])) > 1e-3)
    coef = loss_coefficients(losses, lam)
    weights, _ = reweighted_form(losses, lam)
    h = 1e-6
    for k in losses:
        up = dict(losses)
        up[k] += h
        down = dict(losses)
        down[k] -= h
        fd = (total_loss(up, lam).total - total_loss(down, lam).total) / (2 * h)
        assert fd == pytest.approx(coef[k], abs=1e-6)
        assert coef[k] == pytest.approx(weights[k] / len(losses), rel=1e-12)


def test_single_active_pair_coefficients():
    coef = loss_coefficients({1: 0.5, 3: 0.8}, 1.0)
    assert coef[3] == pytest.approx(0.5 + 1.0)
    assert coef[1] == pytest.approx(0.5 - 1.0)


def test_tie_has_zero_hinge_subgradient():
    coef = loss_coefficients({1: 0.5, 3: 0.5}, 1.0)
    assert coef == {1: 0.5, 3: 0.5}


def test_loss_gradient_lambda_zero_is_scaled_rf_gradient(rng):
    grads = {1: rng.normal(size=4), 3: rng.normal(size=4)}
    out = loss_gradient(grads, {1: 0.5, 3: 0.8}, 0.0)
    for k in grads:
        assert np.allclose(out[k], grads[k] / 2)


def test_loss_gradient_matches_finite_differences_through_vectors(rng):
    """Perturb the revised query vectors directly and re-evaluate the whole objective."""
    dim = 6
    pos = rng.normal(size=dim)
    negs = rng.normal(size=(8, dim))
    qs = {0: rng.normal(size=dim), 2: rng.normal(size=dim), 4: rng.normal(size=dim)}
    lam = 1.3

    def objective(vectors):
        return total_loss({k: softmax_ranking_loss(v, pos, negs)[0] for k, v in vectors.items()}, lam).total

    per = {k: softmax_ranking_loss(v, pos, negs) for k, v in qs.items()}
    losses = {k: v[0] for k, v in per.items()}
    vals = sorted(losses.values())
    assert min(b - a for a, b in zip(vals, vals[1:])) > 1e-3
    analytic = loss_gradient({k: v[1] for k, v in per.items()}, losses, lam)
    h = 1e-6
    for k in qs:
        for i in range(dim):
            up = {j: v.copy() for j, v in qs.items()}
            down = {j: v.copy() for j, v in qs.items()}
            up[k][i] += h
            down[k][i] -= h
            fd = (objective(up) - objective(down)) / (2 * h)
            assert fd == pytest.approx(analytic[k][i], abs=1e-6)
