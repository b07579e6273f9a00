import logging
import math
from dataclasses import replace

import numpy as np
import pytest

from lolprf.core import ContractViolation, NumericFailure, RankedList, RelevanceJudgments
from lolprf.index import build_matrix
from lolprf.loss import total_loss
from lolprf.optim import AdamWState
from lolprf.reformulator import ReformulatorConfig, init_params
from lolprf.synth import SynthConfig, generate
from lolprf.trainer import (TrainConfig, _batch_pool, _revision_losses, build_data, mine_negatives,
                            per_depth_train_step, prepare_examples, sample_depths, train, train_step)

A = (0, 1, 2, 3, 4, 5)


@pytest.fixture(scope="module")
def setup():
    ds = generate(SynthConfig(n_topics=6, docs_per_topic=8, n_distractors=12, vocab_size=60,
                              queries_per_topic=4, seed=3))
    matrix = build_matrix(ds.corpus)
    tr = build_data(matrix, ds.train_queries, ds.qrels, 30)
    dv = build_data(matrix, ds.dev_queries, ds.qrels, 30)
    mcfg = ReformulatorConfig(kind="dense", input_dim=16, width=8, n_heads=2, ffn_width=16, mlp_width=8)
    examples = prepare_examples(matrix, tr, 5, 16)
    return matrix, tr, dv, mcfg, examples


def small_cfg(**kw):
    base = dict(learning_rate=3e-3, batch_queries=4, revision_budget=4, first_pass_depth=30,
                pool_cap=16, eval_top_n=30)
    base.update(kw)
    return TrainConfig(**base).resolved()


def run(qid, ids):
    return RankedList(qid, [(d, float(-i)) for i, d in enumerate(ids)])


# -- depth sampling ------------------------------------------------------------

def test_full_size_sample_is_the_whole_set(rng):
    assert sample_depths(A, 6, rng) == A


def test_size_one_gives_singleton(rng):
    k = sample_depths(A, 1, rng)
    assert len(k) == 1 and k[0] in A


def test_inclusion_frequency_is_one_third():
    rng = np.random.default_rng(0)
    counts = dict.fromkeys(A, 0)
    for _ in range(10000):
        for k in sample_depths(A, 2, rng):
            counts[k] += 1
    expected = math.comb(5, 1) / math.comb(6, 2)
    for k in A:
        assert abs(counts[k] / 10000 - expected) <= 0.02


def test_sample_is_distinct_sorted_and_seeded():
    a = [sample_depths(A, 3, np.random.default_rng(5)) for _ in range(2)]
    assert a[0] == a[1]
    assert len(set(a[0])) == 3 and list(a[0]) == sorted(a[0])


def test_oversized_sample_rejected(rng):
    with pytest.raises(ContractViolation):
        sample_depths(A, 7, rng)


# -- negative mining -----------------------------------------------------------

def test_all_relevant_gives_empty_pool_and_warning(caplog):
    qrels = RelevanceJudgments({("q", "a"): 1, ("q", "b"): 2})
    with caplog.at_level(logging.WARNING, logger="lolprf.trainer"):
        assert mine_negatives("q", [run("q", ["a", "b"])], qrels, 10) == ()
    assert "no negatives" in caplog.text


def test_disjoint_runs_union():
    got = mine_negatives("q", [run("q", ["a", "b", "c"]), run("q", ["x", "y", "z"])], RelevanceJudgments(), 100)
    assert len(got) == 6
    assert got == ("a", "x", "b", "y", "c", "z")  # rank first, then doc_id


def test_overlapping_runs_match_set_oracle(rng):
    pool = [f"d{i:02d}" for i in range(30)]
    for _ in range(50):
        runs = [run("q", list(rng.choice(pool, size=rng.integers(1, 12), replace=False))) for _ in range(3)]
        rel = set(rng.choice(pool, size=5, replace=False))
        qrels = RelevanceJudgments({("q", d): 1 for d in rel})
        got = mine_negatives("q", runs, qrels, 1000)
        assert len(got) == len(set(got))
        assert set(got) == set().union(*(r.doc_ids for r in runs)) - rel


def test_pool_cap_truncates_deterministically():
    got = mine_negatives("q", [run("q", ["e", "d", "c", "b", "a"])], RelevanceJudgments(), 2)
    assert got == ("e", "d")


def test_foreign_run_rejected():
    with pytest.raises(ContractViolation):
        mine_negatives("q", [run("other", ["a"])], RelevanceJudgments(), 5)


# -- config --------------------------------------------------------------------

def test_epochs_follow_revision_budget():
    assert TrainConfig(k_size=2, revision_budget=12).resolved().epochs == 6
    assert TrainConfig(k_size=1, revision_budget=12).resolved().epochs == 12


def test_variants_force_their_settings():
    no_par = TrainConfig(variant="no_par", k_size=3, lam=2.0).resolved()
    assert (no_par.k_size, no_par.lam) == (1, 0.0)
    no_reg = TrainConfig(variant="no_reg", k_size=2, lam=2.0).resolved()
    assert (no_reg.k_size, no_reg.lam) == (2, 0.0)


@pytest.mark.parametrize("kw", [dict(k_size=7), dict(lam=-1.0), dict(variant="other"),
                                dict(depths=(1, 1, 2)), dict(selection_depth=9)])
def test_invalid_configs_rejected(kw):
    with pytest.raises(ContractViolation):
        TrainConfig(**kw).resolved()


# -- steps ---------------------------------------------------------------------

def test_zero_learning_rate_leaves_params_unchanged(setup):
    matrix, _, _, mcfg, examples = setup
    params = init_params(mcfg, 0)
    new, _, _ = train_step(params, AdamWState(), examples[:4], matrix, small_cfg(learning_rate=0.0),
                           np.random.default_rng(0))
    for name in params.tensors:
        assert np.array_equal(new.tensors[name], params.tensors[name])


def batch_objective(params, batch, matrix, depths, lam):
    pool_ids, pool_rows = _batch_pool(matrix, batch)
    totals = []
    for ex in batch:
        revs = _revision_losses(params, ex, depths, pool_ids, pool_rows, training=False)
        totals.append(total_loss({k: r[0] for k, r in revs.items()}, lam).total)
    return sum(totals) / len(totals)


def test_one_step_lowers_the_batch_loss(setup):
    matrix, _, _, mcfg, examples = setup
    cfg = small_cfg(depths=(1, 3), k_size=2, learning_rate=1e-3)
    params = init_params(mcfg, 0)
    batch = examples[:4]
    before = batch_objective(params, batch, matrix, (1, 3), cfg.lam)
    new, _, _ = train_step(params, AdamWState(), batch, matrix, cfg, np.random.default_rng(0))
    assert batch_objective(new, batch, matrix, (1, 3), cfg.lam) < before


@pytest.mark.parametrize("k", [0, 2, 5])
def test_degenerate_config_equals_single_depth_step(setup, k):
    matrix, _, _, mcfg, examples = setup
    cfg = small_cfg(depths=(k,), k_size=1, lam=0.0)
    params = init_params(mcfg, 1)
    a, sa, _ = train_step(params, AdamWState(), examples[:4], matrix, cfg, np.random.default_rng(0))
    b, sb, _ = per_depth_train_step(params, AdamWState(), examples[:4], matrix, k, cfg)
    for name in params.tensors:
        assert np.array_equal(a.tensors[name], b.tensors[name])
    for name in sa.exp_avg:
        assert np.array_equal(sa.exp_avg[name], sb.exp_avg[name])


def test_regularization_does_not_change_first_forward_pass(setup):
    matrix, _, _, mcfg, examples = setup
    params = init_params(mcfg, 2)
    stats = []
    for variant in ("standard", "no_reg"):
        _, _, s = train_step(params, AdamWState(), examples[:4], matrix, small_cfg(variant=variant),
                             np.random.default_rng(11))
        stats.append(s.per_depth)
    assert stats[0] == stats[1]


def test_large_lambda_shrinks_a_violated_pair(setup):
    matrix, _, _, mcfg, examples = setup
    params = init_params(mcfg, 0)
    cfg = small_cfg(depths=(1, 4), k_size=2, lam=50.0, learning_rate=1e-4)
    found = 0
    for ex in examples:
        pool_ids, pool_rows = _batch_pool(matrix, [ex])
        before = _revision_losses(params, ex, (1, 4), pool_ids, pool_rows, False)
        gap = before[4][0] - before[1][0]
        if gap <= 0:
            continue
        new, _, _ = train_step(params, AdamWState(), [ex], matrix, cfg, np.random.default_rng(0))
        after = _revision_losses(new, ex, (1, 4), pool_ids, pool_rows, False)
        assert after[4][0] - after[1][0] < gap
        found += 1
    assert found > 0


def test_non_finite_activation_aborts_the_step(setup):
    matrix, _, _, mcfg, examples = setup
    params = init_params(mcfg, 0)
    params.tensors["adapter.query.weight"][...] = 1e300
    with np.errstate(all="ignore"), pytest.raises(NumericFailure):
        train_step(params, AdamWState(), examples[:2], matrix, small_cfg(), np.random.default_rng(0))


# -- full training -------------------------------------------------------------

def test_training_is_deterministic(setup):
    matrix, tr, dv, mcfg, _ = setup
    a = train(small_cfg(seed=4), mcfg, matrix, tr, dv)
    b = train(small_cfg(seed=4), mcfg, matrix, tr, dv)
    assert a.log_rows == b.log_rows
    for name in a.final_params.tensors:
        assert np.array_equal(a.final_params.tensors[name], b.final_params.tensors[name])


def test_explicit_lambda_zero_matches_no_reg(setup):
    matrix, tr, dv, mcfg, _ = setup
    a = train(small_cfg(lam=0.0, k_size=2), mcfg, matrix, tr, dv)
    b = train(small_cfg(variant="no_reg", k_size=2), mcfg, matrix, tr, dv)
    assert a.log_rows == b.log_rows


def test_log_shape_budget_and_best_checkpoint(setup):
    matrix, tr, dv, mcfg, examples = setup
    cfg = small_cfg(k_size=2, revision_budget=6)
    seen = []
    res = train(cfg, mcfg, matrix, tr, dv, callback=lambda e, p: seen.append(e))
    assert seen == [1, 2, 3]
    assert len(res.log_rows) == 3 * len(A)
    assert {r["revisions"] for r in res.log_rows} == {len(examples) * 2}
    best_sel = max(r["selection"] for r in res.log_rows)
    assert res.best.dev_mrr_at_10 == best_sel
    assert res.best.epoch == min(r["epoch"] for r in res.log_rows if r["selection"] == best_sel)
    assert len(res.best.fingerprint) == 16


def test_selection_depth_uses_that_column(setup):
    matrix, tr, dv, mcfg, _ = setup
    res = train(small_cfg(selection_depth=3), mcfg, matrix, tr, dv)
    for r in res.log_rows:
        same_epoch = [x for x in res.log_rows if x["epoch"] == r["epoch"] and x["depth"] == 3]
        assert r["selection"] == same_epoch[0]["dev_mrr@10"]


def test_overlapping_splits_rejected(setup):
    matrix, tr, _, mcfg, _ = setup
    with pytest.raises(ContractViolation):
        train(small_cfg(), mcfg, matrix, tr, tr)


def test_model_shallower_than_depths_rejected(setup):
    matrix, tr, dv, mcfg, _ = setup
    with pytest.raises(ContractViolation):
        train(small_cfg(), replace(mcfg, max_depth=3), matrix, tr, dv)
